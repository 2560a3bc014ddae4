import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from padland.env import (
    LEFT_PAD,
    RIGHT_PAD,
    EpisodeConfig,
    Scenario,
    Trapezoid,
    assign_pads,
    detect_touchdown,
    env_step,
    landing_shift,
    observations,
    relocate_platform,
    reset,
    run_episode,
    summarize,
    trial_outcomes,
    trial_returns,
)
from padland.fastsim import DECK_CRASH, FLYING, FlightBatch
from padland.rl.core import discounted_return

CFG = EpisodeConfig()
FOOT = 0.02


def scripted_pilot(obs):
    """Centre over the pad first, then sink slowly; obs[:, :3] is landing point minus drone."""
    d = np.asarray(obs)[:, :3]
    out = np.zeros_like(d)
    out[:, :2] = np.clip(1.5 * d[:, :2], -0.5, 0.5)
    centred = np.linalg.norm(d[:, :2], axis=1) < 0.01
    out[:, 2] = np.where(centred, np.clip(d[:, 2], -0.08, 0.5), np.clip(d[:, 2] + 0.3, -0.5, 0.5))
    return out


def drop_pilot(obs):
    out = np.zeros((len(obs), 3))
    out[:, 2] = -0.3
    return out


@pytest.fixture(scope="module")
def even_episode():
    return run_episode(Scenario.EVEN_STATIC, CFG, 11, scripted_pilot)


# ---------------------------------------------------------------- reset


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_even_reset_is_level(seed):
    w = reset(Scenario.EVEN_STATIC, CFG, seed)
    assert w.valid and w.tilt_deg < 1e-9
    z = w.pad_centres[:, 2]
    assert z[0] == pytest.approx(z[1], abs=1e-12)
    assert z[0] == pytest.approx(reset(Scenario.EVEN_STATIC, CFG, seed + 10).pad_centres[0, 2], abs=1e-12)


def test_uneven_reset_is_deterministic():
    a, b = reset(Scenario.UNEVEN_STATIC, CFG, 5), reset(Scenario.UNEVEN_STATIC, CFG, 5)
    assert np.array_equal(a.terrain.heights, b.terrain.heights)
    assert np.array_equal(a.pad_centres, b.pad_centres)
    assert np.array_equal(a.drones.pos, b.drones.pos)
    assert not np.array_equal(a.block_heights, reset(Scenario.UNEVEN_STATIC, CFG, 6).block_heights)


@pytest.mark.parametrize("seed", range(8))
def test_uneven_reset_is_nearly_level(seed):
    w = reset(Scenario.UNEVEN_STATIC, CFG, seed)
    assert w.valid and w.tilt_deg < 2.0


def test_drones_start_on_floor_with_spacing():
    w = reset(Scenario.EVEN_STATIC, CFG, 0)
    assert np.allclose(w.drones.pos[:, 2], FOOT)
    gap = abs(w.drones.pos[0, 1] - w.drones.pos[1, 1])
    assert abs(gap - CFG.spacing) <= 2 * CFG.start_jitter
    assert np.all(np.abs(w.drones.pos[:, 0] + CFG.start_distance) <= CFG.start_jitter)


def test_failed_stabilisation_marks_world_invalid():
    cfg = EpisodeConfig(max_step=0.3)
    worlds = [reset(Scenario.UNEVEN_STATIC, cfg, s) for s in range(6)]
    bad = [w for w in worlds if not w.valid]
    assert bad and all("stabilisation" in w.reason for w in bad)
    res = run_episode(Scenario.UNEVEN_STATIC, cfg, bad[0].seed, scripted_pilot)
    assert not res.valid and {r["phase"] for r in res.rows} == {"invalid"}


# ---------------------------------------------------------------- env_step


def hovering_world(z=1.0):
    w = reset(Scenario.EVEN_STATIC, CFG, 0)
    pos = w.home.copy()
    pos[:, 2] = z
    w.drones = FlightBatch.at_rest(pos)
    w.phase = "land"
    return w, pos


def test_zero_actions_hold_position():
    w, start = hovering_world()
    for _ in range(10):
        _, _, done, _ = env_step(w, np.zeros((2, 3)))
        assert not done.any()
    assert np.max(np.linalg.norm(w.drones.pos - start, axis=1)) < 0.05
    assert w.t == pytest.approx(1.0)


def test_env_step_rejects_bad_calls():
    w, _ = hovering_world()
    with pytest.raises(Exception, match="non-finite"):
        env_step(w, np.full((2, 3), np.nan))
    w.phase = "takeoff"
    with pytest.raises(Exception, match="phase"):
        env_step(w, np.zeros((2, 3)))


def test_descent_onto_pad_lands(even_episode):
    assert even_episode.valid
    assert [o.status for o in even_episode.outcomes] == ["touchdown", "touchdown"]
    assert all(o.landed_on_pad for o in even_episode.outcomes)
    assert max(o.shift_cm for o in even_episode.outcomes) < 2.0


def test_floor_contact_is_not_a_landing():
    res = run_episode(Scenario.EVEN_STATIC, CFG, 3, drop_pilot)
    assert [o.status for o in res.outcomes] == ["crash", "crash"]
    assert not any(o.landed_on_pad for o in res.outcomes)


# ---------------------------------------------------------------- touchdown and shift


def test_touchdown_examples():
    pad = np.array([0.0, 0.0, 0.5])
    assert not detect_touchdown(pad + [0, 0, 1.0], np.zeros(3), pad)
    assert detect_touchdown(pad, np.zeros(3), pad)
    assert not detect_touchdown(pad, [0, 0, -0.5], pad)
    assert not detect_touchdown(pad, [0.2, 0, 0], pad)
    assert detect_touchdown(pad + [0, 0, FOOT], np.zeros(3), pad, foot_height=FOOT)


def test_touchdown_on_tilted_pad_uses_normal():
    n = np.array([math.sin(0.03), 0.0, math.cos(0.03)])
    assert detect_touchdown(0.005 * n, np.zeros(3), np.zeros(3), n)
    assert not detect_touchdown(0.02 * n, np.zeros(3), np.zeros(3), n)


def test_landing_shift_examples():
    c = np.array([1.0, 2.0, 0.3])
    assert landing_shift(c, c) == 0.0
    assert landing_shift(c + [0.03, 0.04, 0.0], c) == pytest.approx(5.0, abs=1e-12)
    assert landing_shift(c + [0.1, 0.0, 0.02], c) == pytest.approx(10.0, abs=1e-12)


def test_landing_shift_measured_in_pad_plane():
    n = np.array([0.0, math.sin(0.2), math.cos(0.2)])
    along = np.array([0.0, math.cos(0.2), -math.sin(0.2)])
    assert landing_shift(0.05 * along + 0.01 * n, np.zeros(3), n) == pytest.approx(5.0, abs=1e-12)


# ---------------------------------------------------------------- pad assignment


def test_crossed_assignment():
    # the right drone (lower y) lands on the left pad
    assert list(assign_pads([-0.375, 0.375])) == [LEFT_PAD, RIGHT_PAD]
    assert list(assign_pads([-0.375, 0.375], crossed=False)) == [RIGHT_PAD, LEFT_PAD]


@given(st.floats(-2, 2), st.floats(-2, 2), st.booleans())
def test_assignment_is_a_bijection(y0, y1, crossed):
    assert sorted(assign_pads([y0, y1], crossed)) == [0, 1]


# ---------------------------------------------------------------- relocation


def test_trapezoid_one_metre():
    p = Trapezoid(1.0, 0.1, 0.05)
    assert p.duration >= 10.0
    assert p.duration == pytest.approx(12.0)
    assert p.sample(p.duration + 1.0) == (1.0, 0.0, 0.0)
    speeds = [p.sample(t)[1] for t in np.linspace(0, p.duration, 500)]
    assert max(speeds) <= 0.1 + 1e-12


def test_trapezoid_short_path_is_triangular():
    p = Trapezoid(0.1, 0.1, 0.05)
    s, v, _ = p.sample(p.duration / 2)
    assert s == pytest.approx(0.05) and v < 0.1


def relocating_world(start=(1.0, 0.0)):
    cfg = EpisodeConfig(relocation_start=start, terrain_half=1.5, max_step=0.0)
    w = reset(Scenario.RELOCATE, cfg, 0)
    w.phase = "relocate"
    return w


def test_relocation_halts_after_profile():
    w = relocating_world()
    dt, t, moving_obs = 0.05, 0.0, None
    while w.phase == "relocate":
        relocate_platform(w, dt)
        t += dt
        assert np.linalg.norm(w.pad_vel) <= 0.1 + 1e-12
        if moving_obs is None and np.linalg.norm(w.pad_vel) > 0.05:
            moving_obs = observations(w)
    assert t >= 10.0
    assert np.array_equal(w.pad_vel, np.zeros(3))
    assert w.platform.xy == (0.0, 0.0)
    assert np.all(np.abs(moving_obs[:, 3]) > 0.05)


def test_zero_length_relocation_equals_uneven():
    cfg = EpisodeConfig(relocation_start=(0.0, 0.0))
    a, b = reset(Scenario.RELOCATE, cfg, 4), reset(Scenario.UNEVEN_STATIC, cfg, 4)
    assert a.path.duration == 0.0
    assert np.array_equal(a.pad_centres, b.pad_centres)
    assert np.array_equal(a.terrain.heights, b.terrain.heights)


def test_no_touchdown_accepted_during_relocation():
    w = relocating_world()
    relocate_platform(w, 1.0)
    pad = w.pad_centres[w.pads[0]]
    pos = w.drones.pos.copy()
    pos[0] = pad + [0.0, 0.0, FOOT + 0.003]
    w.drones = FlightBatch.at_rest(pos)
    w.kernel.run(w.drones, np.array([[0.0, 0.0, -0.05], [0, 0, 0]]), 100, deck=w.deck(),
                 floor=np.zeros(2), support=np.full(2, -np.inf), allow=np.zeros(2, dtype=bool))
    assert w.drones.status[0] == DECK_CRASH


def test_relocate_episode_has_phases_in_order():
    cfg = EpisodeConfig(relocation_start=(0.1, 0.0))
    res = run_episode(Scenario.RELOCATE, cfg, 2, scripted_pilot)
    phases = [r["phase"] for r in res.rows if r["drone"] == 0]
    order = [p for i, p in enumerate(phases) if i == 0 or p != phases[i - 1]]
    assert order[:4] == ["takeoff", "relocate", "settle", "land"]
    assert order[-2:] == ["pad", "touchdown"]


# ---------------------------------------------------------------- telemetry


def test_reward_telemetry_matches_discounted_return(even_episode):
    gamma = 0.99
    logged = trial_returns(even_episode.rows, gamma)
    for k in range(2):
        rs = [r["reward"] for r in even_episode.rows if r["phase"] == "land" and r["drone"] == k]
        assert logged[(0, k)] == pytest.approx(discounted_return(rs, gamma), abs=1e-9)


def test_landed_flag_matches_shift(even_episode):
    for o in trial_outcomes(even_episode.rows, CFG.pad_radius)[0]:
        assert o.shift_cm >= 0
        assert o.landed_on_pad == (o.status == "touchdown" and o.shift_cm <= 100 * CFG.pad_radius)


def test_episode_is_deterministic(even_episode):
    again = run_episode(Scenario.EVEN_STATIC, CFG, 11, scripted_pilot)
    assert again.rows == even_episode.rows


def test_summary_from_rows(even_episode):
    s = summarize(even_episode.rows, CFG.pad_radius, 0.99)
    assert s["trials"] == 1 and s["drones"] == 2
    assert s["success_rate"] == 1.0
    assert s["mean_shift_cm"] == pytest.approx(np.mean([o.shift_cm for o in even_episode.outcomes]))


def test_observation_is_zero_when_resting_on_pad():
    w = reset(Scenario.UNEVEN_STATIC, CFG, 1)
    pos = w.pad_centres[w.pads] + FOOT * w.pad_normal
    w.drones = FlightBatch.at_rest(pos)
    assert np.allclose(observations(w)[:, :3], 0.0, atol=1e-15)
