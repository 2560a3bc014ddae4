import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padland.control import CascadeGains, CascadeState, PidGains, PidState, cascade_step, clamp_velocity, pid_step
from padland.dynamics import GRAVITY, DroneParams, RigidBodyState, body_wrench, step_dynamics

DT = 0.002
P = DroneParams()
G = CascadeGains()


def closed_loop(cmd, seconds, start=(0.0, 0.0, 1.0)):
    """Velocity history of the reference cascade flying ``cmd`` from hover."""
    s = RigidBodyState.at_rest(start)
    c = CascadeState.zeros()
    out = []
    for _ in range(int(round(seconds / DT))):
        m, c = cascade_step(s, cmd, c, DT, P, G)
        s = step_dynamics(s, m, P, DT)
        out.append(s.velocity.copy())
    return np.array(out)


# ---------------------------------------------------------------- pid_step


def test_pid_zero_error_is_identity():
    out, st1 = pid_step(PidGains(2.0, 1.0, 0.5), PidState(), 0.0, 0.01)
    assert out == 0.0
    assert st1.integrator == 0.0 and st1.prev_error == 0.0


def test_pid_proportional_only():
    out, _ = pid_step(PidGains(2.5), PidState(), 0.4, 0.01)
    assert out == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("limit,integ,out", [(1.0, 0.2, 1.4), (0.1, 0.1, 1.1)])
def test_pi_accumulates_by_hand(limit, integ, out):
    # kp=2, ki=3, e=0.4, dt=0.1 for five steps: integral 5*0.4*0.1 = 0.2 before clamping
    g = PidGains(2.0, 3.0, 0.0, integrator_limit=limit)
    s = PidState()
    for _ in range(5):
        y, s = pid_step(g, s, 0.4, 0.1)
    assert s.integrator == pytest.approx(integ, abs=1e-12)
    assert y == pytest.approx(out, abs=1e-12)


def test_pid_derivative_acts_on_error_difference():
    g = PidGains(0.0, 0.0, 2.0)
    _, s = pid_step(g, PidState(), 0.1, 0.1)
    y, _ = pid_step(g, s, 0.6, 0.1)
    assert y == pytest.approx(2.0 * 0.5 / 0.1, abs=1e-12)


def test_pid_output_clamped():
    y, _ = pid_step(PidGains(100.0, output_limit=3.0), PidState(), -1.0, 0.01)
    assert y == -3.0


def test_pid_rejects_bad_input():
    with pytest.raises(ValueError):
        pid_step(PidGains(1.0), PidState(), math.nan, 0.01)
    with pytest.raises(ValueError):
        pid_step(PidGains(1.0), PidState(), 1.0, 0.0)


def test_pid_gain_validation():
    with pytest.raises(ValueError):
        PidGains(-1.0)
    with pytest.raises(ValueError):
        PidGains(1.0, output_limit=0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(0.01, 5.0))
def test_anti_windup_never_exceeds_limit(errors, limit):
    g = PidGains(1.0, 2.0, 0.1, output_limit=10.0, integrator_limit=limit)
    s = PidState()
    for e in errors:
        y, s = pid_step(g, s, e, 0.01)
        assert abs(s.integrator) <= limit
        assert abs(y) <= 10.0


# ---------------------------------------------------------------- cascade_step


def test_hover_command_gives_hover_thrust():
    m, _ = cascade_step(RigidBodyState.at_rest([0, 0, 1]), np.zeros(3), CascadeState.zeros(), DT, P, G)
    assert np.allclose(m.thrusts, P.mass * GRAVITY / 4, atol=1e-12)
    assert np.allclose(body_wrench(m.thrusts, P)[1:], 0.0, atol=1e-15)


def test_climb_command_raises_collective():
    m, _ = cascade_step(RigidBodyState.at_rest([0, 0, 1]), [0, 0, 0.5], CascadeState.zeros(), DT, P, G)
    assert m.thrusts.sum() > P.mass * GRAVITY


def test_step_command_settles_in_band():
    v = closed_loop([0.5, 0.0, 0.0], 5.0)
    t = np.arange(1, len(v) + 1) * DT
    after = v[t >= 3.0, 0]
    assert np.all((after >= 0.475) & (after <= 0.525))


def test_velocity_command_clamped_to_max_speed():
    assert np.array_equal(clamp_velocity([2.0, -3.0, 0.5], 1.0), [1.0, -1.0, 0.5])


def test_tilt_setpoint_clamped():
    # a huge lateral demand must not tilt past the configured limit
    s = RigidBodyState.at_rest([0, 0, 1])
    c = CascadeState.zeros()
    worst = 0.0
    for _ in range(1500):
        m, c = cascade_step(s, [1.0, 1.0, 0.0], c, DT, P, G)
        s = step_dynamics(s, m, P, DT)
        z = s.attitude
        tilt = math.degrees(math.acos(min(1.0, 1 - 2 * (z[1] ** 2 + z[2] ** 2))))
        worst = max(worst, tilt)
    assert worst < G.max_tilt_deg + 5.0


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
    st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3),
    st.lists(st.floats(-0.4, 0.4), min_size=3, max_size=3),
)
def test_motor_commands_within_limits(vel, cmd, euler):
    from padland.dynamics import euler_to_quat

    s = RigidBodyState.at_rest([0, 0, 1])
    s.velocity = np.array(vel)
    s.attitude = euler_to_quat(*euler)
    m, _ = cascade_step(s, cmd, CascadeState.zeros(), DT, P, G)
    assert np.all((m.thrusts >= 0.0) & (m.thrusts <= P.max_thrust))


@settings(max_examples=12, deadline=None)
@given(st.floats(0.1, 0.5), st.floats(0, 2 * math.pi), st.floats(-1.0, 1.0))
def test_tracks_any_slow_command(speed, azimuth, elev):
    d = np.array([math.cos(azimuth), math.sin(azimuth), elev])
    cmd = speed * d / np.linalg.norm(d)
    v = closed_loop(cmd, 3.0, start=(0.0, 0.0, 3.0))
    assert np.linalg.norm(v[-1] - cmd) < 0.05 * speed


def test_batched_cascade_matches_single():
    single = RigidBodyState.at_rest([0, 0, 1])
    batch = RigidBodyState.at_rest([[0, 0, 1], [0, 0, 1]])
    cs, cb = CascadeState.zeros(), CascadeState.zeros(2)
    for _ in range(200):
        ms, cs = cascade_step(single, [0.3, -0.2, 0.1], cs, DT, P, G)
        mb, cb = cascade_step(batch, [[0.3, -0.2, 0.1], [0.3, -0.2, 0.1]], cb, DT, P, G)
        single = step_dynamics(single, ms, P, DT)
        batch = step_dynamics(batch, mb, P, DT)
    assert np.allclose(batch.position[0], single.position, atol=1e-12)
