import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padland.dynamics import (
    GRAVITY,
    DroneParams,
    NonFiniteStateError,
    RigidBodyState,
    body_wrench,
    euler_to_quat,
    motor_mix,
    quat_to_euler,
    quat_to_matrix,
    step_dynamics,
)

DT = 0.002
P = DroneParams()
NO_DRAG = DroneParams(drag=0.0)


def run(state, thrusts, params, dt, steps):
    for _ in range(steps):
        state = step_dynamics(state, thrusts, params, dt)
    return state


# ---------------------------------------------------------------- step_dynamics examples


def test_hover_is_a_fixed_point():
    s0 = RigidBodyState.at_rest([0.3, -0.2, 1.0])
    s1 = step_dynamics(s0, np.full(4, P.mass * GRAVITY / 4), P, DT)
    assert np.max(np.abs(s1.position - s0.position)) < 1e-12
    assert np.max(np.abs(s1.velocity)) < 1e-12
    assert np.max(np.abs(s1.acceleration)) < 1e-12
    assert np.max(np.abs(s1.rates)) < 1e-12


def test_free_fall_matches_parabola():
    s = run(RigidBodyState.at_rest([0, 0, 0]), np.zeros(4), NO_DRAG, DT, 500)
    assert abs(s.position[2] - (-0.5 * GRAVITY)) < 1e-3
    assert abs(s.velocity[2] - (-GRAVITY)) < 1e-9
    assert abs(s.acceleration[2] + GRAVITY) < 1e-12


def test_constant_thrust_climb_velocity():
    total = 0.4
    t = 0.8
    s = run(RigidBodyState.at_rest([0, 0, 0]), np.full(4, total / 4), NO_DRAG, DT, int(round(t / DT)))
    assert abs(s.velocity[2] - (total / NO_DRAG.mass - GRAVITY) * t) < 1e-3


def test_halving_dt_at_least_halves_free_fall_error():
    def error(dt):
        s = run(RigidBodyState.at_rest([0, 0, 0]), np.zeros(4), NO_DRAG, dt, int(round(1.0 / dt)))
        return abs(s.position[2] + 0.5 * GRAVITY)

    assert error(0.001) <= error(0.002) / 2 + 1e-12


def test_drag_fall_converges_first_order():
    # closed form for dv/dt = -g - k v from rest
    k = P.drag / P.mass

    def error(dt):
        s = run(RigidBodyState.at_rest([0, 0, 0]), np.zeros(4), P, dt, int(round(1.0 / dt)))
        exact = -(GRAVITY / k) + (GRAVITY / k**2) * (1 - math.exp(-k))
        return abs(s.position[2] - exact)

    e1, e2 = error(0.004), error(0.002)
    assert e2 < 2e-3
    assert 1.9 < e1 / e2 < 2.1


def test_quaternion_norm_holds_while_tumbling():
    s = RigidBodyState.at_rest([0, 0, 5])
    s.rates = np.array([7.0, -3.0, 11.0])
    thrusts = np.full(4, 0.05)
    worst = 0.0
    for _ in range(20_000):
        s = step_dynamics(s, thrusts, P, DT)
        worst = max(worst, abs(np.linalg.norm(s.attitude) - 1.0))
    assert worst < 1e-9


def test_tilted_thrust_accelerates_sideways():
    # pitch up about body y tilts thrust toward +x
    s = RigidBodyState.at_rest([0, 0, 1])
    s.attitude = euler_to_quat(0.0, 0.2, 0.0)
    s1 = step_dynamics(s, np.full(4, P.mass * GRAVITY / 4), NO_DRAG, DT)
    assert s1.acceleration[0] == pytest.approx(GRAVITY * math.sin(0.2), rel=1e-12)


def test_acceleration_is_net_specific_force():
    s = RigidBodyState.at_rest([0, 0, 1])
    s.velocity = np.array([0.5, 0.0, -0.2])
    thrusts = np.full(4, 0.08)
    s1 = step_dynamics(s, thrusts, P, DT)
    expect = np.array([0, 0, 0.32 / P.mass - GRAVITY]) - (P.drag / P.mass) * s.velocity
    assert np.allclose(s1.acceleration, expect, atol=1e-12)


def test_thrust_is_clamped():
    s = RigidBodyState.at_rest([0, 0, 1])
    a = step_dynamics(s, np.full(4, 10.0), NO_DRAG, DT)
    b = step_dynamics(s, np.full(4, P.max_thrust), NO_DRAG, DT)
    assert np.array_equal(a.velocity, b.velocity)


def test_deterministic_and_batched_matches_single():
    rng = np.random.default_rng(3)
    cmds = rng.uniform(0, P.max_thrust, (200, 4))
    single = [RigidBodyState.at_rest([0, 0, 1]), RigidBodyState.at_rest([1, 0, 1])]
    batch = RigidBodyState.at_rest([[0, 0, 1], [1, 0, 1]])
    again = RigidBodyState.at_rest([0, 0, 1])
    for c in cmds:
        single = [step_dynamics(s, c, P, DT) for s in single]
        batch = step_dynamics(batch, np.stack([c, c]), P, DT)
        again = step_dynamics(again, c, P, DT)
    assert np.array_equal(single[0].position, again.position)
    assert np.allclose(batch.position[1], single[1].position, atol=1e-12)


@pytest.mark.parametrize("bad", ["position", "velocity", "attitude", "rates"])
def test_non_finite_state_rejected(bad):
    s = RigidBodyState.at_rest([0, 0, 1])
    getattr(s, bad)[0] = np.nan
    with pytest.raises(NonFiniteStateError):
        step_dynamics(s, np.zeros(4), P, DT)


def test_non_finite_command_rejected():
    with pytest.raises(NonFiniteStateError):
        step_dynamics(RigidBodyState.at_rest([0, 0, 1]), np.array([0, np.inf, 0, 0]), P, DT)


@pytest.mark.parametrize("dt", [0.0, -0.001, 0.0051])
def test_dt_out_of_range_rejected(dt):
    with pytest.raises(ValueError):
        step_dynamics(RigidBodyState.at_rest([0, 0, 1]), np.zeros(4), P, dt)


@pytest.mark.parametrize(
    "kw", [{"mass": 0.0}, {"inertia": (1e-5, 0.0, 1e-5)}, {"max_thrust": 0.05}, {"arm": 0.0}, {"foot_height": -0.01}]
)
def test_params_validation(kw):
    with pytest.raises(ValueError):
        DroneParams(**kw)


# ---------------------------------------------------------------- motor_mix examples


def test_mix_hover_splits_evenly():
    cmd = motor_mix(P.mass * GRAVITY, np.zeros(3), P)
    assert np.allclose(cmd.thrusts, P.mass * GRAVITY / 4, atol=1e-15)
    assert not cmd.saturated


def test_mix_pure_roll_splits_left_and_right():
    tau = 1e-3
    t = motor_mix(P.mass * GRAVITY, np.array([tau, 0.0, 0.0]), P).thrusts
    # motors FR, BR, BL, FL: the left pair is BL and FL
    right, left = t[[0, 1]], t[[2, 3]]
    assert np.allclose(left - right, tau / (2 * P.arm), atol=1e-14)
    assert t.sum() == pytest.approx(P.mass * GRAVITY, abs=1e-14)


def test_mix_zero():
    cmd = motor_mix(0.0, np.zeros(3), P)
    assert np.array_equal(cmd.thrusts, np.zeros(4))
    assert not cmd.saturated


def test_mix_saturation_flagged_not_raised():
    cmd = motor_mix(1.0, np.zeros(3), P)
    assert cmd.saturated
    assert np.all(cmd.thrusts <= P.max_thrust)


@settings(max_examples=200, deadline=None)
@given(
    total=st.floats(0.05, 0.55),
    tx=st.floats(-2e-4, 2e-4),
    ty=st.floats(-2e-4, 2e-4),
    tz=st.floats(-1e-4, 1e-4),
)
def test_mix_reproduces_wrench_when_unsaturated(total, tx, ty, tz):
    cmd = motor_mix(total, np.array([tx, ty, tz]), P)
    assert np.all((cmd.thrusts >= 0) & (cmd.thrusts <= P.max_thrust))
    if not cmd.saturated:
        assert np.allclose(body_wrench(cmd.thrusts, P), [total, tx, ty, tz], atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1.2, 1.2), st.floats(-1.2, 1.2), st.floats(-3.0, 3.0))
def test_euler_round_trip(roll, pitch, yaw):
    q = euler_to_quat(roll, pitch, yaw)
    assert np.allclose(quat_to_euler(q), [roll, pitch, yaw], atol=1e-9)
    r = quat_to_matrix(q)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
