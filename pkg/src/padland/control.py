"""Velocity -> attitude -> body-rate PID cascade feeding the motor mixer.

The three loops run at one rate (the physics rate). Yaw is always held at
zero. Every function works on a single drone or a batch with a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    GRAVITY,
    DroneParams,
    MotorCommand,
    RigidBodyState,
    body_z_axis,
    motor_mix,
    quat_to_euler,
)


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    output_limit: float = np.inf
    integrator_limit: float = np.inf

    def __post_init__(self) -> None:
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be non-negative")
        if self.output_limit <= 0 or self.integrator_limit <= 0:
            raise ValueError("PID limits must be positive")


@dataclass
class PidState:
    integrator: np.ndarray | float = 0.0
    prev_error: np.ndarray | float = 0.0


def pid_step(gains: PidGains, state: PidState, error, dt: float):
    """One PID update. Returns ``(output, new_state)``; ``state`` is untouched.

    The integrator is clamped to ``integrator_limit`` (anti-windup) and the
    derivative acts on the error difference.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    error = np.asarray(error, dtype=float)
    if not np.all(np.isfinite(error)):
        raise ValueError("non-finite PID error")
    integ = np.clip(state.integrator + error * dt, -gains.integrator_limit, gains.integrator_limit)
    deriv = (error - state.prev_error) / dt
    out = gains.kp * error + gains.ki * integ + gains.kd * deriv
    out = np.clip(out, -gains.output_limit, gains.output_limit)
    if out.ndim == 0:
        return float(out), PidState(float(integ), float(error))
    return out, PidState(integ, error)


@dataclass(frozen=True)
class CascadeGains:
    """Shipped defaults were tuned once against the velocity-tracking check.

    Velocity gains are in (m/s^2) per (m/s); attitude gains in (rad/s) per
    rad; rate gains in (rad/s^2) per (rad/s), scaled by inertia into torque.
    """

    velocity_xy: PidGains = PidGains(kp=4.0, ki=2.0, kd=0.0, output_limit=4.0, integrator_limit=1.0)
    velocity_z: PidGains = PidGains(kp=6.0, ki=3.0, kd=0.0, output_limit=6.0, integrator_limit=1.0)
    attitude: PidGains = PidGains(kp=10.0, ki=0.0, kd=0.0, output_limit=6.0, integrator_limit=1.0)
    attitude_yaw: PidGains = PidGains(kp=4.0, ki=0.0, kd=0.0, output_limit=3.0, integrator_limit=1.0)
    rate: PidGains = PidGains(kp=60.0, ki=0.0, kd=0.0, output_limit=2000.0, integrator_limit=1.0)
    rate_yaw: PidGains = PidGains(kp=20.0, ki=0.0, kd=0.0, output_limit=400.0, integrator_limit=1.0)
    max_speed: float = 1.0
    max_tilt_deg: float = 20.0


@dataclass
class CascadeState:
    velocity: PidState = field(default_factory=PidState)
    attitude: PidState = field(default_factory=PidState)
    rate: PidState = field(default_factory=PidState)

    @classmethod
    def zeros(cls, n: int | None = None) -> "CascadeState":
        shape = (3,) if n is None else (n, 3)
        return cls(*(PidState(np.zeros(shape), np.zeros(shape)) for _ in range(3)))


def clamp_velocity(cmd, max_speed: float) -> np.ndarray:
    return np.clip(np.asarray(cmd, dtype=float), -max_speed, max_speed)


def _axis_pid(gxy: PidGains, gz: PidGains, state: PidState, err, dt):
    """Apply separate gains to the first two and the last component."""
    out_xy, st_xy = pid_step(gxy, PidState(state.integrator[..., :2], state.prev_error[..., :2]), err[..., :2], dt)
    out_z, st_z = pid_step(gz, PidState(state.integrator[..., 2:], state.prev_error[..., 2:]), err[..., 2:], dt)
    out = np.concatenate([np.atleast_1d(out_xy), np.atleast_1d(out_z)], axis=-1)
    integ = np.concatenate([np.atleast_1d(st_xy.integrator), np.atleast_1d(st_z.integrator)], axis=-1)
    prev = np.concatenate([np.atleast_1d(st_xy.prev_error), np.atleast_1d(st_z.prev_error)], axis=-1)
    return out, PidState(integ, prev)


def cascade_step(
    drone: RigidBodyState,
    cmd,
    state: CascadeState,
    dt: float,
    params: DroneParams,
    gains: CascadeGains = CascadeGains(),
) -> tuple[MotorCommand, CascadeState]:
    """Turn a velocity setpoint into four motor thrusts.

    Returns the motor command and the updated cascade state.
    """
    vel_cmd = clamp_velocity(cmd, gains.max_speed)

    acc_des, vel_state = _axis_pid(gains.velocity_xy, gains.velocity_z, state.velocity, vel_cmd - drone.velocity, dt)

    # desired thrust vector (specific force) with drag feed-through left to the integrator
    f = acc_des.copy()
    f[..., 2] += GRAVITY
    f[..., 2] = np.maximum(f[..., 2], 0.1 * GRAVITY)
    max_tilt = np.radians(gains.max_tilt_deg)
    pitch_des = np.clip(np.arctan2(f[..., 0], f[..., 2]), -max_tilt, max_tilt)
    roll_des = np.clip(np.arctan2(-f[..., 1], np.hypot(f[..., 0], f[..., 2])), -max_tilt, max_tilt)

    z_axis = body_z_axis(drone.attitude)
    collective = params.mass * np.sum(f * z_axis, axis=-1)
    collective = np.clip(collective, 0.0, 4.0 * params.max_thrust)

    euler = quat_to_euler(drone.attitude)
    att_err = np.stack([roll_des - euler[..., 0], pitch_des - euler[..., 1], -euler[..., 2]], axis=-1)
    rate_des, att_state = _axis_pid(gains.attitude, gains.attitude_yaw, state.attitude, att_err, dt)

    ang_acc, rate_state = _axis_pid(gains.rate, gains.rate_yaw, state.rate, rate_des - drone.rates, dt)
    torques = ang_acc * np.asarray(params.inertia)

    return motor_mix(collective, torques, params), CascadeState(vel_state, att_state, rate_state)
