"""Fixed-timestep rigid-body model of an X-configuration micro-quadrotor.

All functions accept either a single vehicle (vectors of shape ``(3,)``,
quaternions of shape ``(4,)``) or a batch (leading axis ``N``). Quaternions
are scalar-first ``(w, x, y, z)`` and rotate body vectors into the world
frame. World ``z`` points up.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

GRAVITY = 9.81
MAX_DT = 0.005

Array = NDArray[np.float64]


class NonFiniteStateError(ValueError):
    """Raised when a NaN or infinity reaches the integrator."""


@dataclass(frozen=True)
class DroneParams:
    """Physical constants of one quadrotor (Crazyflie-class defaults).

    ``arm`` is the lateral offset of every rotor from both body axes, so a
    roll torque ``tau`` needs a left/right thrust difference of
    ``tau / (2 * arm)`` per motor. ``foot_height`` is how far the landing
    feet sit below the centre of mass; contact gaps are measured from them.
    """

    mass: float = 0.03
    inertia: tuple[float, float, float] = (1.4e-5, 1.4e-5, 2.2e-5)
    arm: float = 0.046
    max_thrust: float = 0.15
    yaw_coeff: float = 0.006
    drag: float = 0.01
    foot_height: float = 0.02

    def __post_init__(self) -> None:
        if self.foot_height < 0:
            raise ValueError("foot height must be non-negative")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if min(self.inertia) <= 0:
            raise ValueError("inertia components must be positive")
        if self.arm <= 0:
            raise ValueError("arm must be positive")
        if 4 * self.max_thrust <= self.mass * GRAVITY:
            raise ValueError("four motors at max thrust cannot lift the airframe")

    @property
    def hover_thrust(self) -> float:
        return self.mass * GRAVITY


@dataclass
class RigidBodyState:
    position: Array = field(default_factory=lambda: np.zeros(3))
    velocity: Array = field(default_factory=lambda: np.zeros(3))
    acceleration: Array = field(default_factory=lambda: np.zeros(3))
    attitude: Array = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    rates: Array = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def at_rest(cls, position, n: int | None = None) -> "RigidBodyState":
        """Level, motionless state(s) at ``position`` (shape (3,) or (n, 3))."""
        pos = np.array(position, dtype=float)
        if n is not None:
            pos = np.broadcast_to(pos, (n, 3)).copy()
        lead = pos.shape[:-1]
        quat = np.zeros(lead + (4,))
        quat[..., 0] = 1.0
        return cls(pos, np.zeros_like(pos), np.zeros_like(pos), quat, np.zeros_like(pos))

    def copy(self) -> "RigidBodyState":
        return RigidBodyState(
            self.position.copy(),
            self.velocity.copy(),
            self.acceleration.copy(),
            self.attitude.copy(),
            self.rates.copy(),
        )

    def select(self, idx) -> "RigidBodyState":
        return RigidBodyState(
            self.position[idx],
            self.velocity[idx],
            self.acceleration[idx],
            self.attitude[idx],
            self.rates[idx],
        )

    @property
    def kinematics(self) -> Array:
        """Stacked ``[x, y, z, vx, vy, vz, ax, ay, az]`` linear state."""
        return np.concatenate([self.position, self.velocity, self.acceleration], axis=-1)


@dataclass
class MotorCommand:
    thrusts: Array
    saturated: NDArray[np.bool_] | bool = False


def quat_multiply(p: Array, q: Array) -> Array:
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: Array) -> Array:
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def body_z_axis(q: Array) -> Array:
    """Third column of the rotation matrix (thrust direction in world)."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)], axis=-1)


def quat_to_euler(q: Array) -> Array:
    """ZYX Euler angles ``(roll, pitch, yaw)``."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.stack([roll, pitch, yaw], axis=-1)


def euler_to_quat(roll, pitch, yaw) -> Array:
    cr, sr = np.cos(np.multiply(roll, 0.5)), np.sin(np.multiply(roll, 0.5))
    cp, sp = np.cos(np.multiply(pitch, 0.5)), np.sin(np.multiply(pitch, 0.5))
    cy, sy = np.cos(np.multiply(yaw, 0.5)), np.sin(np.multiply(yaw, 0.5))
    return np.stack(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ],
        axis=-1,
    )


def _mixer(params: DroneParams) -> Array:
    # rows: total thrust, roll, pitch, yaw; motors: FR, BR, BL, FL
    d, c = params.arm, params.yaw_coeff
    return np.array(
        [
            [1.0, 1.0, 1.0, 1.0],
            [-d, -d, d, d],
            [-d, d, d, -d],
            [-c, c, -c, c],
        ]
    )


def motor_mix(total_thrust, body_torques, params: DroneParams) -> MotorCommand:
    """Split collective thrust and body torques into four rotor thrusts.

    Thrusts are clamped to ``[0, max_thrust]``; any clamping sets the
    ``saturated`` flag (never an error).
    """
    total = np.asarray(total_thrust, dtype=float)
    torques = np.asarray(body_torques, dtype=float)
    wrench = np.concatenate([total[..., None], torques], axis=-1)
    raw = wrench @ np.linalg.inv(_mixer(params)).T
    clipped = np.clip(raw, 0.0, params.max_thrust)
    saturated = np.any(np.abs(clipped - raw) > 1e-15, axis=-1)
    return MotorCommand(clipped, saturated)


def body_wrench(thrusts: Array, params: DroneParams) -> Array:
    """``(total, tau_x, tau_y, tau_z)`` produced by four rotor thrusts."""
    return np.asarray(thrusts, dtype=float) @ _mixer(params).T


def _check_finite(*arrays: Array) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteStateError("non-finite value in dynamics input")


def step_dynamics(
    state: RigidBodyState, cmd: MotorCommand | Array, params: DroneParams, dt: float
) -> RigidBodyState:
    """Advance one step: velocities first, then poses from the updated rates.

    Positions move by the mean of the old and new velocity, so a constant
    acceleration (free fall, steady climb) is integrated without error.
    """
    if not (0.0 < dt <= MAX_DT):
        raise ValueError(f"dt must be in (0, {MAX_DT}], got {dt}")
    thrusts = cmd.thrusts if isinstance(cmd, MotorCommand) else np.asarray(cmd, dtype=float)
    _check_finite(state.position, state.velocity, state.attitude, state.rates, thrusts)
    thrusts = np.clip(thrusts, 0.0, params.max_thrust)

    wrench = body_wrench(thrusts, params)
    total, torque = wrench[..., 0], wrench[..., 1:]

    accel = body_z_axis(state.attitude) * (total / params.mass)[..., None]
    accel = accel - (params.drag / params.mass) * state.velocity
    accel[..., 2] -= GRAVITY

    inertia = np.asarray(params.inertia)
    w = state.rates
    gyro = np.cross(w, w * inertia)
    rates = w + dt * (torque - gyro) / inertia

    velocity = state.velocity + dt * accel
    # mean of old and new velocity: exact under constant acceleration
    position = state.position + 0.5 * dt * (state.velocity + velocity)

    half = 0.5 * dt * rates
    angle = np.linalg.norm(half, axis=-1, keepdims=True)
    sinc = np.where(angle > 1e-12, np.sin(angle) / np.where(angle > 0, angle, 1.0), 1.0)
    delta = np.concatenate([np.cos(angle), half * sinc], axis=-1)
    attitude = quat_multiply(state.attitude, delta)
    attitude = attitude / np.linalg.norm(attitude, axis=-1, keepdims=True)

    return RigidBodyState(position, velocity, accel, attitude, rates)


def with_position(state: RigidBodyState, position) -> RigidBodyState:
    return replace(state, position=np.asarray(position, dtype=float))
