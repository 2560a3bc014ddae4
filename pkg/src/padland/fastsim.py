"""Compiled inner loop: cascade + rigid-body step + contact events.

Mirrors :func:`padland.control.cascade_step` followed by
:func:`padland.dynamics.step_dynamics` for a batch of drones, checking for
deck touchdown, hard deck impact and floor contact after every substep.
The numpy versions stay the reference; tests pin the two together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .control import CascadeGains, PidGains
from .dynamics import GRAVITY, DroneParams, _mixer

FLYING, TOUCHDOWN, DECK_CRASH, FLOOR_CRASH = 0, 1, 2, 3

# touchdown thresholds
GAP_TOL = 0.01
DESCENT_TOL = 0.1
LATERAL_TOL = 0.1
# deck contact slower than this is absorbed by the legs; faster is a crash
IMPACT_TOL = 0.3
# penetration deeper than this means the drone is under the deck, inside the body
DECK_SKIN = 0.02


def _gain_row(g: PidGains) -> list[float]:
    return [g.kp, g.ki, g.kd, g.output_limit, g.integrator_limit]


def pack_gains(gains: CascadeGains) -> np.ndarray:
    """Rows: vel_xy, vel_z, att, att_yaw, rate, rate_yaw; last row limits."""
    rows = [
        _gain_row(gains.velocity_xy),
        _gain_row(gains.velocity_z),
        _gain_row(gains.attitude),
        _gain_row(gains.attitude_yaw),
        _gain_row(gains.rate),
        _gain_row(gains.rate_yaw),
        [gains.max_speed, math.radians(gains.max_tilt_deg), 0.0, 0.0, 0.0],
    ]
    return np.array(rows, dtype=float)


def pack_params(params: DroneParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scal = np.array([params.mass, params.max_thrust, params.drag, *params.inertia, params.foot_height])
    mix = _mixer(params)
    return scal, mix, np.linalg.inv(mix)


@dataclass
class FlightBatch:
    """Struct-of-arrays state for ``n`` drones and their cascade memories."""

    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    quat: np.ndarray
    rates: np.ndarray
    pid: np.ndarray  # (n, 3 loops, 2 [integrator, prev error], 3 axes)
    status: np.ndarray
    event_pos: np.ndarray

    @classmethod
    def at_rest(cls, positions) -> "FlightBatch":
        pos = np.array(positions, dtype=float).reshape(-1, 3)
        n = len(pos)
        quat = np.zeros((n, 4))
        quat[:, 0] = 1.0
        return cls(pos, np.zeros((n, 3)), np.zeros((n, 3)), quat, np.zeros((n, 3)),
                   np.zeros((n, 3, 2, 3)), np.zeros(n, dtype=np.int64), np.zeros((n, 3)))

    def __len__(self) -> int:
        return len(self.pos)


@numba.njit(cache=True)
def _pid(g, integ, prev, err, dt):
    i = integ + err * dt
    if i > g[4]:
        i = g[4]
    elif i < -g[4]:
        i = -g[4]
    out = g[0] * err + g[1] * i + g[2] * ((err - prev) / dt)
    if out > g[3]:
        out = g[3]
    elif out < -g[3]:
        out = -g[3]
    return out, i


@numba.njit(cache=True)
def _clip(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


@numba.njit(cache=True)
def _substep(k, pos, vel, acc, quat, rates, pid, cmd, dt, scal, mix, inv_mix, gains, support):
    mass, tmax, drag = scal[0], scal[1], scal[2]
    max_speed, max_tilt = gains[6, 0], gains[6, 1]
    w, x, y, z = quat[k, 0], quat[k, 1], quat[k, 2], quat[k, 3]

    # velocity loop
    f = np.empty(3)
    for a in range(3):
        vc = _clip(cmd[k, a], -max_speed, max_speed)
        err = vc - vel[k, a]
        g = gains[0] if a < 2 else gains[1]
        out, pid[k, 0, 0, a] = _pid(g, pid[k, 0, 0, a], pid[k, 0, 1, a], err, dt)
        pid[k, 0, 1, a] = err
        f[a] = out
    f[2] += GRAVITY
    f[2] = max(f[2], 0.1 * GRAVITY)
    pitch_des = _clip(math.atan2(f[0], f[2]), -max_tilt, max_tilt)
    roll_des = _clip(math.atan2(-f[1], math.hypot(f[0], f[2])), -max_tilt, max_tilt)

    bz0 = 2 * (x * z + w * y)
    bz1 = 2 * (y * z - w * x)
    bz2 = 1 - 2 * (x * x + y * y)
    collective = mass * (f[0] * bz0 + f[1] * bz1 + f[2] * bz2)
    collective = _clip(collective, 0.0, 4.0 * tmax)

    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = math.asin(_clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    att_err = (roll_des - roll, pitch_des - pitch, -yaw)

    wrench = np.empty(4)
    wrench[0] = collective
    for a in range(3):
        g = gains[2] if a < 2 else gains[3]
        rate_des, pid[k, 1, 0, a] = _pid(g, pid[k, 1, 0, a], pid[k, 1, 1, a], att_err[a], dt)
        pid[k, 1, 1, a] = att_err[a]
        err = rate_des - rates[k, a]
        g = gains[4] if a < 2 else gains[5]
        ang, pid[k, 2, 0, a] = _pid(g, pid[k, 2, 0, a], pid[k, 2, 1, a], err, dt)
        pid[k, 2, 1, a] = err
        wrench[1 + a] = ang * scal[3 + a]

    # motor mixing with clamping
    thrust = np.empty(4)
    for m in range(4):
        s = 0.0
        for j in range(4):
            s += wrench[j] * inv_mix[m, j]
        thrust[m] = _clip(s, 0.0, tmax)

    # rigid body
    total = 0.0
    tau = np.zeros(3)
    for m in range(4):
        total += thrust[m] * mix[0, m]
        for a in range(3):
            tau[a] += thrust[m] * mix[1 + a, m]
    a0 = bz0 * (total / mass) - (drag / mass) * vel[k, 0]
    a1 = bz1 * (total / mass) - (drag / mass) * vel[k, 1]
    a2 = bz2 * (total / mass) - (drag / mass) * vel[k, 2] - GRAVITY
    ix, iy, iz = scal[3], scal[4], scal[5]
    wx, wy, wz = rates[k, 0], rates[k, 1], rates[k, 2]
    gx = wy * (wz * iz) - wz * (wy * iy)
    gy = wz * (wx * ix) - wx * (wz * iz)
    gz = wx * (wy * iy) - wy * (wx * ix)
    wx = wx + dt * (tau[0] - gx) / ix
    wy = wy + dt * (tau[1] - gy) / iy
    wz = wz + dt * (tau[2] - gz) / iz
    rates[k, 0], rates[k, 1], rates[k, 2] = wx, wy, wz

    acc[k, 0], acc[k, 1], acc[k, 2] = a0, a1, a2
    for a in range(3):
        v_old = vel[k, a]
        vel[k, a] = v_old + dt * acc[k, a]
        pos[k, a] = pos[k, a] + 0.5 * dt * (v_old + vel[k, a])
    if pos[k, 2] - scal[6] < support[k]:
        pos[k, 2] = support[k] + scal[6]
        if vel[k, 2] < 0.0:
            vel[k, 2] = 0.0

    hx, hy, hz = 0.5 * dt * wx, 0.5 * dt * wy, 0.5 * dt * wz
    ang = math.sqrt(hx * hx + hy * hy + hz * hz)
    sinc = math.sin(ang) / ang if ang > 1e-12 else 1.0
    dw, dx, dy, dz = math.cos(ang), hx * sinc, hy * sinc, hz * sinc
    nw = w * dw - x * dx - y * dy - z * dz
    nx = w * dx + x * dw + y * dz - z * dy
    ny = w * dy - x * dz + y * dw + z * dx
    nz = w * dz + x * dy - y * dx + z * dw
    norm = math.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
    quat[k, 0], quat[k, 1], quat[k, 2], quat[k, 3] = nw / norm, nx / norm, ny / norm, nz / norm


@numba.njit(cache=True)
def _check_events(k, pos, vel, acc, foot, deck, floor, allow, status, event_pos):
    # deck: [cx, cy, cz, nx, ny, nz, ux, uy, uz, vx, vy, vz, half_u, half_v, active]
    # gaps are measured from the feet, ``foot`` below the centre of mass
    if deck[k, 14] > 0.5:
        rx = pos[k, 0] - deck[k, 0]
        ry = pos[k, 1] - deck[k, 1]
        rz = pos[k, 2] - deck[k, 2]
        gap = rx * deck[k, 3] + ry * deck[k, 4] + rz * deck[k, 5] - foot
        u = rx * deck[k, 6] + ry * deck[k, 7] + rz * deck[k, 8]
        v = rx * deck[k, 9] + ry * deck[k, 10] + rz * deck[k, 11]
        if abs(u) <= deck[k, 12] and abs(v) <= deck[k, 13] and gap < GAP_TOL:
            vn = vel[k, 0] * deck[k, 3] + vel[k, 1] * deck[k, 4] + vel[k, 2] * deck[k, 5]
            lat = math.sqrt(max(vel[k, 0] ** 2 + vel[k, 1] ** 2 + vel[k, 2] ** 2 - vn * vn, 0.0))
            hard = gap < 0.0 and (-vn >= IMPACT_TOL or gap < -DECK_SKIN)
            if not allow[k] or hard:
                status[k] = DECK_CRASH
            elif gap < 0.0:
                # inelastic, no-slip contact: the drone comes to rest on the deck
                for a in range(3):
                    pos[k, a] -= gap * deck[k, 3 + a]
                    vel[k, a] = 0.0
                    acc[k, a] = 0.0
                status[k] = TOUCHDOWN
            elif -vn < DESCENT_TOL and lat < LATERAL_TOL:
                status[k] = TOUCHDOWN
            if status[k] != FLYING:
                for a in range(3):
                    event_pos[k, a] = pos[k, a]
                return
    if pos[k, 2] - foot <= floor[k]:
        status[k] = FLOOR_CRASH
        for a in range(3):
            event_pos[k, a] = pos[k, a]


@numba.njit(cache=True)
def advance(pos, vel, acc, quat, rates, pid, status, event_pos, cmd, n_steps, dt,
            scal, mix, inv_mix, gains, support, deck, floor, allow):
    """Run ``n_steps`` substeps for every drone still flying; in place."""
    n = pos.shape[0]
    for k in range(n):
        if status[k] != FLYING:
            continue
        for _ in range(n_steps):
            _substep(k, pos, vel, acc, quat, rates, pid, cmd, dt, scal, mix, inv_mix, gains, support)
            if not (math.isfinite(pos[k, 0]) and math.isfinite(pos[k, 1]) and math.isfinite(pos[k, 2])):
                status[k] = -1
                break
            _check_events(k, pos, vel, acc, scal[6], deck, floor, allow, status, event_pos)
            if status[k] != FLYING:
                break


class FlightKernel:
    """Binds drone constants and controller gains to the compiled loop."""

    def __init__(self, params: DroneParams = DroneParams(), gains: CascadeGains = CascadeGains(), dt: float = 0.002):
        self.params = params
        self.gains = gains
        self.dt = dt
        self.scal, self.mix, self.inv_mix = pack_params(params)
        self.packed_gains = pack_gains(gains)

    def run(self, batch: FlightBatch, cmd, n_steps: int, deck=None, floor=None, support=None, allow=None) -> None:
        n = len(batch)
        cmd = np.ascontiguousarray(np.broadcast_to(np.asarray(cmd, dtype=float), (n, 3)))
        if deck is None:
            deck = np.zeros((n, 15))
        if floor is None:
            floor = np.full(n, -np.inf)
        if support is None:
            support = np.full(n, -np.inf)
        if allow is None:
            allow = np.ones(n, dtype=np.bool_)
        advance(batch.pos, batch.vel, batch.acc, batch.quat, batch.rates, batch.pid, batch.status,
                batch.event_pos, cmd, int(n_steps), self.dt, self.scal, self.mix, self.inv_mix,
                self.packed_gains, np.asarray(support, dtype=float), np.asarray(deck, dtype=float),
                np.asarray(floor, dtype=float), np.asarray(allow, dtype=np.bool_))
        if np.any(batch.status < 0):
            raise FloatingPointError("non-finite drone state in flight kernel")
