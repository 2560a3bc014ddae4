"""Adaptive landing gear: leg kinematics, load sensing and self-levelling.

Each leg keeps its foot on a body-vertical line; the lift percent ``x``
(0..100) maps linearly onto 0..``stroke`` metres of foot travel. Servo load
is synthesised from the quasi-static contact force, filtered over a short
window and fed to the raise/lower rule in :func:`gear_update`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import optimize

from .dynamics import GRAVITY

TICK = 0.05
FILTER_WINDOW = 3  # 0.15 s of samples at 0.05 s


class GearError(RuntimeError):
    pass


class UnstablePoseError(GearError):
    """No static pose with at least three loaded feet exists."""


class StabilizeError(GearError):
    """Levelling loop failed; ``pose`` holds the last solved pose."""

    def __init__(self, message: str, pose: "PlatformPose | None" = None, legs=None):
        super().__init__(message)
        self.pose = pose
        self.legs = legs


class Motion(str, Enum):
    RAISING = "raising"
    LOWERING = "lowering"
    STATIC = "static"
    AIRBORNE = "airborne"


# ---------------------------------------------------------------- kinematics


@dataclass(frozen=True)
class LegGeometry:
    """One 3-DoF leg: hip yaw, shoulder pitch, knee pitch.

    ``hip`` is the hip mount in the body frame; ``heading`` the direction the
    shoulder points (radians about body z). The foot line sits ``reach``
    metres radially beyond the shoulder joint and ``depth`` metres below the
    hip when fully lowered.
    """

    hip: tuple[float, float, float]
    heading: float
    l1: float = 0.06
    l2: float = 0.12
    l3: float = 0.12
    reach: float = 0.06
    depth: float = 0.20
    stroke: float = 0.10

    def __post_init__(self) -> None:
        if min(self.l1, self.l2, self.l3) <= 0:
            raise ValueError("link lengths must be positive")
        for h in (self.depth, self.depth - self.stroke):
            dist = math.hypot(self.reach, h)
            if dist > self.l2 + self.l3 or dist < abs(self.l2 - self.l3):
                raise ValueError("vertical stroke leaves the leg workspace")

    @property
    def foot_xy(self) -> tuple[float, float]:
        r = self.l1 + self.reach
        return (self.hip[0] + r * math.cos(self.heading), self.hip[1] + r * math.sin(self.heading))


def default_legs(half_span: float = 0.15, **kw) -> tuple[LegGeometry, ...]:
    """Square hip layout, shoulders pointing diagonally outward (FL, BL, BR, FR)."""
    corners = [(1, 1), (-1, 1), (-1, -1), (1, -1)]
    return tuple(
        LegGeometry((sx * half_span, sy * half_span, 0.0), math.atan2(sy, sx), **kw) for sx, sy in corners
    )


def forward_kinematics(geom: LegGeometry, joints) -> np.ndarray:
    """Foot position in the body frame."""
    q1, q2, q3 = joints
    rho = geom.l2 * math.cos(q2) + geom.l3 * math.cos(q2 + q3)
    down = geom.l2 * math.sin(q2) + geom.l3 * math.sin(q2 + q3)
    radial = geom.l1 + rho
    ang = geom.heading + q1
    return np.array(
        [geom.hip[0] + radial * math.cos(ang), geom.hip[1] + radial * math.sin(ang), geom.hip[2] - down]
    )


def foot_target(geom: LegGeometry, x: float) -> np.ndarray:
    fx, fy = geom.foot_xy
    return np.array([fx, fy, geom.hip[2] - geom.depth + geom.stroke * x / 100.0])


def ik_vertical(geom: LegGeometry, x: float) -> tuple[float, float, float]:
    """Joint angles putting the foot ``x`` percent up its vertical line."""
    if not 0 <= x <= 100:
        raise ValueError(f"lift percent {x} outside [0, 100]")
    target = foot_target(geom, x)
    dx, dy = target[0] - geom.hip[0], target[1] - geom.hip[1]
    q1 = math.atan2(dy, dx) - geom.heading
    q1 = math.atan2(math.sin(q1), math.cos(q1))
    rho = math.hypot(dx, dy) - geom.l1
    down = geom.hip[2] - target[2]
    cos_knee = (rho * rho + down * down - geom.l2**2 - geom.l3**2) / (2 * geom.l2 * geom.l3)
    if not -1.0 <= cos_knee <= 1.0:
        raise GearError(f"foot target for x={x} is outside the leg workspace")
    q3 = -math.acos(cos_knee)
    q2 = math.atan2(down, rho) - math.atan2(geom.l3 * math.sin(q3), geom.l2 + geom.l3 * math.cos(q3))
    return (q1, q2, q3)


# ---------------------------------------------------------------- load sensing


@dataclass(frozen=True)
class LoadModel:
    """Maps a foot's contact force onto a servo load reading (% of stall torque).

    The reading is proportional to the knee torque, calibrated so a leg
    carrying its nominal share of the body weight reads ``static_baseline``.
    Between one share and ``overload_factor`` shares the reading ramps to
    ``overload_low``; beyond that it saturates in the overloaded band.
    """

    nominal_force: float
    static_baseline: float = 4.0
    overload_factor: float = 1.9
    overload_low: float = 15.0
    overload_high: float = 20.0
    airborne_max: float = 4.0
    motion_low: float = 20.0
    motion_high: float = 50.0
    noise: float = 0.5


def estimate_load(force: float, motion: Motion | str, model: LoadModel, rng: np.random.Generator) -> float:
    """One raw servo load sample in percent of stall torque."""
    if force < 0 or not math.isfinite(force):
        raise ValueError("contact force must be finite and non-negative")
    motion = Motion(motion)
    if motion is Motion.AIRBORNE or force == 0.0:
        return float(rng.uniform(0.0, model.airborne_max))

    ratio = force / model.nominal_force
    base = model.static_baseline
    if ratio <= 1.0:
        value = base * ratio
    elif ratio < model.overload_factor:
        value = base + (model.overload_low - base) * (ratio - 1.0) / (model.overload_factor - 1.0)
    else:
        excess = (ratio - model.overload_factor) / model.overload_factor
        value = model.overload_low + (model.overload_high - model.overload_low) * min(1.0, excess)
    if model.noise > 0:
        value += rng.normal(0.0, model.noise)
    if ratio >= model.overload_factor:
        value = min(max(value, model.overload_low), model.overload_high)

    if motion is Motion.RAISING:
        value += rng.uniform(model.motion_low, model.motion_high)
    elif motion is Motion.LOWERING:
        value -= rng.uniform(model.motion_low, model.motion_high)
    return float(value)


@dataclass
class LegState:
    x: int = 0
    joints: tuple[float, float, float] = (0.0, 0.0, 0.0)
    load: float = 0.0
    samples: deque = field(default_factory=lambda: deque(maxlen=FILTER_WINDOW))
    motion: Motion = Motion.STATIC
    pinned: bool = False  # a raise was requested at full lift

    def copy(self) -> "LegState":
        return LegState(
            self.x, self.joints, self.load, deque(self.samples, maxlen=FILTER_WINDOW), self.motion, self.pinned
        )


def filter_step(leg: LegState, sample: float) -> float:
    """Push a sample and return the mean of the last 0.15 s of readings."""
    leg.samples.append(float(sample))
    leg.load = sum(leg.samples) / len(leg.samples)
    return leg.load


def gear_update(x: int, load: float) -> int:
    """Raise a loaded leg by 10 %, lower a back-driven leg by 5 %."""
    if not 0 <= x <= 100:
        raise ValueError(f"lift percent {x} outside [0, 100]")
    if 5.0 <= load <= 15.0:
        x = x + 10
        if x >= 100:
            x = 100
    if -9.0 <= load <= -4.0:
        x = x - 5
        if x <= 0:
            x = 0
    return x


# ---------------------------------------------------------------- terrain


@dataclass
class Terrain:
    """Regular heightfield with bilinear interpolation.

    ``heights[i, j]`` is the ground height at
    ``(origin[0] + j * resolution, origin[1] + i * resolution)``.
    """

    heights: np.ndarray
    resolution: float
    origin: tuple[float, float]

    def __post_init__(self) -> None:
        self.heights = np.asarray(self.heights, dtype=float)
        if self.heights.ndim != 2 or min(self.heights.shape) < 2:
            raise ValueError("heightfield must be a 2-D grid of at least 2x2")
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("heightfield contains non-finite heights")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        rows, cols = self.heights.shape
        x0, y0 = self.origin
        return (x0, x0 + (cols - 1) * self.resolution, y0, y0 + (rows - 1) * self.resolution)

    def contains(self, x: float, y: float) -> bool:
        xmin, xmax, ymin, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def height(self, x: float, y: float) -> float:
        if not self.contains(x, y):
            raise ValueError(f"terrain query ({x:.3f}, {y:.3f}) outside bounds {self.bounds}")
        rows, cols = self.heights.shape
        u = (x - self.origin[0]) / self.resolution
        v = (y - self.origin[1]) / self.resolution
        j = min(int(u), cols - 2)
        i = min(int(v), rows - 2)
        fu, fv = u - j, v - i
        h = self.heights
        return float(
            (1 - fv) * ((1 - fu) * h[i, j] + fu * h[i, j + 1]) + fv * ((1 - fu) * h[i + 1, j] + fu * h[i + 1, j + 1])
        )

    @classmethod
    def flat(cls, half_size: float = 3.0, resolution: float = 0.05, height: float = 0.0) -> "Terrain":
        n = int(round(2 * half_size / resolution)) + 1
        return cls(np.full((n, n), height), resolution, (-half_size, -half_size))

    @classmethod
    def from_file(cls, path: str | Path, resolution: float = 0.01, origin: tuple[float, float] | None = None) -> "Terrain":
        """Rows of space-separated heights; centred on the origin by default."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in line.split()])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
        if len({len(r) for r in rows}) != 1:
            raise ValueError(f"{path}: rows have differing lengths")
        grid = np.array(rows)
        if origin is None:
            origin = (-(grid.shape[1] - 1) * resolution / 2, -(grid.shape[0] - 1) * resolution / 2)
        return cls(grid, resolution, origin)

    def to_file(self, path: str | Path) -> None:
        lines = [" ".join(repr(float(v)) for v in row) for row in self.heights]
        Path(path).write_text("\n".join(lines) + "\n")

    def with_blocks(self, centres, heights, half_width: float) -> "Terrain":
        """Copy with square flat-topped blocks raised at ``centres``."""
        grid = self.heights.copy()
        rows, cols = grid.shape
        xs = self.origin[0] + np.arange(cols) * self.resolution
        ys = self.origin[1] + np.arange(rows) * self.resolution
        for (cx, cy), h in zip(centres, heights):
            mask_x = np.abs(xs - cx) <= half_width + 1e-9
            mask_y = np.abs(ys - cy) <= half_width + 1e-9
            grid[np.ix_(mask_y, mask_x)] += h
        return Terrain(grid, self.resolution, self.origin)


def block_terrain(
    feet_xy, rng: np.random.Generator, max_step: float = 0.08, half_size: float = 1.0,
    resolution: float = 0.01, half_width: float = 0.06,
) -> tuple[Terrain, np.ndarray]:
    """Flat ground with an independent block under each foot, heights U[0, max_step]."""
    heights = rng.uniform(0.0, max_step, size=len(feet_xy))
    return Terrain.flat(half_size, resolution).with_blocks(feet_xy, heights, half_width), heights


# ---------------------------------------------------------------- pose solver


@dataclass
class PlatformPose:
    position: np.ndarray
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    @property
    def tilt(self) -> float:
        """Angle between body z and world z."""
        return math.acos(min(1.0, math.cos(self.roll) * math.cos(self.pitch)))

    def rotation(self) -> np.ndarray:
        return rotation_rpy(self.roll, self.pitch, self.yaw)

    def to_world(self, point_body) -> np.ndarray:
        return self.position + self.rotation() @ np.asarray(point_body, dtype=float)


def rotation_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@dataclass(frozen=True)
class GearConfig:
    """Platform body and contact model.

    Feet sit on compliant pads (``leg_stiffness``, N/m, along world z). The
    body resists tilting with ``attitude_stiffness`` (N*m/rad), standing in
    for the leader's attitude hold while its gear adapts.
    """

    body_mass: float = 2.5
    leg_stiffness: float = 61.0
    attitude_stiffness: float = 27.0
    com_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    max_tilt_deg: float = 30.0
    settle_ticks: int = 10
    max_ticks: int = 200
    load_noise: float = 0.5
    overload_factor: float = 1.9

    @property
    def weight(self) -> float:
        return self.body_mass * GRAVITY

    def load_model(self, n_legs: int = 4) -> LoadModel:
        return LoadModel(self.weight / n_legs, overload_factor=self.overload_factor, noise=self.load_noise)


def feet_body(legs, xs) -> np.ndarray:
    return np.array([forward_kinematics(g, ik_vertical(g, x)) for g, x in zip(legs, xs)])


def _rotation_partials(roll: float, pitch: float, yaw: float):
    """Rotation and its derivatives with respect to roll and pitch."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    dry = np.array([[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]])
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]])
    return rz @ ry @ rx, rz @ ry @ drx, rz @ dry @ rx


def _residual(q, feet_b, terrain, xy, yaw, cfg: GearConfig):
    """Generalised forces on (z, roll, pitch): contacts + gravity + attitude spring."""
    z, roll, pitch = q
    rot, d_roll, d_pitch = _rotation_partials(roll, pitch, yaw)
    world = np.array([xy[0], xy[1], z]) + feet_b @ rot.T
    ground = np.array([terrain.height(p[0], p[1]) for p in world])
    forces = cfg.leg_stiffness * np.maximum(ground - world[:, 2], 0.0)
    com = np.asarray(cfg.com_offset)
    out = np.empty(3)
    out[0] = forces.sum() - cfg.weight
    for j, (angle, deriv) in enumerate(((roll, d_roll), (pitch, d_pitch)), start=1):
        lever = (feet_b @ deriv.T)[:, 2]
        out[j] = forces @ lever - cfg.weight * (deriv @ com)[2] - cfg.attitude_stiffness * angle
    return out, forces


def solve_platform_pose(legs, xs, terrain: Terrain, cfg: GearConfig, xy=(0.0, 0.0), yaw: float = 0.0, guess=None):
    """Quasi-static rest pose of the platform and its per-foot normal forces.

    The body's horizontal placement and yaw are given; height, roll and pitch
    settle so that contact, gravity and attitude-spring loads balance.
    """
    feet_b = feet_body(legs, xs)
    if guess is None:
        ground = np.array([terrain.height(xy[0] + f[0], xy[1] + f[1]) for f in feet_b])
        sag = cfg.weight / (len(legs) * cfg.leg_stiffness)
        guess = np.array([np.mean(ground - feet_b[:, 2]) - sag, 0.0, 0.0])
    q = np.asarray(guess, dtype=float)

    fun = lambda v: _residual(v, feet_b, terrain, xy, yaw, cfg)[0]
    q, ok = _newton(fun, q)
    if not ok:
        sol = optimize.root(fun, q, method="hybr", options={"xtol": 1e-13})
        q, ok = sol.x, sol.success and np.max(np.abs(fun(sol.x))) < 1e-8
    if not ok:
        raise UnstablePoseError("pose solver did not converge")
    res, forces = _residual(q, feet_b, terrain, xy, yaw, cfg)
    n_contact = int(np.count_nonzero(forces > 0))
    pose = PlatformPose(np.array([xy[0], xy[1], q[0]]), float(q[1]), float(q[2]), yaw)
    if n_contact < 3:
        raise UnstablePoseError(f"only {n_contact} feet in contact")
    limit = math.radians(cfg.max_tilt_deg)
    if abs(pose.roll) > limit or abs(pose.pitch) > limit:
        raise UnstablePoseError("body tilt beyond solver limit")
    return pose, forces


def _newton(fun, q, tol: float = 1e-10, max_iter: int = 50):
    r = fun(q)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            return q, True
        jac = np.empty((3, 3))
        for j in range(3):
            h = 1e-7 * max(1.0, abs(q[j]))
            dq = q.copy()
            dq[j] += h
            rp = fun(dq)
            dq[j] -= 2 * h
            rm = fun(dq)
            jac[:, j] = (rp - rm) / (2 * h)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return q, False
        t = 1.0
        norm = np.linalg.norm(r)
        while t > 1e-4:
            cand = q + t * step
            rc = fun(cand)
            if np.linalg.norm(rc) < norm:
                q, r = cand, rc
                break
            t *= 0.5
        else:
            return q, False
    return q, bool(np.max(np.abs(r)) < tol)


# ---------------------------------------------------------------- levelling loop


@dataclass
class Platform:
    """Leg geometry and state plus where the body stands."""

    legs: tuple[LegGeometry, ...] = field(default_factory=default_legs)
    states: list[LegState] = field(default_factory=list)
    xy: tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0
    cfg: GearConfig = field(default_factory=GearConfig)
    pose: PlatformPose | None = None
    forces: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.states:
            self.states = [LegState(0, ik_vertical(g, 0)) for g in self.legs]

    @property
    def xs(self) -> list[int]:
        return [s.x for s in self.states]

    def settle(self, terrain: Terrain) -> PlatformPose:
        guess = None
        if self.pose is not None and abs(self.pose.position[0] - self.xy[0]) < 1e-12 and abs(self.pose.position[1] - self.xy[1]) < 1e-12:
            guess = np.array([self.pose.position[2], self.pose.roll, self.pose.pitch])
        self.pose, self.forces = solve_platform_pose(self.legs, self.xs, terrain, self.cfg, self.xy, self.yaw, guess)
        return self.pose


def gear_tick(platform: Platform, terrain: Terrain, rng: np.random.Generator) -> bool:
    """One 0.05 s pass of sense -> filter -> update -> IK on every leg at once.

    Returns True when any lift percent changed.
    """
    platform.settle(terrain)
    model = platform.cfg.load_model(len(platform.legs))
    changed = False
    for geom, leg, force in zip(platform.legs, platform.states, platform.forces):
        motion = Motion.AIRBORNE if force == 0.0 else Motion.STATIC
        sample = estimate_load(float(force), motion, model, rng)
        load = filter_step(leg, sample)
        new_x = gear_update(leg.x, load)
        leg.pinned = leg.x == 100 and 5.0 <= load <= 15.0
        leg.motion = Motion.RAISING if new_x > leg.x else Motion.LOWERING if new_x < leg.x else Motion.STATIC
        if new_x != leg.x:
            changed = True
            leg.x = new_x
            leg.joints = ik_vertical(geom, new_x)
    return changed


def range_exhausted(platform: Platform, overload: float = 15.0) -> bool:
    """A leg hit full lift while still loaded, or reads past the raise band."""
    return any(s.pinned or s.load > overload for s in platform.states)


def short_of_stroke(platform: Platform, share_tol: float = 1e-4) -> bool:
    """A fully lifted leg still bears more than its share of the weight.

    Its ground is higher than the stroke can reach. Only meaningful right
    after :meth:`Platform.settle`, when the forces match the lift percents.
    """
    share = platform.cfg.weight / len(platform.legs)
    return any(s.x == 100 and f > share * (1.0 + share_tol) for s, f in zip(platform.states, platform.forces))


def stabilize(platform: Platform, terrain: Terrain, rng: np.random.Generator, max_ticks: int | None = None):
    """Run the levelling loop until lift percents hold for ``settle_ticks``.

    Returns ``(pose, leg_states, ticks_used)``. Raises :class:`StabilizeError`
    when the loop does not settle or a leg runs out of stroke.
    """
    cfg = platform.cfg
    max_ticks = cfg.max_ticks if max_ticks is None else max_ticks
    quiet = 0
    ticks = 0
    exhausted = False
    try:
        while ticks < max_ticks:
            ticks += 1
            quiet = 0 if gear_tick(platform, terrain, rng) else quiet + 1
            exhausted = range_exhausted(platform) or (exhausted and quiet > 0)
            if quiet >= cfg.settle_ticks:
                break
        platform.settle(terrain)
        exhausted = exhausted or short_of_stroke(platform)
    except UnstablePoseError as exc:
        raise StabilizeError(f"unstable pose after {ticks} ticks: {exc}", platform.pose, platform.states) from exc
    if quiet < cfg.settle_ticks:
        raise StabilizeError(f"no convergence within {max_ticks} ticks", platform.pose, platform.states)
    if exhausted:
        raise StabilizeError("leg lift range exhausted while still overloaded", platform.pose, platform.states)
    return platform.pose, platform.states, ticks
