"""Two-drone landing episodes on the legged platform.

A trial runs scripted takeoff, an optional platform relocation with the
drones holding position, a gear settle, and then the landing phase in
which every drone flies the learned policy toward its assigned pad.
Everything a trial produces is logged as trajectory rows; summary
metrics are computed from those rows alone so a replay of the CSV gives
the same numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .control import CascadeGains
from .dynamics import DroneParams
from .fastsim import DECK_CRASH, FLOOR_CRASH, FLYING, TOUCHDOWN, FlightBatch, FlightKernel
from .gear import GearConfig, GearError, Platform, Terrain, block_terrain, gear_tick, stabilize
from .rl.core import RewardWeights, observe, reward
from .rl.task import deck_row

# touchdown predicate
GAP_TOL = 0.01
DESCENT_TOL = 0.1
HORIZONTAL_TOL = 0.1

FLIGHT_PHASES = ("takeoff", "relocate", "settle", "land")
END_PHASES = ("touchdown", "crash", "timeout", "invalid")
LEFT_PAD, RIGHT_PAD = 0, 1

Pilot = Callable[[np.ndarray], np.ndarray]


class Scenario(str, Enum):
    EVEN_STATIC = "even-static"
    UNEVEN_STATIC = "uneven-static"
    RELOCATE = "relocate"


class EpisodeAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class EpisodeConfig:
    """Geometry, timing and terrain settings shared by every trial.

    Drones start on the floor ``start_distance`` behind the platform along
    -x, ``spacing`` apart in y. Pads sit ``pad_offset`` either side of the
    deck centre line, ``deck_height`` above the body origin.
    """

    drone_count: int = 2
    spacing: float = 0.75
    start_distance: float = 1.5
    start_altitude: float = 1.0
    start_jitter: float = 0.05
    pad_diameter: float = 0.20
    pad_offset: float = 0.2
    deck_half: float = 0.3
    deck_height: float = 0.03
    crossed: bool = True
    trials: int = 16
    physics_dt: float = 0.002
    decision_period: float = 0.1
    gear_period: float = 0.05
    takeoff_time: float = 4.0
    land_horizon: float = 15.0
    hold_gain: float = 1.5
    hold_speed: float = 0.5
    max_step: float = 0.08
    terrain_half: float = 1.0
    terrain_resolution: float = 0.01
    block_half_width: float = 0.06
    relocation_start: tuple[float, float] = (0.4, 0.0)
    relocation_end: tuple[float, float] = (0.0, 0.0)
    relocation_speed: float = 0.1
    relocation_accel: float = 0.05
    min_separation: float = 0.15
    arena_half: float = 3.0
    ceiling: float = 3.0

    def __post_init__(self) -> None:
        if self.drone_count != 2:
            raise ValueError("the landing setup has exactly two drones and two pads")
        if 2 * self.pad_offset < self.pad_diameter:
            raise ValueError("pads overlap")
        if self.pad_offset + self.pad_diameter / 2 > self.deck_half + 1e-9:
            raise ValueError("pads do not fit on the deck")
        if self.spacing <= 0 or self.start_distance <= 0 or self.start_altitude <= 0:
            raise ValueError("spacing, start distance and altitude must be positive")
        substeps = self.decision_period / self.physics_dt
        if abs(substeps - round(substeps)) > 1e-9 or round(substeps) % 2:
            raise ValueError("decision period must be an even number of physics steps")
        if abs(self.decision_period - 2 * self.gear_period) > 1e-12:
            raise ValueError("two gear ticks per decision period are assumed")
        if self.relocation_speed <= 0 or self.relocation_accel <= 0:
            raise ValueError("relocation speed and acceleration must be positive")
        reach = math.hypot(self.deck_half, self.deck_half)
        for p in (self.relocation_start, self.relocation_end):
            if max(abs(p[0]), abs(p[1])) + reach > self.terrain_half:
                raise ValueError(f"relocation point {p} takes the feet off the terrain")

    @property
    def pad_radius(self) -> float:
        return self.pad_diameter / 2.0

    @property
    def substeps(self) -> int:
        return int(round(self.decision_period / self.physics_dt))


# ---------------------------------------------------------------- geometry and scoring


def pad_body_points(cfg: EpisodeConfig) -> np.ndarray:
    """Pad centres in the platform body frame: left pad (+y) first."""
    return np.array([[0.0, cfg.pad_offset, cfg.deck_height], [0.0, -cfg.pad_offset, cfg.deck_height]])


def assign_pads(drone_y, crossed: bool = True) -> np.ndarray:
    """Pad index per drone. Crossed: the right drone (lower y) takes the left pad."""
    order = np.argsort(np.asarray(drone_y, dtype=float), kind="stable")
    pads = np.empty(len(order), dtype=int)
    # pads sorted by body y, lowest first: right then left
    by_y = [RIGHT_PAD, LEFT_PAD]
    for rank, drone in enumerate(order):
        pads[drone] = by_y[len(order) - 1 - rank] if crossed else by_y[rank]
    return pads


def detect_touchdown(position, velocity, pad_centre, normal=(0.0, 0.0, 1.0), foot_height: float = 0.0) -> bool:
    """Feet within 1 cm of the pad plane, descending slower than 0.1 m/s, sliding slower than 0.1 m/s."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    gap = float(np.dot(np.asarray(position, dtype=float) - pad_centre, n)) - foot_height
    vel = np.asarray(velocity, dtype=float)
    vn = float(np.dot(vel, n))
    lateral = float(np.linalg.norm(vel - vn * n))
    return abs(gap) < GAP_TOL and -vn < DESCENT_TOL and lateral < HORIZONTAL_TOL


def landing_shift(touchdown, pad_centre, normal=(0.0, 0.0, 1.0)) -> float:
    """Distance from the pad centre within the pad plane, in centimetres."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    d = np.asarray(touchdown, dtype=float) - np.asarray(pad_centre, dtype=float)
    return float(np.linalg.norm(d - np.dot(d, n) * n) * 100.0)


@dataclass(frozen=True)
class Trapezoid:
    """Straight-line speed profile: accelerate, cruise, brake to a halt."""

    length: float
    speed: float
    accel: float

    @property
    def ramp_time(self) -> float:
        return min(self.speed / self.accel, math.sqrt(self.length / self.accel))

    @property
    def duration(self) -> float:
        if self.length <= 0.0:
            return 0.0
        tr = self.ramp_time
        peak = self.accel * tr
        return 2 * tr + (self.length - peak * tr) / peak

    def sample(self, t: float) -> tuple[float, float, float]:
        """Distance travelled, speed and acceleration at time ``t``."""
        if self.length <= 0.0 or t <= 0.0:
            return 0.0, 0.0, 0.0
        tr, total = self.ramp_time, self.duration
        peak = self.accel * tr
        if t >= total:
            return self.length, 0.0, 0.0
        if t < tr:
            return 0.5 * self.accel * t * t, self.accel * t, self.accel
        if t <= total - tr:
            return 0.5 * peak * tr + peak * (t - tr), peak, 0.0
        left = total - t
        return self.length - 0.5 * self.accel * left * left, self.accel * left, -self.accel


# ---------------------------------------------------------------- world


@dataclass
class World:
    scenario: Scenario
    cfg: EpisodeConfig
    seed: int
    terrain: Terrain
    platform: Platform
    adaptive: bool
    gear_rng: np.random.Generator
    kernel: FlightKernel
    drones: FlightBatch
    pads: np.ndarray
    home: np.ndarray
    weights: RewardWeights
    path: Trapezoid
    direction: np.ndarray
    block_heights: np.ndarray
    t: float = 0.0
    phase: str = "takeoff"
    land_steps: int = 0
    reloc_t: float = 0.0
    quiet_ticks: int = 0
    gear_ticks: int = 0
    pad_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pad_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    valid: bool = True
    reason: str = ""
    last_actions: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    stabilize_ticks: int = 0

    @property
    def pad_centres(self) -> np.ndarray:
        pose = self.platform.pose
        return np.array([pose.to_world(p) for p in pad_body_points(self.cfg)])

    @property
    def pad_normal(self) -> np.ndarray:
        return self.platform.pose.rotation()[:, 2].copy()

    @property
    def tilt_deg(self) -> float:
        return math.degrees(self.platform.pose.tilt)

    def deck(self) -> np.ndarray:
        pose = self.platform.pose
        rot = pose.rotation()
        centre = pose.to_world([0.0, 0.0, self.cfg.deck_height])
        row = deck_row(centre, rot, self.cfg.deck_half, self.cfg.deck_half)
        return np.tile(row, (len(self.drones), 1))

    def targets(self) -> np.ndarray:
        """Assigned landing-point kinematics per drone: position, velocity, acceleration.

        The landing point is where the centre of mass rests with the feet on
        the pad: the pad centre raised by the foot height along the normal.
        """
        centres = self.pad_centres[self.pads] + self.kernel.params.foot_height * self.pad_normal
        out = np.zeros((len(self.drones), 9))
        out[:, :3] = centres
        out[:, 3:6] = self.pad_vel
        out[:, 6:9] = self.pad_acc
        return out

    def kinematics(self) -> np.ndarray:
        b = self.drones
        return np.concatenate([b.pos, b.vel, b.acc], axis=1)


def trial_seed(master_seed: int, trial: int) -> int:
    """Seed of trial ``trial``; shared by all scenarios so their trials start alike."""
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1)[0])


def reset(scenario: Scenario | str, cfg: EpisodeConfig, seed: int, weights: RewardWeights = RewardWeights(),
          params: DroneParams = DroneParams(), gains: CascadeGains = CascadeGains(),
          gear: GearConfig = GearConfig()) -> World:
    """Build the terrain, place and (if uneven) stabilise the platform, park the drones.

    A failed stabilisation does not raise: the world comes back with
    ``valid`` cleared and the reason recorded.
    """
    scenario = Scenario(scenario)
    terrain_rng, jitter_rng, gear_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    end = np.asarray(cfg.relocation_end, dtype=float)
    start = np.asarray(cfg.relocation_start, dtype=float) if scenario is Scenario.RELOCATE else end
    platform = Platform(cfg=gear, xy=(float(start[0]), float(start[1])))
    feet_at_goal = [(end[0] + g.foot_xy[0], end[1] + g.foot_xy[1]) for g in platform.legs]
    if scenario is Scenario.EVEN_STATIC:
        terrain = Terrain.flat(cfg.terrain_half, cfg.terrain_resolution)
        heights = np.zeros(len(feet_at_goal))
    else:
        terrain, heights = block_terrain(feet_at_goal, terrain_rng, cfg.max_step, cfg.terrain_half,
                                         cfg.terrain_resolution, cfg.block_half_width)
    delta = end - start
    length = float(np.linalg.norm(delta))
    direction = delta / length if length > 0 else np.zeros(2)
    path = Trapezoid(length, cfg.relocation_speed, cfg.relocation_accel)

    home = np.zeros((2, 3))
    home[:, 0] = end[0] - cfg.start_distance + jitter_rng.uniform(-cfg.start_jitter, cfg.start_jitter, 2)
    home[:, 1] = end[1] + np.array([-0.5, 0.5]) * cfg.spacing + jitter_rng.uniform(-cfg.start_jitter, cfg.start_jitter, 2)
    home[:, 2] = cfg.start_altitude + jitter_rng.uniform(-cfg.start_jitter, cfg.start_jitter, 2)
    parked = home.copy()
    parked[:, 2] = params.foot_height

    world = World(
        scenario=scenario, cfg=cfg, seed=seed, terrain=terrain, platform=platform,
        adaptive=scenario is not Scenario.EVEN_STATIC, gear_rng=gear_rng,
        kernel=FlightKernel(params, gains, cfg.physics_dt), drones=FlightBatch.at_rest(parked),
        pads=assign_pads(home[:, 1], cfg.crossed), home=home, weights=weights, path=path,
        direction=np.array([direction[0], direction[1], 0.0]), block_heights=heights,
    )
    try:
        platform.settle(terrain)
        if world.adaptive:
            _, _, world.stabilize_ticks = stabilize(platform, terrain, gear_rng)
    except GearError as exc:
        world.valid = False
        world.reason = f"platform stabilisation failed: {exc}"
    return world


def observations(world: World) -> np.ndarray:
    return observe(world.kinematics(), world.targets())


def _gear_step(world: World) -> None:
    world.gear_ticks += 1
    changed = gear_tick(world.platform, world.terrain, world.gear_rng)
    world.quiet_ticks = 0 if changed else world.quiet_ticks + 1


def relocate_platform(world: World, dt: float) -> World:
    """Advance the relocation clock by ``dt``; the platform halts at the path end.

    The pad velocity and acceleration follow the speed profile so the
    drones' relative observations stay correct while the body moves.
    """
    world.reloc_t += dt
    s, v, a = world.path.sample(world.reloc_t)
    end = np.asarray(world.cfg.relocation_end, dtype=float)
    start = end - world.direction[:2] * world.path.length
    xy = start + s * world.direction[:2]
    world.platform.xy = (float(xy[0]), float(xy[1]))
    world.pad_vel = v * world.direction
    world.pad_acc = a * world.direction
    if world.adaptive:
        _gear_step(world)
    else:
        world.platform.settle(world.terrain)
    if world.reloc_t >= world.path.duration - 1e-12:
        world.platform.xy = (float(end[0]), float(end[1]))
        world.platform.settle(world.terrain)
        world.pad_vel = np.zeros(3)
        world.pad_acc = np.zeros(3)
        world.phase = "settle"
        world.quiet_ticks = 0
    return world


def _hold_commands(world: World, goal: np.ndarray) -> np.ndarray:
    cfg = world.cfg
    return np.clip(cfg.hold_gain * (goal - world.drones.pos), -cfg.hold_speed, cfg.hold_speed)


def _period(world: World, cmd: np.ndarray) -> None:
    """One decision period: two halves, each followed by a platform update."""
    n = len(world.drones)
    flying_phase = world.phase != "takeoff"
    floor = np.zeros(n) if flying_phase else np.full(n, -np.inf)
    support = np.full(n, -np.inf) if flying_phase else np.zeros(n)
    allow = np.full(n, world.phase == "land")
    half = world.cfg.substeps // 2
    for n_sub in (half, world.cfg.substeps - half):
        world.kernel.run(world.drones, cmd, n_sub, deck=world.deck(), floor=floor, support=support, allow=allow)
        world.t += n_sub * world.cfg.physics_dt
        if world.phase == "relocate":
            relocate_platform(world, n_sub * world.cfg.physics_dt)
        elif world.adaptive:
            _gear_step(world)
    # out of the arena counts as a crash
    b = world.drones
    out = (np.abs(b.pos[:, :2]) > world.cfg.arena_half).any(axis=1) | (b.pos[:, 2] > world.cfg.ceiling)
    for k in np.flatnonzero(out & (b.status == FLYING)):
        b.status[k] = FLOOR_CRASH
        b.event_pos[k] = b.pos[k]


def env_step(world: World, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """One 0.1 s landing-phase step with per-drone velocity commands.

    Drones that already finished ignore their action and earn no reward.
    """
    if world.phase != "land":
        raise EpisodeAborted(f"env_step called in phase {world.phase!r}")
    actions = np.asarray(actions, dtype=float).reshape(len(world.drones), 3)
    if not np.all(np.isfinite(actions)):
        raise EpisodeAborted("non-finite action")
    bound = world.kernel.gains.max_speed
    actions = np.clip(actions, -bound, bound)
    flying = world.drones.status == FLYING
    cmd = np.where(flying[:, None], actions, 0.0)
    try:
        _period(world, cmd)
    except FloatingPointError as exc:
        raise EpisodeAborted(f"non-finite drone state at t={world.t:.3f}: {exc}") from exc
    world.land_steps += 1
    world.last_actions = cmd
    obs = observations(world)
    rewards = np.where(flying, reward(obs, cmd, world.weights), 0.0)
    timeout = world.land_steps >= int(round(world.cfg.land_horizon / world.cfg.decision_period))
    dones = (world.drones.status != FLYING) | timeout
    info = {"status": world.drones.status.copy(), "flying": flying, "timeout": timeout,
            "tilt_deg": world.tilt_deg}
    return obs, rewards, dones, info


# ---------------------------------------------------------------- episodes


@dataclass
class DroneOutcome:
    drone: int
    pad: int
    status: str
    position: np.ndarray
    pad_centre: np.ndarray
    pad_normal: np.ndarray
    shift_cm: float
    landed_on_pad: bool
    collision: bool

    @property
    def touchdown(self) -> np.ndarray | None:
        return self.position if self.status == "touchdown" else None


@dataclass
class EpisodeResult:
    scenario: Scenario
    trial: int
    seed: int
    valid: bool
    reason: str
    outcomes: list
    rows: list
    tilt_deg: float
    min_separation: float
    near_misses: int


def _row(trial, drone, t, kin, u, r, phase) -> dict:
    return {"trial": trial, "drone": drone, "t": float(t),
            "x": float(kin[0]), "y": float(kin[1]), "z": float(kin[2]),
            "vx": float(kin[3]), "vy": float(kin[4]), "vz": float(kin[5]),
            "ax": float(kin[6]), "ay": float(kin[7]), "az": float(kin[8]),
            "ux": float(u[0]), "uy": float(u[1]), "uz": float(u[2]),
            "reward": float(r), "phase": phase}


STATUS_PHASE = {TOUCHDOWN: "touchdown", DECK_CRASH: "crash", FLOOR_CRASH: "crash", FLYING: "timeout"}


def _final_rows(world: World, trial: int, k: int, status: int) -> list[dict]:
    """A ``pad`` row (centre in x..z, normal in vx..vz) then the end-state row."""
    centre = world.pad_centres[world.pads[k]]
    normal = world.pad_normal
    pad_kin = np.concatenate([centre, normal, np.zeros(3)])
    pos = world.drones.event_pos[k] if status != FLYING else world.drones.pos[k]
    end_kin = np.concatenate([pos, world.drones.vel[k], world.drones.acc[k]])
    return [_row(trial, k, world.t, pad_kin, np.zeros(3), 0.0, "pad"),
            _row(trial, k, world.t, end_kin, np.zeros(3), 0.0, STATUS_PHASE[status])]


def run_episode(scenario: Scenario | str, cfg: EpisodeConfig, seed: int, pilot: Pilot, trial: int = 0,
                weights: RewardWeights = RewardWeights(), params: DroneParams = DroneParams(),
                gains: CascadeGains = CascadeGains(), gear: GearConfig = GearConfig()) -> EpisodeResult:
    """Full trial: takeoff, optional relocation and settle, then policy landing."""
    world = reset(scenario, cfg, seed, weights, params, gains, gear)
    rows: list[dict] = []
    n = len(world.drones)

    def log(phase: str, cmd: np.ndarray, rewards: np.ndarray, which) -> None:
        kin = world.kinematics()
        for k in which:
            rows.append(_row(trial, int(k), world.t, kin[k], cmd[k], rewards[k], phase))

    def finish_invalid(reason: str) -> EpisodeResult:
        world.valid = False
        world.reason = reason
        kin = world.kinematics()
        for k in range(n):
            rows.append(_row(trial, k, world.t, kin[k], np.zeros(3), 0.0, "invalid"))
        return _result(world, trial, rows)

    if not world.valid:
        return finish_invalid(world.reason)

    try:
        steps = int(round(cfg.takeoff_time / cfg.decision_period))
        for _ in range(steps):
            cmd = _hold_commands(world, world.home)
            _period(world, cmd)
            log("takeoff", cmd, reward(observations(world), cmd, weights), range(n))
        world.phase = "relocate" if world.path.length > 0 else ("settle" if world.adaptive else "land")
        while world.phase == "relocate":
            cmd = _hold_commands(world, world.home)
            _period(world, cmd)
            log("relocate", cmd, reward(observations(world), cmd, weights), range(n))
        if world.phase == "settle":
            world.quiet_ticks = 0
            start_ticks = world.gear_ticks
            while world.quiet_ticks < world.platform.cfg.settle_ticks:
                if world.gear_ticks - start_ticks >= world.platform.cfg.max_ticks:
                    return finish_invalid("platform did not settle after relocation")
                cmd = _hold_commands(world, world.home)
                _period(world, cmd)
                log("settle", cmd, reward(observations(world), cmd, weights), range(n))
            world.phase = "land"
        if np.any(world.drones.status != FLYING):
            return finish_invalid("drone lost before the landing phase")
    except GearError as exc:
        return finish_invalid(f"gear failure: {exc}")
    except FloatingPointError as exc:
        raise EpisodeAborted(f"non-finite drone state at t={world.t:.3f}: {exc}") from exc

    obs = observations(world)
    tilt = world.tilt_deg
    done = np.zeros(n, dtype=bool)
    while not done.all():
        actions = np.asarray(pilot(obs), dtype=float)
        try:
            obs, rewards, dones, info = env_step(world, actions)
        except GearError as exc:
            return finish_invalid(f"gear failure: {exc}")
        log("land", world.last_actions, rewards, np.flatnonzero(info["flying"]))
        for k in np.flatnonzero(dones & ~done):
            rows.extend(_final_rows(world, trial, int(k), int(world.drones.status[k])))
        done |= dones
    result = _result(world, trial, rows)
    result.tilt_deg = tilt
    return result


def _result(world: World, trial: int, rows: list) -> EpisodeResult:
    outcomes = trial_outcomes(rows, world.cfg.pad_radius).get(trial, [])
    sep, misses = separation_stats(rows, world.cfg.min_separation).get(trial, (math.inf, 0))
    return EpisodeResult(world.scenario, trial, world.seed, world.valid, world.reason, outcomes, rows,
                         world.tilt_deg if world.valid else float("nan"), sep, misses)


# ---------------------------------------------------------------- metrics from rows


def trial_outcomes(rows, pad_radius: float) -> dict:
    """Per-trial drone outcomes rebuilt from the ``pad`` and end-state rows."""
    pads: dict = {}
    out: dict = {}
    for r in rows:
        key = (r["trial"], r["drone"])
        if r["phase"] == "pad":
            pads[key] = (np.array([r["x"], r["y"], r["z"]]), np.array([r["vx"], r["vy"], r["vz"]]))
        elif r["phase"] in ("touchdown", "crash", "timeout"):
            if key not in pads:
                raise ValueError(f"trial {key[0]} drone {key[1]}: end row without a pad row")
            centre, normal = pads[key]
            pos = np.array([r["x"], r["y"], r["z"]])
            shift = landing_shift(pos, centre, normal)
            landed = r["phase"] == "touchdown" and shift <= pad_radius * 100.0
            out.setdefault(r["trial"], []).append(DroneOutcome(
                r["drone"], -1, r["phase"], pos, centre, normal, shift, landed, r["phase"] == "crash"))
    for v in out.values():
        v.sort(key=lambda o: o.drone)
    return out


def trial_returns(rows, gamma: float) -> dict:
    """Discounted landing-phase return per (trial, drone)."""
    rewards: dict = {}
    for r in rows:
        if r["phase"] == "land":
            rewards.setdefault((r["trial"], r["drone"]), []).append(r["reward"])
    out = {}
    for key, rs in rewards.items():
        total, scale = 0.0, 1.0
        for x in rs:
            total += scale * x
            scale *= gamma
        out[key] = total
    return out


def separation_stats(rows, threshold: float) -> dict:
    """Closest approach between airborne drones and the count of samples under ``threshold``."""
    samples: dict = {}
    for r in rows:
        if r["phase"] in FLIGHT_PHASES:
            samples.setdefault((r["trial"], r["t"]), []).append((r["x"], r["y"], r["z"]))
    out: dict = {}
    for (trial, _), pts in samples.items():
        sep, misses = out.get(trial, (math.inf, 0))
        if len(pts) == 2:
            d = math.dist(pts[0], pts[1])
            sep = min(sep, d)
            misses += d < threshold
        out[trial] = (sep, misses)
    return out


def summarize(rows, pad_radius: float, gamma: float, min_separation: float = 0.15) -> dict:
    """Scenario metrics computed only from trajectory rows.

    The landing shift is averaged over every drone of every valid trial:
    touchdown point for drones that landed, end position otherwise.
    """
    trials = sorted({r["trial"] for r in rows})
    invalid = sorted({r["trial"] for r in rows if r["phase"] == "invalid"})
    outcomes = trial_outcomes(rows, pad_radius)
    returns = trial_returns(rows, gamma)
    seps = separation_stats(rows, min_separation)
    drones = [o for t in trials if t not in invalid for o in outcomes.get(t, [])]
    shifts = np.array([o.shift_cm for o in drones])
    landed = [o for o in drones if o.status == "touchdown"]
    ret = [returns[k] for k in sorted(returns) if k[0] not in invalid]
    nan = float("nan")
    return {
        "trials": len(trials),
        "valid_trials": len(trials) - len(invalid),
        "drones": len(drones),
        "mean_shift_cm": float(shifts.mean()) if len(shifts) else nan,
        "std_shift_cm": float(shifts.std()) if len(shifts) else nan,
        "mean_touchdown_shift_cm": float(np.mean([o.shift_cm for o in landed])) if landed else nan,
        "success_rate": float(np.mean([o.landed_on_pad for o in drones])) if drones else nan,
        "touchdown_rate": len(landed) / len(drones) if drones else nan,
        "crashes": sum(o.collision for o in drones),
        "timeouts": sum(o.status == "timeout" for o in drones),
        "mean_discounted_return": float(np.mean(ret)) if ret else nan,
        "min_separation_m": min((seps[t][0] for t in seps), default=nan),
        "near_misses": int(sum(seps[t][1] for t in seps)),
    }
