"""Vectorised single-drone tasks for the two curriculum stages.

Each lane is an isolated drone with its own seeded random stream. In the
hold stage the target is a point in free air; in the set stage it is a
pad centre on a randomly placed, slightly tilted deck.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dynamics import DroneParams
from ..control import CascadeGains
from ..fastsim import DECK_CRASH, FLOOR_CRASH, FLYING, TOUCHDOWN, FlightBatch, FlightKernel
from ..gear import rotation_rpy
from .core import RewardWeights, observe, resting_value, reward
from .curriculum import Stage


@dataclass(frozen=True)
class TaskConfig:
    decision_period: float = 0.1
    physics_dt: float = 0.002
    hold_horizon: float = 8.0
    set_horizon: float = 15.0
    hold_radius: float = 0.4
    start_distance: float = 1.5
    start_jitter: float = 0.3
    near_start_fraction: float = 0.3
    deck_half: float = 0.3
    pad_offset: float = 0.2
    max_deck_tilt_deg: float = 2.0
    arena_half: float = 3.0
    arena_ceiling: float = 3.0
    # an airborne drone at the set-stage time limit is scored as a failed landing
    timeout_is_failure: bool = True


def deck_row(centre, rot, half_u: float, half_v: float) -> np.ndarray:
    """Pack a deck plane for the flight kernel: centre, normal, in-plane axes, extents."""
    return np.concatenate([centre, rot[:, 2], rot[:, 0], rot[:, 1], [half_u, half_v, 1.0]])


class LandingTask:
    def __init__(self, lanes: int, seed: int, weights: RewardWeights = RewardWeights(),
                 cfg: TaskConfig = TaskConfig(), params: DroneParams = DroneParams(),
                 gains: CascadeGains = CascadeGains(), gamma: float = 0.99):
        self.n = lanes
        self.cfg = cfg
        self.weights = weights
        self.gamma = gamma
        self.kernel = FlightKernel(params, gains, cfg.physics_dt)
        self.substeps = int(round(cfg.decision_period / cfg.physics_dt))
        self.bound = gains.max_speed
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(lanes)]
        self.batch = FlightBatch.at_rest(np.zeros((lanes, 3)))
        self.target = np.zeros((lanes, 9))
        self.deck = np.zeros((lanes, 15))
        self.floor = np.zeros(lanes)
        self.t = np.zeros(lanes, dtype=int)
        self.horizon = np.zeros(lanes, dtype=int)
        self.stage = [Stage.POSITION_HOLD] * lanes
        self.ep_return = np.zeros(lanes)
        self.next_stage = Stage.POSITION_HOLD

    # -- episode setup

    def _reset_lane(self, i: int) -> None:
        rng, cfg = self.rngs[i], self.cfg
        stage = self.next_stage
        self.stage[i] = stage
        self.t[i] = 0
        self.ep_return[i] = 0.0
        self.target[i] = 0.0
        if stage is Stage.POSITION_HOLD:
            goal = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.6, 1.5)])
            start = goal + rng.uniform(-cfg.hold_radius, cfg.hold_radius, 3)
            self.deck[i] = 0.0
            self.horizon[i] = int(round(cfg.hold_horizon / cfg.decision_period))
        else:
            lim = math.radians(cfg.max_deck_tilt_deg)
            rot = rotation_rpy(rng.uniform(-lim, lim), rng.uniform(-lim, lim), rng.uniform(-math.pi, math.pi))
            centre = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0.1, 0.45)])
            pad = centre + rot @ np.array([0.0, rng.choice([-1.0, 1.0]) * cfg.pad_offset, 0.0])
            # aim the centre of mass at where it rests once the feet touch the pad
            goal = pad + self.kernel.params.foot_height * rot[:, 2]
            self.deck[i] = deck_row(centre, rot, cfg.deck_half, cfg.deck_half)
            bearing = rng.uniform(-math.pi, math.pi)
            if rng.uniform() < cfg.near_start_fraction:
                dist, height = rng.uniform(0.0, 0.5), rng.uniform(0.1, 0.6)
            else:
                dist = cfg.start_distance + rng.uniform(-cfg.start_jitter, cfg.start_jitter)
                height = rng.uniform(0.3, 1.2)
            start = goal + np.array([dist * math.cos(bearing), dist * math.sin(bearing), height])
            self.horizon[i] = int(round(cfg.set_horizon / cfg.decision_period))
        self.target[i, :3] = goal
        self.floor[i] = 0.0
        b = self.batch
        b.pos[i] = start
        b.vel[i] = b.acc[i] = b.rates[i] = 0.0
        b.quat[i] = (1.0, 0.0, 0.0, 0.0)
        b.pid[i] = 0.0
        b.status[i] = FLYING

    def reset(self) -> np.ndarray:
        for i in range(self.n):
            self._reset_lane(i)
        return self.observations()

    def observations(self) -> np.ndarray:
        kin = np.concatenate([self.batch.pos, self.batch.vel, self.batch.acc], axis=1)
        return observe(kin, self.target)

    # -- stepping

    def step(self, actions):
        """Advance every lane by one decision period.

        Returns ``(obs, rewards, dones, next_values, truncated, final_obs, finished)``
        where ``finished`` lists ``(lane, return, stage, status)`` of ended episodes.
        ``next_values`` is the resting value for touchdown/crash ends and for
        set-stage timeouts; for hold-stage time-limit ends (``truncated``) the
        caller bootstraps from ``final_obs``.
        """
        actions = np.clip(np.asarray(actions, dtype=float), -self.bound, self.bound)
        self.kernel.run(self.batch, actions, self.substeps, deck=self.deck, floor=self.floor)
        obs = self.observations()
        out = (np.abs(self.batch.pos[:, :2]) > self.cfg.arena_half).any(axis=1) | (
            self.batch.pos[:, 2] > self.cfg.arena_ceiling)
        rewards = reward(obs, actions, self.weights)
        self.ep_return += rewards
        self.t += 1
        status = self.batch.status.copy()
        status[out & (status == FLYING)] = FLOOR_CRASH
        ended = status != FLYING
        truncated = (~ended) & (self.t >= self.horizon)
        if self.cfg.timeout_is_failure:
            failed = truncated & np.array([s is Stage.POSITION_SET for s in self.stage])
            truncated &= ~failed
        else:
            failed = np.zeros(self.n, dtype=bool)
        dones = ended | truncated | failed
        terminal = ended | failed
        next_values = np.zeros(self.n)
        if terminal.any():
            next_values[terminal] = resting_value(obs[terminal, :3], self.weights, self.gamma,
                                                  status[terminal] == TOUCHDOWN)
        final_obs = obs.copy()
        finished = []
        for i in np.flatnonzero(dones):
            finished.append((int(i), float(self.ep_return[i]), self.stage[i], int(status[i])))
            self._reset_lane(i)
        if finished:
            obs = self.observations()
        return obs, rewards, dones, next_values, truncated, final_obs, finished


STATUS_NAMES = {FLYING: "timeout", TOUCHDOWN: "touchdown", DECK_CRASH: "deck_crash", FLOOR_CRASH: "floor_crash"}
