"""Relative-state observations, landing reward and discounted return."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OBS_DIM = 9
ACT_DIM = 3


@dataclass(frozen=True)
class RewardWeights:
    """``alpha``/``beta`` weight velocity/acceleration error, ``control``
    weights the commanded speed, ``bonus`` is paid while within
    ``threshold`` metres of the target."""

    alpha: float = 0.1
    beta: float = 0.01
    control: float = 0.05
    bonus: float = 2.0
    threshold: float = 0.1

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.control, self.bonus) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.threshold <= 0:
            raise ValueError("proximity threshold must be positive")


def observe(drone_kin, target_kin) -> np.ndarray:
    """Target-minus-drone linear state ``[dp, dv, da]`` (last axis of size 9)."""
    return np.asarray(target_kin, dtype=float) - np.asarray(drone_kin, dtype=float)


def reward(delta, action, w: RewardWeights):
    """Per-step landing reward; works on single vectors or batches."""
    delta = np.asarray(delta, dtype=float)
    action = np.asarray(action, dtype=float)
    e_d = np.linalg.norm(delta[..., 0:3], axis=-1)
    e_v = np.linalg.norm(delta[..., 3:6], axis=-1)
    e_a = np.linalg.norm(delta[..., 6:9], axis=-1)
    e_u = np.linalg.norm(action, axis=-1)
    r = -e_d - w.alpha * e_v - w.beta * e_a - w.control * e_u + np.where(e_d < w.threshold, w.bonus, 0.0)
    return float(r) if np.ndim(r) == 0 else r


def discounted_return(rewards, gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ValueError("discount must lie in (0, 1)")
    total = 0.0
    scale = 1.0
    for r in rewards:
        total += scale * float(r)
        scale *= gamma
    return total


def resting_value(delta_pos, w: RewardWeights, gamma: float, success):
    """Discounted value of staying put forever after an episode-ending event.

    A drone that touched down keeps earning the reward of a motionless drone
    at its touchdown point; a crashed one earns the same without the
    proximity bonus. The result is ``V(s')`` of the resting state, i.e. the
    sum of ``gamma**k * r_rest`` for ``k >= 0``.
    """
    e_d = np.linalg.norm(np.asarray(delta_pos, dtype=float), axis=-1)
    bonus = np.where(np.asarray(success) & (e_d < w.threshold), w.bonus, 0.0)
    return (bonus - e_d) / (1.0 - gamma)
