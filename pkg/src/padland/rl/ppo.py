"""Rollout storage, generalised advantage estimation and clipped-surrogate updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policy import LOG_2PI, PolicyParams, backward, forward_with_cache


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 4
    minibatch: int = 256
    learning_rate: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    rollout_steps: int = 4096


@dataclass
class RolloutBuffer:
    """Time-major arrays of shape ``(T, N, ...)`` for ``N`` parallel lanes.

    ``next_values`` holds the bootstrap used when ``dones`` is set: the
    value of the resting state after a touchdown or crash, or the critic's
    estimate when the time limit cut the episode.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    next_values: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def empty(cls, steps: int, lanes: int, obs_dim: int, act_dim: int) -> "RolloutBuffer":
        z = lambda *s: np.zeros((steps, lanes) + s)
        return cls(z(obs_dim), z(act_dim), z(), z(), z(), np.zeros((steps, lanes), dtype=bool), z(), np.zeros(lanes))

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape((-1,) + a.shape[2:])


def compute_gae(buf: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    """Fill ``advantages`` and ``returns``; episode ends cut the recursion."""
    rewards = np.atleast_2d(buf.rewards.T).T if buf.rewards.ndim == 1 else buf.rewards
    steps = rewards.shape[0]
    values = buf.values.reshape(rewards.shape)
    dones = buf.dones.reshape(rewards.shape)
    nxt = buf.next_values.reshape(rewards.shape)
    last = np.asarray(buf.last_values, dtype=float).reshape(rewards.shape[1:])
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in range(steps - 1, -1, -1):
        following = last if t == steps - 1 else values[t + 1]
        boot = np.where(dones[t], nxt[t], following)
        delta = rewards[t] + gamma * boot - values[t]
        running = delta + gamma * lam * np.where(dones[t], 0.0, running)
        adv[t] = running
    buf.advantages = adv.reshape(buf.rewards.shape)
    buf.returns = (adv + values).reshape(buf.rewards.shape)
    return buf


def normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-12)


@dataclass
class LossParts:
    total: float
    policy: float
    value: float
    entropy: float
    mean_ratio: float
    clip_fraction: float


def ppo_loss_and_grad(params: PolicyParams, obs, actions, old_logp, adv, returns, cfg: PPOConfig,
                      theta: np.ndarray | None = None):
    """Loss to minimise: ``-surrogate + c_v * value_mse - c_e * entropy``, with its gradient."""
    theta = params.theta if theta is None else theta
    n = len(obs)
    cache = forward_with_cache(params, obs, theta)
    a, b = params._layout["log_std"]
    log_std = theta[a:b]
    std = np.exp(log_std)
    z = (actions - cache.mean) / std
    logp = np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)
    ratio = np.exp(logp - old_logp)
    lo, hi = 1.0 - cfg.clip, 1.0 + cfg.clip
    unclipped = ratio * adv
    clipped = np.clip(ratio, lo, hi) * adv
    surrogate = np.minimum(unclipped, clipped)
    policy_loss = -surrogate.mean()
    value_err = cache.value - returns
    value_loss = np.mean(value_err**2)
    ent = float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent

    # gradient flows only through the unclipped branch when it is the active minimum
    active = (unclipped <= clipped) | ((ratio > lo) & (ratio < hi))
    d_logp = np.where(active, -adv * ratio / n, 0.0)
    d_mean = d_logp[:, None] * z / std
    d_log_std = np.sum(d_logp[:, None] * (z * z - 1.0), axis=0) - cfg.entropy_coef
    d_value = cfg.value_coef * 2.0 * value_err / n
    grad = backward(params, cache, d_mean, d_log_std, d_value, theta)

    parts = LossParts(float(total), float(policy_loss), float(value_loss), ent, float(ratio.mean()),
                      float(np.mean((ratio < lo) | (ratio > hi))))
    return parts, grad


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    mean_ratio: float = 0.0
    clip_fraction: float = 0.0
    first_epoch_ratio: float = 1.0
    batches: int = 0
    history: list = field(default_factory=list)


def ppo_update(buf: RolloutBuffer, params: PolicyParams, cfg: PPOConfig, rng: np.random.Generator,
               optimizer: Adam | None = None) -> tuple[PolicyParams, UpdateStats]:
    """Several epochs of minibatch gradient steps on the clipped surrogate.

    Returns updated parameters (a new object) and averaged statistics. A
    non-finite loss aborts the update and leaves ``params`` untouched.
    """
    if buf.advantages is None:
        raise ValueError("compute advantages before updating")
    optimizer = optimizer or Adam(cfg.learning_rate)
    obs = buf.flat("obs")
    actions = buf.flat("actions")
    old_logp = buf.flat("log_probs")
    adv = normalize(buf.advantages.reshape(-1))
    returns = buf.returns.reshape(-1)
    new = params.copy()
    stats = UpdateStats()
    n = len(obs)
    mb = min(cfg.minibatch, n)
    first_ratios = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = order[start:start + mb]
            parts, grad = ppo_loss_and_grad(new, obs[idx], actions[idx], old_logp[idx], adv[idx], returns[idx], cfg)
            if not (np.isfinite(parts.total) and np.all(np.isfinite(grad))):
                raise NonFiniteLossError(f"non-finite loss in epoch {epoch}: {parts}")
            if epoch == 0 and start == 0:
                first_ratios.append(parts.mean_ratio)
            norm = np.linalg.norm(grad)
            if norm > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / norm)
            optimizer.step(new.theta, grad)
            new.clamp_log_std()
            stats.policy_loss += parts.policy
            stats.value_loss += parts.value
            stats.entropy += parts.entropy
            stats.mean_ratio += parts.mean_ratio
            stats.clip_fraction += parts.clip_fraction
            stats.batches += 1
    if stats.batches:
        for name in ("policy_loss", "value_loss", "entropy", "mean_ratio", "clip_fraction"):
            setattr(stats, name, getattr(stats, name) / stats.batches)
    stats.first_epoch_ratio = first_ratios[0] if first_ratios else 1.0
    return new, stats
