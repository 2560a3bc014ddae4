"""Diagonal-Gaussian tanh-MLP policy and value network with hand-written backprop.

All parameters live in one flat float64 vector so the optimiser, the
checkpoint writer and finite-difference checks can treat them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ACT_DIM, OBS_DIM

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Architecture:
    obs_dim: int = OBS_DIM
    hidden: tuple[int, ...] = (64, 64)
    act_dim: int = ACT_DIM
    action_scale: float = 1.0

    def layer_shapes(self, out_dim: int) -> list[tuple[int, int]]:
        sizes = [self.obs_dim, *self.hidden, out_dim]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    def as_dict(self) -> dict:
        return {"obs_dim": self.obs_dim, "hidden": list(self.hidden), "act_dim": self.act_dim,
                "action_scale": self.action_scale}


def _slices(arch: Architecture):
    """Offsets of every (W, b) pair for the mean net, the value net and log-std."""
    layout = {"pi": [], "v": []}
    off = 0
    for name, out in (("pi", arch.act_dim), ("v", 1)):
        for rows, cols in arch.layer_shapes(out):
            w = (off, off + rows * cols, (rows, cols))
            off += rows * cols
            b = (off, off + rows, (rows,))
            off += rows
            layout[name].append((w, b))
    layout["log_std"] = (off, off + arch.act_dim)
    return layout, off + arch.act_dim


@dataclass
class PolicyParams:
    arch: Architecture
    theta: np.ndarray
    obs_scale: np.ndarray = field(default_factory=lambda: np.ones(OBS_DIM))

    def __post_init__(self) -> None:
        self._layout, size = _slices(self.arch)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (size,):
            raise ValueError(f"parameter vector has shape {self.theta.shape}, expected ({size},)")
        self.obs_scale = np.asarray(self.obs_scale, dtype=float)

    def layers(self, name: str, theta: np.ndarray | None = None):
        theta = self.theta if theta is None else theta
        return [
            (theta[w0:w1].reshape(ws), theta[b0:b1]) for (w0, w1, ws), (b0, b1, _) in self._layout[name]
        ]

    @property
    def log_std(self) -> np.ndarray:
        a, b = self._layout["log_std"]
        return self.theta[a:b]

    def clamp_log_std(self) -> None:
        a, b = self._layout["log_std"]
        np.clip(self.theta[a:b], LOG_STD_MIN, LOG_STD_MAX, out=self.theta[a:b])

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.theta.copy(), self.obs_scale.copy())

    @property
    def size(self) -> int:
        return self.theta.size


def init_params(arch: Architecture, rng: np.random.Generator, log_std: float = -0.5,
                obs_scale=None) -> PolicyParams:
    """Orthogonal-ish scaled Gaussian init; small output layer for the mean."""
    layout, size = _slices(arch)
    theta = np.zeros(size)
    for name in ("pi", "v"):
        n = len(layout[name])
        for i, ((w0, w1, shape), _) in enumerate(layout[name]):
            gain = 0.01 if (name == "pi" and i == n - 1) else (1.0 if i == n - 1 else math.sqrt(2.0))
            theta[w0:w1] = (rng.standard_normal(shape) * gain / math.sqrt(shape[1])).ravel()
    a, b = layout["log_std"]
    theta[a:b] = log_std
    return PolicyParams(arch, theta, np.ones(arch.obs_dim) if obs_scale is None else obs_scale)


def _mlp_forward(layers, x):
    """Returns output and the per-layer activations needed for backprop."""
    acts = [x]
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        h = np.tanh(z) if i < len(layers) - 1 else z
        acts.append(h)
    return h, acts


def _mlp_backward(layers, acts, grad_out, grads):
    """Accumulate parameter gradients; ``grads`` is a list of (dW, db) views."""
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_in = acts[i]
        grads[i][0][...] += g.T @ h_in
        grads[i][1][...] += g.sum(axis=0)
        if i > 0:
            g = (g @ w) * (1.0 - acts[i] ** 2)


def policy_forward(params: PolicyParams, obs):
    """Mean action, per-dimension std and state value for observation(s)."""
    x = np.atleast_2d(np.asarray(obs, dtype=float)) * params.obs_scale
    out, _ = _mlp_forward(params.layers("pi"), x)
    mean = params.arch.action_scale * np.tanh(out)
    value, _ = _mlp_forward(params.layers("v"), x)
    std = np.exp(params.log_std)
    if np.ndim(obs) == 1:
        return mean[0], std.copy(), float(value[0, 0])
    return mean, std.copy(), value[:, 0]


def gaussian_log_prob(action, mean, std):
    action = np.asarray(action, dtype=float)
    z = (action - mean) / std
    return np.sum(-0.5 * z * z - np.log(std) - 0.5 * LOG_2PI, axis=-1)


def sample_action(mean, std, rng: np.random.Generator, bound: float | None = None, noise=None):
    """Draw ``mean + std * eps``; the log-probability is of the unclamped draw."""
    mean = np.asarray(mean, dtype=float)
    eps = rng.standard_normal(mean.shape) if noise is None else np.asarray(noise, dtype=float)
    raw = mean + std * eps
    logp = gaussian_log_prob(raw, mean, std)
    action = raw if bound is None else np.clip(raw, -bound, bound)
    return action, raw, logp


def entropy(std) -> float:
    return float(np.sum(np.log(std) + 0.5 * (LOG_2PI + 1.0)))


@dataclass
class ForwardCache:
    mean: np.ndarray
    pre_tanh: np.ndarray
    value: np.ndarray
    pi_acts: list
    v_acts: list


def forward_with_cache(params: PolicyParams, obs, theta=None) -> ForwardCache:
    x = np.asarray(obs, dtype=float) * params.obs_scale
    out, pi_acts = _mlp_forward(params.layers("pi", theta), x)
    mean = params.arch.action_scale * np.tanh(out)
    value, v_acts = _mlp_forward(params.layers("v", theta), x)
    return ForwardCache(mean, out, value[:, 0], pi_acts, v_acts)


def backward(params: PolicyParams, cache: ForwardCache, d_mean, d_log_std, d_value, theta=None) -> np.ndarray:
    """Gradient of a scalar loss given its partials w.r.t. mean, log-std and value."""
    grad = np.zeros_like(params.theta)
    layout = params._layout
    t = np.tanh(cache.pre_tanh)
    d_out = d_mean * params.arch.action_scale * (1.0 - t * t)
    for name, d_top, acts in (("pi", d_out, cache.pi_acts), ("v", d_value[:, None], cache.v_acts)):
        views = [
            (grad[w0:w1].reshape(ws), grad[b0:b1]) for (w0, w1, ws), (b0, b1, _) in layout[name]
        ]
        _mlp_backward(params.layers(name, theta), acts, d_top, views)
    a, b = layout["log_std"]
    grad[a:b] += d_log_std
    return grad
