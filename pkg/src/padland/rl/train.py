"""Curriculum PPO training loop, checkpoints and the training-curve CSV."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..control import CascadeGains
from ..dynamics import DroneParams
from .core import RewardWeights
from .curriculum import Curriculum, CurriculumConfig, Stage
from .policy import Architecture, PolicyParams, init_params, policy_forward, sample_action
from .ppo import Adam, PPOConfig, RolloutBuffer, compute_gae, ppo_update
from .task import LandingTask, TaskConfig

CHECKPOINT_FORMAT = "padland-policy"
CHECKPOINT_VERSION = 1
CSV_COLUMNS = ("step", "mean_return", "policy_loss", "value_loss", "entropy", "clip_fraction", "stage")
DEFAULT_OBS_SCALE = (2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.1)


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 600_000
    lanes: int = 16
    checkpoint_interval: int = 100_000
    init_log_std: float = -0.5
    obs_scale: tuple[float, ...] = DEFAULT_OBS_SCALE
    # exploration std ceiling, eased from exp(init_log_std) to this by the last step
    final_std: float = 0.05
    arch: Architecture = Architecture()
    ppo: PPOConfig = PPOConfig()
    curriculum: CurriculumConfig = CurriculumConfig()
    task: TaskConfig = TaskConfig()
    weights: RewardWeights = RewardWeights()
    drone: DroneParams = DroneParams()
    gains: CascadeGains = CascadeGains()

    def __post_init__(self) -> None:
        if not 0.0 < self.final_std:
            raise ValueError("final_std must be positive")


@dataclass
class Checkpoint:
    params: PolicyParams
    stage: Stage
    step: int
    seed: int
    adam: Adam | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Plain-text JSON weights behind an architecture header; floats round-trip exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": ckpt.params.arch.as_dict(),
        "stage": ckpt.stage.value,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "obs_scale": ckpt.params.obs_scale.tolist(),
        "theta": ckpt.params.theta.tolist(),
        "meta": ckpt.meta,
    }
    if ckpt.adam is not None and ckpt.adam.m is not None:
        doc["adam"] = {"t": ckpt.adam.t, "lr": ckpt.adam.lr, "m": ckpt.adam.m.tolist(), "v": ckpt.adam.v.tolist()}
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_checkpoint(path, expect: Architecture | None = None) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    a = doc["architecture"]
    arch = Architecture(a["obs_dim"], tuple(a["hidden"]), a["act_dim"], a["action_scale"])
    if expect is not None and arch != expect:
        raise CheckpointError(f"{path}: architecture {arch} does not match configured {expect}")
    try:
        params = PolicyParams(arch, np.array(doc["theta"], dtype=float), np.array(doc["obs_scale"], dtype=float))
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(params.theta)):
        raise CheckpointError(f"{path}: non-finite weights")
    adam = None
    if "adam" in doc:
        d = doc["adam"]
        adam = Adam(d["lr"], m=np.array(d["m"]), v=np.array(d["v"]), t=d["t"])
    return Checkpoint(params, Stage(doc["stage"]), int(doc["step"]), int(doc["seed"]), adam, doc.get("meta", {}))


@dataclass
class TrainResult:
    params: PolicyParams
    stage: Stage
    steps: int
    rows: list
    checkpoints: list


def _finite_or_blank(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ""


class Trainer:
    """Runs curriculum training; ``out_dir`` receives checkpoints and ``training.csv``."""

    def __init__(self, cfg: TrainConfig, seed: int, out_dir=None, resume: Checkpoint | None = None,
                 stage: Stage | None = None):
        self.cfg = cfg
        self.seed = seed
        self.out = Path(out_dir) if out_dir is not None else None
        self.curriculum = Curriculum(cfg.curriculum)
        if resume is not None:
            if resume.params.arch != cfg.arch:
                raise CheckpointError("checkpoint architecture does not match configuration")
            self.params = resume.params.copy()
            self.adam = resume.adam or Adam(cfg.ppo.learning_rate)
            self.adam.lr = cfg.ppo.learning_rate
            self.steps = resume.step
            self.curriculum.stage = resume.stage
        else:
            init_rng = np.random.default_rng([seed, 0])
            self.params = init_params(cfg.arch, init_rng, cfg.init_log_std, np.array(cfg.obs_scale))
            self.adam = Adam(cfg.ppo.learning_rate)
            self.steps = 0
        if stage is not None:
            self.curriculum.stage = stage
        # the stream depends on the resume point so continued runs do not replay old noise
        self.rng = np.random.default_rng([seed, 1, self.steps])
        self.task = LandingTask(cfg.lanes, int(np.random.SeedSequence([seed, 2, self.steps]).generate_state(1)[0]),
                                cfg.weights, cfg.task, cfg.drone, cfg.gains, cfg.ppo.gamma)
        self.task.next_stage = self.curriculum.stage
        self.rows: list[dict] = []
        self.saved: list[Path] = []
        self._next_ckpt = (self.steps // cfg.checkpoint_interval + 1) * cfg.checkpoint_interval

    def _checkpoint(self, tag: str) -> None:
        if self.out is None:
            return
        path = self.out / f"checkpoint_{tag}.json"
        save_checkpoint(path, Checkpoint(self.params, self.curriculum.stage, self.steps, self.seed, self.adam))
        save_checkpoint(self.out / "checkpoint_latest.json",
                        Checkpoint(self.params, self.curriculum.stage, self.steps, self.seed, self.adam))
        self.saved.append(path)

    def _append_row(self, row: dict) -> None:
        self.rows.append(row)
        if self.out is None:
            return
        path = self.out / "training.csv"
        new = not path.exists()
        with path.open("a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(CSV_COLUMNS)
            w.writerow([row["step"], _finite_or_blank(row["mean_return"]), repr(row["policy_loss"]),
                        repr(row["value_loss"]), repr(row["entropy"]), repr(row["clip_fraction"]), row["stage"]])

    def log_std_cap(self, steps: int, total: int) -> float:
        """Ceiling on the policy log-std, log-linear from the initial value to ``final_std``.

        Late rollouts then act almost like the deterministic policy used at
        evaluation, so a mean action that only lands thanks to noise is penalised.
        """
        frac = min(1.0, steps / max(total, 1))
        start = self.cfg.init_log_std
        return start + frac * (math.log(self.cfg.final_std) - start)

    def collect(self, obs: np.ndarray, horizon: int):
        n = self.cfg.lanes
        buf = RolloutBuffer.empty(horizon, n, self.cfg.arch.obs_dim, self.cfg.arch.act_dim)
        returns = []
        promoted = False
        bound = self.cfg.arch.action_scale
        for t in range(horizon):
            mean, std, value = policy_forward(self.params, obs)
            _, raw, logp = sample_action(mean, std, self.rng)
            nxt, rew, done, nv, trunc, final_obs, finished = self.task.step(np.clip(raw, -bound, bound))
            if trunc.any():
                _, _, v_final = policy_forward(self.params, final_obs[trunc])
                nv[trunc] = v_final
            buf.obs[t], buf.actions[t], buf.log_probs[t] = obs, raw, logp
            buf.rewards[t], buf.values[t], buf.dones[t], buf.next_values[t] = rew, value, done, nv
            for _, ret, stage, _ in finished:
                returns.append(ret)
                if stage is self.curriculum.stage and self.curriculum.record(ret):
                    promoted = True
                    self.task.next_stage = self.curriculum.stage
            obs = nxt
        _, _, buf.last_values = policy_forward(self.params, obs)
        return buf, obs, returns, promoted

    def train(self, total_steps: int | None = None) -> TrainResult:
        total = self.cfg.total_steps if total_steps is None else total_steps
        n = self.cfg.lanes
        horizon = max(1, self.cfg.ppo.rollout_steps // n)
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
        obs = self.task.reset()
        while self.steps < total:
            # the last rollout is shortened so training never exceeds ``total``
            h = min(horizon, (total - self.steps) // n)
            if h == 0:
                break
            buf, obs, returns, promoted = self.collect(obs, h)
            self.steps += h * n
            compute_gae(buf, self.cfg.ppo.gamma, self.cfg.ppo.lam)
            self.params, stats = ppo_update(buf, self.params, self.cfg.ppo, self.rng, self.adam)
            np.minimum(self.params.log_std, self.log_std_cap(self.steps, total), out=self.params.log_std)
            self._append_row({
                "step": self.steps,
                "mean_return": float(np.mean(returns)) if returns else float("nan"),
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "entropy": stats.entropy,
                "clip_fraction": stats.clip_fraction,
                "stage": self.curriculum.stage.value,
            })
            if promoted:
                self._checkpoint(f"promoted_{self.steps}")
            if self.steps >= self._next_ckpt:
                self._checkpoint(f"{self.steps}")
                self._next_ckpt += self.cfg.checkpoint_interval
        if self.out is not None:
            self._checkpoint("final")
        return TrainResult(self.params, self.curriculum.stage, self.steps, self.rows, self.saved)


def evaluate_returns(params: PolicyParams, stage: Stage, episodes: int, seed: int, cfg: TrainConfig,
                     deterministic: bool = True) -> np.ndarray:
    """Undiscounted episode returns of ``params`` on fresh seeded tasks of one stage."""
    lanes = min(episodes, cfg.lanes)
    task = LandingTask(lanes, seed, cfg.weights, cfg.task, cfg.drone, cfg.gains, cfg.ppo.gamma)
    task.next_stage = stage
    obs = task.reset()
    rng = np.random.default_rng(seed)
    out: list[float] = []
    active = np.ones(lanes, dtype=bool)
    started = lanes
    while len(out) < episodes:
        mean, std, _ = policy_forward(params, obs)
        act = mean if deterministic else sample_action(mean, std, rng)[1]
        obs, *_, finished = task.step(np.clip(act, -cfg.arch.action_scale, cfg.arch.action_scale))
        for lane, ret, _, _ in finished:
            if active[lane]:
                out.append(ret)
                if started < episodes:
                    started += 1
                else:
                    active[lane] = False
    return np.array(out[:episodes])
