"""Run configuration: one TOML file with a section per module.

Every tunable lives here so an output directory can archive exactly what
produced it. Missing keys take their defaults; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import tomli
import tomli_w

from .control import CascadeGains
from .dynamics import DroneParams
from .env import EpisodeConfig
from .gear import GearConfig
from .rl.core import RewardWeights
from .rl.curriculum import CurriculumConfig
from .rl.policy import Architecture
from .rl.ppo import PPOConfig
from .rl.task import TaskConfig
from .rl.train import DEFAULT_OBS_SCALE, TrainConfig

CONFIG_NAME = "config.toml"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSettings:
    total_steps: int = 1_000_000
    lanes: int = 16
    checkpoint_interval: int = 100_000
    init_log_std: float = -0.5
    obs_scale: tuple[float, ...] = DEFAULT_OBS_SCALE
    final_std: float = 0.05


@dataclass(frozen=True)
class EvalSettings:
    deterministic: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    drone: DroneParams = field(default_factory=DroneParams)
    control: CascadeGains = field(default_factory=CascadeGains)
    gear: GearConfig = field(default_factory=GearConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    network: Architecture = field(default_factory=Architecture)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self) -> None:
        t, e = self.task, self.episode
        pairs = [("physics_dt", t.physics_dt, e.physics_dt), ("decision_period", t.decision_period, e.decision_period),
                 ("deck_half", t.deck_half, e.deck_half), ("pad_offset", t.pad_offset, e.pad_offset)]
        for name, a, b in pairs:
            if a != b:
                raise ConfigError(f"task.{name} = {a} disagrees with episode.{name} = {b}")
        if len(self.train.obs_scale) != self.network.obs_dim:
            raise ConfigError("train.obs_scale must have one entry per observation component")
        if self.network.action_scale > self.control.max_speed:
            raise ConfigError("network.action_scale exceeds control.max_speed")

    def train_config(self) -> TrainConfig:
        s = self.train
        return TrainConfig(s.total_steps, s.lanes, s.checkpoint_interval, s.init_log_std, tuple(s.obs_scale),
                           s.final_std, self.network, self.ppo, self.curriculum, self.task, self.reward, self.drone,
                           self.control)

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "RunConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        return dataclasses.replace(self, **changes)


def _coerce(typ, value, where: str):
    origin = typing.get_origin(typ)
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if origin is tuple:
        args = typing.get_args(typ)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected an array, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(a, v, where) for a, v in zip(args, value))
    raise ConfigError(f"{where}: unsupported field type {typ}")


def from_table(cls, data, where: str = ""):
    """Build dataclass ``cls`` from a TOML table, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(data) - known)
    if unknown:
        label = f"[{where}]" if where else "top level"
        raise ConfigError(f"unknown key(s) in {label}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        typ = hints[name]
        path = f"{where}.{name}" if where else name
        if is_dataclass(typ):
            kwargs[name] = from_table(typ, value, path)
        else:
            kwargs[name] = _coerce(typ, value, path)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where or 'top level'}] {exc}") from exc


def to_table(obj) -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            out[f.name] = to_table(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def dumps(cfg: RunConfig) -> str:
    table = to_table(cfg)
    # scalars must precede tables in TOML
    scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in table.items() if isinstance(v, dict)}
    return tomli_w.dumps({**scalars, **tables})


def loads(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_table(RunConfig, data)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def save_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cfg))
    return path
