"""Command-line entry point: ``train``, ``eval``, ``replay`` and ``gear-demo``.

Tunables come from the TOML config; flags only pick the command, the
config file, the seed and the output directory (plus the checkpoint,
scenario or file a command works on).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .config import CONFIG_NAME, ConfigError, RunConfig, load_config, save_config
from .env import EpisodeAborted, Scenario, run_episode, summarize, trial_seed
from .gear import GearError, Platform, Terrain, stabilize
from .io import TrajectoryError, compare_metrics, read_metrics, read_trajectory, write_metrics, write_trajectory
from .rl.curriculum import Stage
from .rl.policy import policy_forward, sample_action
from .rl.train import CheckpointError, Trainer, load_checkpoint

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2
REPLAY_TOL = 1e-9


class CommandError(RuntimeError):
    def __init__(self, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.code = code


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=getattr(args, "seed", None), output_dir=getattr(args, "out", None))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / CONFIG_NAME)
    return out


def trajectory_name(scenario: Scenario) -> str:
    return f"trajectory_{scenario.value}.csv"


def metrics_name(scenario: Scenario) -> str:
    return f"metrics_{scenario.value}.json"


# ---------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig, stage: Stage | None = None, resume=None, log=print):
    """Curriculum training into ``cfg.output_dir``; returns the trainer result."""
    out = _out_dir(cfg)
    ckpt = None
    if resume is not None:
        ckpt = load_checkpoint(resume, expect=cfg.network)
    else:
        (out / "training.csv").unlink(missing_ok=True)
    trainer = Trainer(cfg.train_config(), cfg.seed, out, resume=ckpt, stage=stage)
    log(f"training from step {trainer.steps} at stage {trainer.curriculum.stage.value} -> {cfg.train.total_steps} steps")
    result = trainer.train(cfg.train.total_steps)
    log(f"finished at step {result.steps}, stage {result.stage.value}; checkpoints in {out}")
    return result


def evaluate(cfg: RunConfig, params, scenario: Scenario) -> tuple[list, dict]:
    """Run ``cfg.episode.trials`` trials; returns trajectory rows and the summary."""
    if cfg.eval.deterministic:
        pilot = lambda obs: policy_forward(params, obs)[0]
    else:
        rng = np.random.default_rng([cfg.seed, 7])
        pilot = lambda obs: sample_action(*policy_forward(params, obs)[:2], rng)[0]
    rows: list = []
    for trial in range(cfg.episode.trials):
        res = run_episode(scenario, cfg.episode, trial_seed(cfg.seed, trial), pilot, trial,
                          cfg.reward, cfg.drone, cfg.control, cfg.gear)
        rows.extend(res.rows)
    return rows, summarize(rows, cfg.episode.pad_radius, cfg.ppo.gamma, cfg.episode.min_separation)


def cmd_eval(cfg: RunConfig, checkpoint, scenario: Scenario | str, log=print) -> dict:
    scenario = Scenario(scenario)
    ckpt = load_checkpoint(checkpoint, expect=cfg.network)
    out = _out_dir(cfg)
    rows, summary = evaluate(cfg, ckpt.params, scenario)
    metrics = {"scenario": scenario.value, "seed": cfg.seed, "checkpoint_step": ckpt.step,
               "checkpoint_stage": ckpt.stage.value, **summary}
    write_trajectory(out / trajectory_name(scenario), rows)
    write_metrics(out / metrics_name(scenario), metrics)
    log(f"{scenario.value}: {summary['trials']} trials, mean shift {summary['mean_shift_cm']:.3f} cm, "
        f"success {summary['success_rate']:.3f}")
    return metrics


def cmd_replay(cfg: RunConfig, trajectory, metrics_path=None, log=print) -> dict:
    """Recompute the summary from a trajectory CSV; compare with the stored summary if present."""
    trajectory = Path(trajectory)
    rows = read_trajectory(trajectory)
    summary = summarize(rows, cfg.episode.pad_radius, cfg.ppo.gamma, cfg.episode.min_separation)
    if metrics_path is None:
        guess = trajectory.with_name(trajectory.name.replace("trajectory_", "metrics_", 1)).with_suffix(".json")
        metrics_path = guess if guess.exists() and guess != trajectory else None
    log(_format_summary(summary))
    if metrics_path is not None:
        stored = read_metrics(metrics_path)
        bad = compare_metrics(stored, summary, REPLAY_TOL)
        if bad:
            raise CommandError("replay disagrees with stored summary:\n  " + "\n  ".join(bad))
        log(f"matches {metrics_path} within {REPLAY_TOL:g}")
    return summary


def cmd_gear_demo(cfg: RunConfig, terrain_path, log=print) -> tuple[int, float]:
    try:
        terrain = Terrain.from_file(terrain_path, cfg.episode.terrain_resolution)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot load terrain: {exc}", EXIT_INPUT) from exc
    platform = Platform(cfg=cfg.gear)
    rng = np.random.default_rng(cfg.seed)
    try:
        pose, legs, ticks = stabilize(platform, terrain, rng)
    except GearError as exc:
        raise CommandError(f"stabilize failed: {exc}") from exc
    tilt = math.degrees(pose.tilt)
    log(f"converged in {ticks} ticks; final tilt {tilt:.4f} deg; lift {[s.x for s in legs]}")
    return ticks, tilt


def _format_summary(summary: dict) -> str:
    return "\n".join(f"{k}: {v}" for k, v in summary.items())


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="padland", description="Drone landing on a self-levelling legged platform.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="TOML run config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="master seed override")
        if out:
            sp.add_argument("--out", help="output directory override")

    t = sub.add_parser("train", help="curriculum PPO training")
    common(t)
    t.add_argument("--stage", choices=[s.value for s in Stage], help="force the curriculum stage")
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("eval", help="evaluate a checkpoint on one scenario")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario", required=True, choices=[s.value for s in Scenario])

    r = sub.add_parser("replay", help="recompute metrics from a trajectory CSV")
    common(r, out=False)
    r.add_argument("trajectory")
    r.add_argument("--metrics", help="summary to compare against (default: sibling metrics file)")

    g = sub.add_parser("gear-demo", help="stabilize the platform on a terrain file")
    common(g, out=False)
    g.add_argument("terrain")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "train":
            cmd_train(cfg, Stage(args.stage) if args.stage else None, args.resume)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.scenario)
        elif args.command == "replay":
            cmd_replay(cfg, args.trajectory, args.metrics)
        elif args.command == "gear-demo":
            cmd_gear_demo(cfg, args.terrain)
    except (ConfigError, CheckpointError, TrajectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (EpisodeAborted, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
