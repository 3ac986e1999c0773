"""Command-line surface: train, evaluate, ablate, collect-demos,
dsa-preview, report.

Hyperparameters come from a profile plus repeatable --set key=value
overrides or a YAML config file.  Environment variables configure paths
and log verbosity only (NEEDLEPICK_OUT, NEEDLEPICK_QUIET).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from needlepick.config import (
    ABLATION_VARIANTS,
    TrainConfig,
    desk_profile,
    paper_profile,
)
from needlepick.errors import ConfigurationError


def _log(*args):
    if not os.environ.get("NEEDLEPICK_QUIET"):
        print(*args)
        sys.stdout.flush()


def _default_out() -> str:
    return os.environ.get("NEEDLEPICK_OUT", "runs")


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    if name not in types:
        raise ConfigurationError(f"unknown config field {name!r}")
    t = types[name]
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    if t in ("bool", bool):
        return raw.lower() in ("1", "true", "yes")
    return raw


def _build_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        config = TrainConfig.load(args.config)
    elif args.profile == "paper":
        config = paper_profile()
    else:
        config = desk_profile()
    changes = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        changes[key] = _coerce(key, raw)
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "no_demo", False):
        changes["use_demos"] = False
        changes["beta_bc"] = 0.0
    return config.replace(**changes) if changes else config


def _add_config_args(p):
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--config", help="YAML config file (overrides --profile)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config field; repeatable")
    p.add_argument("--seed", type=int, default=None)


def cmd_train(args) -> int:
    from needlepick.trainer import train

    config = _build_config(args)
    out = Path(args.out or _default_out()) / (args.name or f"train_seed{config.seed}")
    result = train(config, out, log=_log)
    _log(f"run complete: {result['steps']} steps, {result['updates']} updates")
    _log(f"artifacts in {result['out_dir']}")
    return 0


def cmd_evaluate(args) -> int:
    from needlepick.trainer import evaluate_checkpoint

    report = evaluate_checkpoint(
        args.checkpoint,
        n_rollouts=args.rollouts,
        seed=args.seed,
        needle_shape=args.needle,
        noise_level=args.noise,
    )
    print("success_rate\tsuccesses\tvalid\texcluded")
    print(f"{report.success_rate:.4f}\t{report.successes}\t{report.valid}\t{report.excluded}")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
        _log(f"episode log written to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    from needlepick.trainer import ablation

    config = _build_config(args)
    out = Path(args.out or _default_out()) / f"ablate_{args.variant}_seed{config.seed}"
    result = ablation(config, args.variant, out, log=_log)
    _log(f"ablation {args.variant} complete; artifacts in {result['out_dir']}")
    return 0


def cmd_collect_demos(args) -> int:
    from needlepick.dsa import make_pipeline
    from needlepick.env.core import NeedlePickEnv
    from needlepick.env.demos import collect_demonstrations
    from needlepick.replay import ReplayBuffer, record_from_episode

    config = _build_config(args)
    env = NeedlePickEnv(config.env_config())
    episodes = collect_demonstrations(env, args.timesteps, seed=config.seed)
    buffer = ReplayBuffer()
    for ep in episodes:
        buffer.add_episode(
            record_from_episode(
                ep, make_pipeline(config.obs_pipeline, config.margin_ratio), source="demo"
            )
        )
    buffer.save(args.out)
    _log(f"saved {len(buffer)} episodes / {buffer.num_steps} timesteps to {args.out}")
    return 0


def cmd_dsa_preview(args) -> int:
    import cv2

    from needlepick.dsa import DsaContext
    from needlepick.env.core import NeedlePickEnv
    from needlepick.env.demos import run_scripted_episode

    config = _build_config(args)
    env = NeedlePickEnv(config.env_config())
    episode = run_scripted_episode(env, seed=config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = DsaContext(config.margin_ratio)
    n = min(args.steps, len(episode) + 1)
    from needlepick.env.core import ObservationFrame

    for t in range(n):
        frame = ObservationFrame(
            rgb=episode.frames_rgb[t],
            depth=episode.frames_depth[t],
            task_state_code=int(episode.task_codes[t]),
            jaw_open=bool(episode.jaw_open[t]),
        )
        processed = ctx(frame)
        raw = cv2.resize(frame.rgb, (256, 256), interpolation=cv2.INTER_NEAREST)
        zoomed = cv2.resize(processed, (256, 256), interpolation=cv2.INTER_NEAREST)
        channels = cv2.resize(
            np.concatenate([processed[..., i] for i in range(3)], axis=1),
            (768, 256), interpolation=cv2.INTER_NEAREST,
        )
        top = np.concatenate([raw, zoomed, np.zeros_like(raw)], axis=1)
        grid = np.concatenate([top, np.stack([channels] * 3, axis=-1)], axis=0)
        cv2.imwrite(str(out / f"step_{t:03d}.png"), grid[..., ::-1])
    _log(f"wrote {n} preview frames to {out}")
    return 0


def cmd_report(args) -> int:
    from needlepick.report import report

    artifacts = report(args.run_dir, args.out)
    for name, path in artifacts.items():
        print(f"{name}\t{path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="needlepick",
        description="Needle-picking world-model RL: training, evaluation, reporting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training schedule")
    _add_config_args(p)
    p.add_argument("--out", help="output root (default $NEEDLEPICK_OUT or ./runs)")
    p.add_argument("--name", help="run directory name")
    p.add_argument("--no-demo", action="store_true",
                   help="demo-free baseline: empty demo buffer and bc weight 0")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--rollouts", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--needle", default=None, help="override needle shape")
    p.add_argument("--noise", type=float, default=None, help="depth noise level")
    p.add_argument("--out", help="write the full episode log as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train one ablation variant")
    _add_config_args(p)
    p.add_argument("--variant", required=True, choices=sorted(ABLATION_VARIANTS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("collect-demos", help="script demonstrations into a buffer")
    _add_config_args(p)
    p.add_argument("--timesteps", type=int, default=8000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect_demos)

    p = sub.add_parser("dsa-preview", help="render per-step views of the observation pipeline")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=30)
    p.set_defaults(func=cmd_dsa_preview)

    p = sub.add_parser("report", help="tables, curves, and summary for a run")
    p.add_argument("run_dir")
    p.add_argument("--out", help="report output directory (default <run>/report)")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as e:
        parser.error(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
