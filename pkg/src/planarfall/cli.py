"""Command line interface: train, eval, ablate, compare, plot.

Exit codes: 0 success, 1 validation error, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .env import ConfigError
from .nets import CheckpointError
from .runconfig import (OUTPUT_ROOT_ENV, RunConfig, apply_overrides, default_config,
                        load_config, write_config)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    overrides = list(args.override or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    if getattr(args, "task", None):
        overrides.append(f"episode.task={args.task}")
    if getattr(args, "threads", None) is not None:
        overrides.append(f"run.threads={args.threads}")
    if getattr(args, "deterministic", False):
        overrides.append("run.deterministic=true")
    return apply_overrides(cfg, overrides)


def _out_dir(cfg: RunConfig, args, suffix: str = "") -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    name = f"{cfg.run.name}{suffix}-seed{cfg.run.seed}"
    return Path(cfg.run.output_dir) / name


def cmd_train(args) -> int:
    from . import trainer

    cfg = _load(args)
    out = _out_dir(cfg, args)
    ckpt, stats = trainer.train(cfg, out, resume=args.resume, log=print)
    print(f"training complete: {ckpt}")
    print(f"stats: {out / 'stats.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import evalrun, metrics

    cfg = _load(args)
    if args.episodes <= 0:
        raise ConfigError("--episodes must be positive")
    if bool(args.checkpoint) == bool(args.baseline):
        raise ConfigError("exactly one of --checkpoint or --baseline is required")
    controller = args.checkpoint if args.checkpoint else args.baseline
    report = evalrun.run_eval(controller, cfg, episodes=args.episodes,
                              seed=args.seed if args.seed is not None else 0,
                              n_envs=args.envs, log=print if args.verbose else None)
    out = _out_dir(cfg, args, suffix=f"-eval-{report.controller}")
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "resolved.toml")
    metrics.report_to_json(report, out / "report.json")
    metrics.report_timeseries_csv(report, out / "report_timeseries.csv")
    metrics.report_episodes_csv(report, out / "report_episodes.csv")
    print(f"controller {report.controller}: success rate {report.success_rate:.3f}, "
          f"{int(np.sum(report.impulse_samples > report.impulse_threshold))} impulse samples "
          f"above {report.impulse_threshold:.4f} N·s")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from . import evalrun, figures

    cfg = _load(args)
    out = _out_dir(cfg, args, suffix="-ablation")
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "resolved.toml")
    result = evalrun.ablation_suite(cfg, out, seeds=args.seeds,
                                    iterations=args.iterations,
                                    eval_episodes=args.eval_episodes, log=print)
    table = figures.ablation_table(result)
    (out / "ablation_table.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_compare(args) -> int:
    from . import figures, metrics

    reports = [metrics.report_from_json(p) for p in args.reports]
    if len(reports) < 2:
        raise ConfigError("compare requires at least two reports")
    base = reports[0]
    print(figures.summary_table(reports))
    for other in reports[1:]:
        delta = metrics.torque_comparison(base, other)
        rel = (delta["legs_mean_a"] - delta["legs_mean_b"]) / max(delta["legs_mean_b"], 1e-12)
        print(f"\nleg torque {base.controller} vs {other.controller}: "
              f"{delta['legs_mean_a']:.3f} vs {delta['legs_mean_b']:.3f} N·m "
              f"({100 * rel:+.2f}%)")
        print("per-drive delta:", np.array2string(delta["per_drive_delta"], precision=4))
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import evalrun, figures, metrics

    if not args.reports and not args.ablation:
        raise ConfigError("plot requires at least one report (or --ablation)")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.reports:
        reports = [metrics.report_from_json(p) for p in args.reports]
        schemas = {r.steps for r in reports}
        if len(schemas) != 1:
            raise ConfigError("reports have incompatible horizons; plot them separately")
        written.append(figures.impulse_figure(reports, out / "impulse_distribution.svg"))
        written.append(figures.acceleration_figure(reports, out / "base_acceleration.svg"))
        written.append(figures.internal_force_figure(reports, out / "internal_force.svg"))
        for r in reports:
            written.append(figures.height_grid_figure(
                r, out / f"height_profile_{r.controller}.svg"))
        (out / "summary.txt").write_text(figures.summary_table(reports) + "\n")
        print(figures.summary_table(reports))
    if args.ablation:
        result = evalrun.AblationResult.from_json(args.ablation)
        table = figures.ablation_table(result)
        (out / "ablation_table.txt").write_text(table + "\n")
        print(table)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="planarfall",
        description="Fall damage reduction and recovery training for a planar "
                    "legged manipulator.",
        epilog=f"Default output root comes from ${OUTPUT_ROOT_ENV} (fallback ./runs).")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="run config (TOML or JSON)")
    common.add_argument("--override", action="append", metavar="SECTION.FIELD=VALUE",
                        help="dotted config override, repeatable")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", type=str, default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--deterministic", action="store_true")

    t = sub.add_parser("train", parents=[common], help="train a policy")
    t.add_argument("--task", choices=("fall_recovery", "resting", "self_righting"))
    t.add_argument("--resume", type=str, default=None, help="checkpoint to resume from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or baseline")
    e.add_argument("--task", choices=("fall_recovery", "resting", "self_righting"))
    e.add_argument("--checkpoint", type=str, default=None)
    e.add_argument("--baseline", choices=("freeze", "damp"), default=None)
    e.add_argument("--episodes", type=int, default=2560)
    e.add_argument("--envs", type=int, default=256)
    e.add_argument("--verbose", action="store_true")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", parents=[common],
                       help="observation-configuration ablation study")
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--iterations", type=int, default=None,
                   help="override training iterations per run")
    a.add_argument("--eval-episodes", type=int, default=128)
    a.set_defaults(fn=cmd_ablate)

    c = sub.add_parser("compare", help="compare evaluation reports (torques, success)")
    c.add_argument("reports", nargs="+", help="report.json files")
    c.set_defaults(fn=cmd_compare)

    g = sub.add_parser("plot", help="render SVG figures from reports")
    g.add_argument("reports", nargs="*", help="report.json files")
    g.add_argument("--ablation", type=str, default=None, help="ablation.json")
    g.add_argument("--out", type=str, default=None)
    g.set_defaults(fn=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime faults
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
