"""Command-line front end: ``mvp-sim run|sweep|export-paths|validate-config``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from mvp_sim.config import SimConfig, load_config, parse_override
from mvp_sim.engine import Configuration, ExperimentRow, run_configurations, sweep_configurations
from mvp_sim.errors import ConfigError
from mvp_sim.results import LogFormatError, export_paths, write_outputs

log = logging.getLogger("mvp_sim")

SEED_ENV = "MVP_SIM_SEED"

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-key override, e.g. controller.gamma=0.2 (repeatable)")


def _experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--runs", type=int, help="episodes per configuration")
    p.add_argument("--objects", type=int, help="objects per episode")
    p.add_argument("--seed", type=int, help="root seed (overrides %s)" % SEED_ENV)
    p.add_argument("--workers", type=int, help="parallel episodes; 0 = all CPUs")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvp-sim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one policy (and a gamma list for mvp)")
    _config_args(run)
    run.add_argument("--policy", help="mvp, single-view, no-exploration, fixed-25 or fixed-50")
    run.add_argument("--gamma", type=float, nargs="+", help="exploration cost values for mvp")
    _experiment_args(run)

    sweep = sub.add_parser("sweep", help="gamma grid plus all baselines")
    _config_args(sweep)
    sweep.add_argument("--baseline-runs", type=int, help="episodes per baseline")
    _experiment_args(sweep)

    exp = sub.add_parser("export-paths", help="attempts.jsonl -> columnar path CSV")
    exp.add_argument("log", type=Path, help="attempts.jsonl")
    exp.add_argument("--out", type=Path, help="output CSV (default: stdout)")

    val = sub.add_parser("validate-config", help="check a config and print the resolved form")
    _config_args(val)
    return parser


def resolve_config(args: argparse.Namespace) -> SimConfig:
    """Defaults < config file < MVP_SIM_SEED < command-line flags."""
    overrides = dict(parse_override(s) for s in args.overrides)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None and "experiment.seed" not in overrides:
        try:
            overrides["experiment.seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: expected an integer, got {env_seed!r}") from None
    flags = {
        "experiment.policy": getattr(args, "policy", None),
        "experiment.gammas": getattr(args, "gamma", None),
        "experiment.runs": getattr(args, "runs", None),
        "experiment.baseline_runs": getattr(args, "baseline_runs", None),
        "experiment.objects": getattr(args, "objects", None),
        "experiment.seed": getattr(args, "seed", None),
        "experiment.workers": getattr(args, "workers", None),
    }
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return load_config(args.config, overrides)


def format_table(rows: Sequence[ExperimentRow]) -> str:
    head = f"{'policy':<16}{'gamma':>7}{'attempts':>10}{'fail':>6}{'views':>8}{'success':>9}{'time_s':>8}{'mpph':>8}"
    lines = [head]
    for r in rows:
        m = r.metrics
        g = "-" if r.gamma is None else f"{r.gamma:g}"
        lines.append(f"{r.policy:<16}{g:>7}{m.total_attempts:>10}{m.failures:>6}{m.mean_viewpoints:>8.1f}"
                     f"{m.success_rate:>9.3f}{m.mean_time:>8.2f}{m.mpph:>8.1f}")
    return "\n".join(lines)


def _execute(cfg: SimConfig, configs: list[Configuration], out: Path) -> int:
    try:
        rows = run_configurations(configs, cfg)
    except Exception as exc:  # any episode failure fails the whole run
        log.error("episode failed: %s", exc)
        return EXIT_RUN_ERROR
    write_outputs(out, rows, cfg.to_dict())
    print(format_table(rows))
    print(f"wrote {out}/results.csv, attempts.jsonl, effective_config.json")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    exp = cfg.experiment
    if exp.policy == "mvp":
        configs = [Configuration("mvp", float(g), exp.runs) for g in exp.gammas]
    else:
        configs = [Configuration(exp.policy, None, exp.runs)]
    return _execute(cfg, configs, args.out)


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    return _execute(cfg, sweep_configurations(cfg), args.out)


def cmd_export_paths(args: argparse.Namespace) -> int:
    try:
        with open(args.log) as fh:
            if args.out is None:
                export_paths(fh, sys.stdout)
            else:
                with open(args.out, "w", newline="") as out:
                    export_paths(fh, out)
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_RUN_ERROR
    except LogFormatError as exc:
        log.error("%s: %s", args.log, exc)
        return EXIT_RUN_ERROR
    return EXIT_OK


def cmd_validate_config(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "export-paths": cmd_export_paths,
    "validate-config": cmd_validate_config,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
