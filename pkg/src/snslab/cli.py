"""``snslab <kind> --config <path> [--seed N] [--out DIR] [--workers N]``."""
from __future__ import annotations

import argparse
import sys

from .config import KINDS, ConfigError, load_config
from .experiments import EXIT_ERROR, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snslab", description="Run a stochastic Navier-Stokes Galerkin experiment.")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--seed", type=int, help="override ensemble.seed")
    p.add_argument("--out", help="output directory (default: experiment.output)")
    p.add_argument("--workers", type=int, help="worker processes (default: $SNSLAB_WORKERS or 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"snslab: {args.config}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if cfg.kind != args.kind:
        print(f"snslab: command kind {args.kind!r} does not match experiment.kind {cfg.kind!r}", file=sys.stderr)
        return EXIT_ERROR
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.workers is not None and args.workers < 1:
        print("snslab: --workers must be positive", file=sys.stderr)
        return EXIT_ERROR
    command = ["snslab"] + list(sys.argv[1:] if argv is None else argv)
    outcome = run_experiment(cfg, args.out, workers=args.workers, command=command)
    for line in outcome.lines:
        print(line)
    print(f"{cfg.kind}: {outcome.verdict} (exit {outcome.status}) -> {outcome.out_dir}")
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
