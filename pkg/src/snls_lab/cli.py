"""``snls-lab run <config-file> [--out DIR] [--workers K] [--resume DIR]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .experiments import run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snls-lab")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a preset experiment")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, default=None, help="output directory")
    run.add_argument("--workers", type=int, default=None,
                     help="worker processes (default: $SNLS_LAB_WORKERS or ensemble.workers)")
    run.add_argument("--resume", type=Path, default=None,
                     help="continue from the checkpoint state of an earlier run directory")
    run.add_argument("--stop-at", type=float, default=None,
                     help="halt every path at its first checkpoint at or after this time")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config.read_text())
    except OSError as exc:
        print(f"snls-lab: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"snls-lab: {args.config}: {exc}", file=sys.stderr)
        return 2
    workers = args.workers
    if workers is None and os.environ.get("SNLS_LAB_WORKERS"):
        try:
            workers = int(os.environ["SNLS_LAB_WORKERS"])
        except ValueError:
            print("snls-lab: SNLS_LAB_WORKERS must be an integer", file=sys.stderr)
            return 2
    if workers is None:
        workers = cfg["ensemble.workers"]
    if workers < 1:
        print("snls-lab: --workers must be >= 1", file=sys.stderr)
        return 2
    out = args.out or args.resume or Path(cfg["output.dir"])
    state = (args.resume / "state") if args.resume is not None else None
    if args.resume is not None and not (args.resume / "state").is_dir():
        print(f"snls-lab: {args.resume} holds no checkpoint state", file=sys.stderr)
        return 2
    code = run_experiment(cfg, out, workers=workers, state_dir=state, stop_at=args.stop_at)
    summary = Path(out) / "summary.txt"
    if summary.exists():
        sys.stdout.write(summary.read_text())
    return code


if __name__ == "__main__":
    sys.exit(main())
