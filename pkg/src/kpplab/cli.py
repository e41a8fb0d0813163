"""Command line: ``kpplab <experiment> --config FILE [--out DIR] [--seeds a,b,c] [--threads N]``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 budget exhausted.
The output directory is taken from ``--out``, else ``KPPLAB_OUT``, else the config.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import EXPERIMENTS, load_config
from .errors import BudgetExhausted, ConfigError, NumericalInstability

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_BUDGET = 0, 2, 3, 4

log = logging.getLogger("kpplab")


def _seeds(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kpplab", description="Batch experiments for KPP reaction-diffusion fronts.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", help="output directory (overrides KPPLAB_OUT and the config)")
    p.add_argument("--seeds", type=_seeds, help="comma-separated environment seeds")
    p.add_argument("--threads", type=int, help="worker threads for independent jobs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .experiments import run

    try:
        cfg = load_config(args.config, args.experiment)
        if args.seeds:
            cfg = cfg.replace("run", seeds=args.seeds, seed=args.seeds[0])
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            cfg = cfg.replace("run", threads=args.threads)
        out = args.out or os.environ.get("KPPLAB_OUT") or cfg.out
        code, out_dir, outcome = run(cfg, out)
    except ConfigError as exc:
        print(f"kpplab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"kpplab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInstability as exc:
        print(f"kpplab: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BudgetExhausted as exc:
        print(f"kpplab: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    log.info("wrote %d artifacts to %s", len(outcome.artifacts), out_dir)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
