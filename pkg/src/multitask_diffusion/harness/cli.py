"""Command-line entry point.

    multitask-diffusion {simulate,sweep-eta,verify-bounds,classify,gen-data} CONFIG
        [--seed N] [--out-dir DIR] [--threads T] [-v]

Exit status: 0 success, 1 validation error (bad config, violated step-size
limit, bad data, failed verification check), 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..costs import CostError
from ..diffusion import StabilityError
from ..graph import GraphError
from .config import PIPELINES, ConfigError, check_config_stability, load_config
from .data import DatasetError
from .pipelines import VerificationFailed, run_suite, with_overrides

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ConfigError, StabilityError, GraphError, CostError, DatasetError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multitask-diffusion",
                                description="Laplacian-regularized multitask diffusion experiments")
    p.add_argument("pipeline", choices=PIPELINES)
    p.add_argument("config", help="YAML config, or a manifest.json from an earlier run")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", default=None, help="override outputs.directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for grid points (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        cfg = with_overrides(load_config(args.config, check_stability=False), args.seed)
        check_config_stability(cfg)
    except VALIDATION_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = run_suite(cfg, args.pipeline, args.out_dir, args.threads)
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.pipeline}: wrote {len(report.files)} file(s) to {report.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
