"""`lab` command line entry point.

    lab <experiment> --config PATH [--seed U64] [--out DIR] [--threads N]

Exit codes: 0 every gate passed, 1 a gate failed, 2 config error,
3 resource limit exceeded.  The LAB_THREADS environment variable overrides
--threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import Optional, Sequence

from ..errors import ConfigError, LabError, ResourceLimitExceeded
from .config import EXPERIMENTS, load_config
from .experiments import run_experiment

EXIT_PASS = 0
EXIT_GATE_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_RESOURCE_LIMIT = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lab",
        description="stability/generalization experiments for projected SGD")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="path to a key = value config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's master_seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (results are thread-count invariant)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {"experiment": args.experiment}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.out is not None:
            overrides["out_path"] = args.out
        threads = args.threads
        env_threads = os.environ.get("LAB_THREADS")
        if env_threads is not None:
            try:
                threads = int(env_threads)
            except ValueError:
                raise ConfigError(f"LAB_THREADS must be an integer, got {env_threads!r}")
        if threads is not None:
            overrides["threads"] = threads
        cfg = dataclasses.replace(cfg, **overrides)
        return run_experiment(cfg)
    except ResourceLimitExceeded as e:
        print(f"lab: resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCE_LIMIT
    except (ConfigError, LabError) as e:
        print(f"lab: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
