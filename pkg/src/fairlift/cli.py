"""Command line entry point: ``fairlift run`` and ``fairlift validate``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import load_config
from .errors import ConfigError, FairliftError
from .pipeline import build_engine, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

log = logging.getLogger("fairlift")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairlift",
                                     description="Batch fairness metrics over scored datasets.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline and write the report")
    run.add_argument("--config", required=True, help="path to the configuration document")
    run.add_argument("--workers", type=int, help="override engine worker count")
    run.add_argument("--seed", type=int, help="override the engine seed")
    run.add_argument("--output", help="override outputPath")

    validate = sub.add_parser("validate", help="parse and validate a configuration only")
    validate.add_argument("--config", required=True)
    return parser


def _apply_overrides(config, args):
    engine = config.engine
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        engine = dataclasses.replace(engine, workers=args.workers)
    if args.seed is not None:
        engine = dataclasses.replace(engine, seed=args.seed)
    changes = {"engine": engine}
    if args.output:
        changes["output_path"] = args.output
    return dataclasses.replace(config, **changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok")
            return EXIT_OK
        config = _apply_overrides(config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        report = run_pipeline(config, build_engine(config))
    except (FairliftError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for w in report.warnings:
        log.warning(w)
    print(config.output_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
