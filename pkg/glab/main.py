"""Command-line driver: ``python -m glab.main <command> [--config PATH] [--out DIR] ...``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from glab import __version__
from glab.commands import approx, gheat, simulate, solve, verify
from glab.config import settings
from glab.errors import GLabError
from glab.schemas import ExperimentConfig
from glab.services.serialization import write_report

logger = logging.getLogger(__name__)

COMMANDS = {
    "gheat": gheat.run,
    "solve": solve.run,
    "verify": verify.run,
    "approx": approx.run,
    "simulate": simulate.run,
}

HELP = {
    "gheat": "solve the G-heat equation and compare with closed forms",
    "solve": "solve the PDE cascade and build (Y, Z, K) along scenario paths",
    "verify": "run the invariant suite",
    "approx": "run the dyadic approximation pipeline for a path-dependent generator",
    "simulate": "simulate and dump the scenario family",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glab", description="Numerical laboratory for G-expectations and G-BSDEs.")
    parser.add_argument("--version", action="version", version=f"glab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", type=Path, help="experiment config (JSON)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--threads", type=int, help="worker threads for scenario streaming")
        p.add_argument("--strict", action="store_true", help="warnings fail the run")
    sub.add_parser("schema", help="print the experiment config JSON Schema")
    return parser


def load_config(path: Path | None, seed: int | None) -> ExperimentConfig:
    data = {} if path is None else json.loads(path.read_text(encoding="utf-8"))
    if seed is not None:
        data["seed"] = seed
    return ExperimentConfig.model_validate(data)


def output_dir(args, config: ExperimentConfig) -> Path:
    if args.out is not None:
        return args.out
    return Path(config.output_dir or settings.output_dir) / args.command


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.log_level, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "schema":
        print(json.dumps(ExperimentConfig.model_json_schema(), indent=2, sort_keys=True))
        return 0

    if args.threads is not None:
        settings.threads = max(1, args.threads)
    strict = args.strict or settings.strict
    try:
        config = load_config(args.config, args.seed)
        out = output_dir(args, config)
        report = COMMANDS[args.command](config, out)
        write_report(report, out, strict)
    except ValidationError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"invalid configuration: {args.config}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except GLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    code = report.exit_code(strict)
    for failure in report.failed:
        logger.error("failed: %s", failure)
    if strict and report.n_warnings:
        logger.error("%d warnings with --strict", report.n_warnings)
    logger.info("%s finished with status %d; report in %s", args.command, code, out)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
