"""
Command-line entry point: labp run <config.json> [--out DIR] [--threads N] [--resolution N].

Exit status 0 on success, 1 on a configuration or validation error, 2 when a
sub-run failed numerically.
"""
import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from lab.runner import ExperimentConfig, run_experiment
from logging_config import get_logger, log_system_info, setup_logging

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labp", description="Numerical laboratory for per-mode resolvent estimates")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Run the experiment described by a JSON config")
    run.add_argument("config", help="Path to the experiment config (JSON)")
    run.add_argument("--out", dest="output_dir", help="Report directory (overrides output_dir)")
    run.add_argument("--threads", type=int, help="Concurrent parameter tuples (overrides threads)")
    run.add_argument("--resolution", type=int, help="Radial grid points (overrides resolution)")
    return parser


def format_validation_error(error: ValidationError) -> str:
    """One line per offending field: 'field: message'."""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "config"
        lines.append(f"{location}: {item['msg']}")
    return "\n".join(lines)


def load_config(path: str, overrides: dict) -> ExperimentConfig:
    """
    Read a JSON config and apply command-line overrides.

    Raises:
        OSError: Unreadable file
        json.JSONDecodeError: Malformed JSON
        ValidationError: Invalid fields
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("Config must be a JSON object")
    data.update({key: value for key, value in overrides.items() if value is not None})
    return ExperimentConfig.model_validate(data)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"output_dir": args.output_dir, "threads": args.threads, "resolution": args.resolution}

    try:
        config = load_config(args.config, overrides)
    except ValidationError as e:
        print(f"Invalid config {args.config}:\n{format_validation_error(e)}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError) as e:
        print(f"Cannot read config {args.config}: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    setup_logging()
    log_system_info(config.threads)
    logger = get_logger(__name__)

    result = asyncio.run(run_experiment(config))
    if result.exit_code == EXIT_OK:
        logger.info(f"Report written to {result.csv_path}")
    else:
        logger.error(f"{config.experiment} finished with exit status {result.exit_code}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
