"""
Command-line entry point: list, validate and run scenarios.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import os
import sys
from typing import Dict, List, Optional

import yaml
from pydantic import ValidationError

from floquet_snap.config import settings
from floquet_snap.errors import ConfigurationError, NumericalError
from floquet_snap.logger import configure_logging, get_logger
from floquet_snap.models import ScenarioConfig
from floquet_snap.runner import SCENARIOS, ScenarioRunner

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def read_config(path: str) -> Dict:
    if not os.path.exists(path):
        raise ConfigurationError(f"config file '{path}' does not exist")
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file '{path}' must contain a mapping")
    return data


def load_config(path: str) -> ScenarioConfig:
    """Parse and validate a scenario YAML file; raises ConfigurationError or pydantic ValidationError."""
    return ScenarioConfig.model_validate(read_config(path))


def _field_errors(error: ValidationError) -> List[Dict[str, str]]:
    return [{"field": ".".join(str(part) for part in item["loc"]) or "<root>", "message": item["msg"]}
            for item in error.errors()]


def validate_config(path: str) -> Dict:
    """Report {valid, errors: [{field, message}]} for a config file."""
    try:
        load_config(path)
    except ValidationError as e:
        return {"valid": False, "errors": _field_errors(e)}
    except ConfigurationError as e:
        return {"valid": False, "errors": [{"field": "<file>", "message": str(e)}]}
    return {"valid": True, "errors": []}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floquet_snap", description="Floquet-engineered SNAP gate simulations")
    parser.add_argument("--log-level", default=None, help="override the configured log level")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("list", help="list scenarios")

    validate = commands.add_parser("validate", help="validate a scenario config")
    validate.add_argument("--config", required=True, help="path to the YAML config")

    run = commands.add_parser("run", help="run one scenario")
    run.add_argument("scenario", choices=sorted(SCENARIOS), help="scenario name")
    run.add_argument("--config", required=True, help="path to the YAML config")
    run.add_argument("--out", default=None, help="artifact directory")
    run.add_argument("--threads", type=int, default=None, help="worker cap for parallel sweeps")
    run.add_argument("--seed", type=int, default=None, help="optimizer seed")
    run.add_argument("--no-dephasing-correction", action="store_true",
                     help="omit the Floquet-Markov pure-dephasing term")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or settings.log_level)

    if args.command == "list":
        width = max(len(name) for name in SCENARIOS)
        for name, (_, description) in SCENARIOS.items():
            print(f"{name.ljust(width)}  {description}")
        return EXIT_OK

    if args.command == "validate":
        report = validate_config(args.config)
        print(yaml.safe_dump(report, sort_keys=False), end="")
        return EXIT_OK if report["valid"] else EXIT_CONFIG

    try:
        config = load_config(args.config)
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        runner = ScenarioRunner(config, output_dir=args.out, threads=args.threads, seed=args.seed,
                                include_pure_dephasing=not args.no_dephasing_correction)
        runner.run(args.scenario)
    except ValidationError as e:
        logger.error("Invalid configuration", errors=_field_errors(e))
        return EXIT_CONFIG
    except ConfigurationError as e:
        logger.error("Configuration error", error=str(e), error_type=type(e).__name__)
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error("Numerical failure", error=str(e), error_type=type(e).__name__)
        return EXIT_NUMERICAL
    print(runner.artifacts_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
