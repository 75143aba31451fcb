"""
Command-line surface
argparse front end, run() orchestration and the mapping of failures to exit codes
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from cli.commands import HANDLERS
from cli.config import COMMANDS, FAMILIES, OBJECTIVES, OUT_ENV, RunConfig, build_config
from logic.data_manager import DataManager
from logic.errors import ConfigError, ConvergenceError, ScenarioError
from logic.scenarios import build_scenario


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_SCENARIO = 3
EXIT_OUTPUT = 4
EXIT_CONVERGENCE = 5

EPILOG = f"""\
scenarios: battery1, battery2, lqr, random:<seed>
exit codes: {EXIT_OK} ok, {EXIT_UNEXPECTED} unexpected error, {EXIT_USAGE} usage/config error,
  {EXIT_SCENARIO} unknown scenario, {EXIT_OUTPUT} unwritable output path, {EXIT_CONVERGENCE} solver non-convergence
environment: {OUT_ENV} sets the default output root
"""


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting so usage errors get the JSON treatment."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="domlab",
        description="Decision-oriented model lab: solve, audit and synthesize predictive models of grid MDPs.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("scenario", help="battery1 | battery2 | lqr | random:<seed>")
    parser.add_argument("--states", type=int, help="number of state grid points")
    parser.add_argument("--actions", type=int, help="number of action grid points")
    parser.add_argument("--noise-nodes", dest="noise_nodes", type=int, help="noise quadrature nodes (odd)")
    parser.add_argument("--delta", type=float, help="Delta for synthesize")
    parser.add_argument("--deltas", help="Delta list for sweep: a,b,c or start:stop:step")
    parser.add_argument("--seed", type=int, help="seed for every random draw")
    parser.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./artifacts)")
    parser.add_argument("--tol", type=float, help="value iteration tolerance")
    parser.add_argument("--per-pair", dest="per_pair", type=int, help="samples per (s, a) for fit (0 = exact)")
    parser.add_argument("--family", choices=FAMILIES, help="parametric family for finetune / constrained fit")
    parser.add_argument("--budget", type=int, help="pattern search iterations")
    parser.add_argument("--objective", choices=OBJECTIVES, help="finetune objective")
    parser.add_argument("--penalty-weight", dest="penalty_weight", type=float,
                        help="weight of the sufficient-condition penalty in fit")
    parser.add_argument("--workers", type=int, help="threads for sweep")
    parser.add_argument("--model", help="model CSV (s,a,f,defined) for audit")
    parser.add_argument("--config", help="key=value file; flags win on conflict")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def parse_config(argv: Optional[List[str]] = None) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    command, scenario, config_path = args.pop("command"), args.pop("scenario"), args.pop("config")
    if args.pop("verbose"):
        logging.getLogger().setLevel(logging.DEBUG)
    return build_config(command, scenario, args, config_path)


def run(config: RunConfig) -> Dict[str, Any]:
    """Build the scenario, run one command and write report.json next to its CSV files.

    Raises:
        ScenarioError, ConfigError, ConvergenceError, OSError: mapped to exit codes by ``main``.
    """
    bundle = build_scenario(config.scenario, config.states, config.actions, config.noise_nodes)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    logger.info("running %s on %s into %s", config.command, config.scenario, out)
    summary = HANDLERS[config.command](config, bundle, out)
    payload = {**config.header(), "result": summary}
    DataManager.export_report_json(payload, out / "report.json")
    return payload


def _fail(kind: str, code: int, exc: BaseException, **extra) -> int:
    record = {"error": kind, "exit_code": code, "message": str(exc), **extra}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run, and return the process exit code."""
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    try:
        run(config)
    except ScenarioError as exc:
        return _fail("unknown_scenario", EXIT_SCENARIO, exc)
    except ConvergenceError as exc:
        return _fail("non_convergence", EXIT_CONVERGENCE, exc, residual=exc.residual, iterations=exc.iterations)
    except ValueError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except OSError as exc:
        return _fail("output", EXIT_OUTPUT, exc)
    except Exception as exc:
        logger.exception("Unhandled exception while running %s", config.command)
        return _fail("unexpected", EXIT_UNEXPECTED, exc)
    return EXIT_OK
