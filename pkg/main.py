"""
Decision Lab - Entry Point
Batch runs over grid MDP scenarios; every result lands in CSV/JSON artifacts

Usage:
    python main.py solve battery1
    python main.py sweep battery2 --deltas 0.095:0.125:0.005
    python main.py --help
"""
import logging
import sys
from typing import List, Optional


# Configure simple logging for startup/runtime errors
LOG_LEVEL = logging.INFO
logging.basicConfig(
    level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s - %(message)s"
)
logger = logging.getLogger("domlab.main")


# Log import failures before re-raising
try:
    from cli.runner import main as run_cli
except Exception:
    logger.exception("Failed to import cli.runner")
    raise


def main(argv: Optional[List[str]] = None) -> None:
    """Application entry point.

    Args:
        argv: Optional argument list (defaults to ``sys.argv[1:]``).
    """
    argv = argv if argv is not None else sys.argv[1:]
    logger.info("Starting Decision Lab (version %s)", "1.0.0")
    exit_code = run_cli(argv)
    logger.info("Run finished with code %s", exit_code)
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
