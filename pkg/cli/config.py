"""
Run configuration
Defaults, flat key=value config files and the frozen RunConfig handed to the commands.
"""
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from logic.errors import ConfigError


logger = logging.getLogger(__name__)

COMMANDS = ("solve", "fit", "audit", "synthesize", "sweep", "finetune", "reproduce")
FAMILIES = ("affine", "piecewise")
OBJECTIVES = ("closed_loop", "q_match")
OUT_ENV = "DOM_LAB_OUT"
DEFAULT_OUT = "artifacts"
MAX_SEED = 2 ** 64

DEFAULT_RUN_OPTIONS = {
    "states": None,
    "actions": None,
    "noise_nodes": None,
    "delta": 0.1,
    "deltas": (0.10, 0.11, 0.15),
    "seed": 0,
    "out": None,
    "tol": 1e-10,
    "per_pair": 0,
    "family": "affine",
    "budget": 200,
    "objective": "closed_loop",
    "penalty_weight": 0.0,
    "workers": 1,
    "model": None,
}

# Options that must be strictly positive when given
POSITIVE_OPTIONS = ("states", "actions", "noise_nodes", "tol", "budget", "workers")

_INT_OPTIONS = ("states", "actions", "noise_nodes", "seed", "per_pair", "budget", "workers")
_FLOAT_OPTIONS = ("delta", "tol", "penalty_weight")


@dataclass(frozen=True)
class RunConfig:
    command: str
    scenario: str
    states: Optional[int] = None
    actions: Optional[int] = None
    noise_nodes: Optional[int] = None
    delta: float = 0.1
    deltas: Tuple[float, ...] = (0.10, 0.11, 0.15)
    seed: int = 0
    out: str = DEFAULT_OUT
    tol: float = 1e-10
    per_pair: int = 0
    family: str = "affine"
    budget: int = 200
    objective: str = "closed_loop"
    penalty_weight: float = 0.0
    workers: int = 1
    model: Optional[str] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command '{self.command}'")
        if not self.scenario:
            raise ConfigError("scenario name is required")
        for name in POSITIVE_OPTIONS:
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0 <= self.seed < MAX_SEED:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.per_pair < 0 or self.penalty_weight < 0:
            raise ConfigError("per_pair and penalty_weight must be >= 0")
        if not self.deltas:
            raise ConfigError("deltas must list at least one value")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {', '.join(FAMILIES)}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {', '.join(OBJECTIVES)}")

    @property
    def output_dir(self) -> Path:
        """``<out>/<command>-<scenario>`` with the scenario made path-safe."""
        safe = "".join(c if c.isalnum() or c in "_.-" else "-" for c in self.scenario)
        return Path(self.out) / f"{self.command}-{safe}"

    def header(self) -> Dict[str, Any]:
        """Reproducibility record placed at the top of every JSON artifact."""
        options = asdict(self)
        options["deltas"] = list(self.deltas)
        # the output root does not change results
        options.pop("out")
        return {"command": self.command, "scenario": self.scenario, "seed": self.seed, "config": options}


def _coerce(key: str, value: Any) -> Any:
    if value is None or not isinstance(value, str):
        return value
    try:
        if key in _INT_OPTIONS:
            return int(value)
        if key in _FLOAT_OPTIONS:
            return float(value)
        if key == "deltas":
            return parse_deltas(value)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: '{value}'")
    return value


def parse_deltas(text: str) -> Tuple[float, ...]:
    """Comma-separated list, or ``start:stop:step`` inclusive of stop."""
    text = text.strip()
    if text.count(":") == 2:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0 or stop < start:
            raise ValueError(text)
        count = int(round((stop - start) / step)) + 1
        return tuple(round(start + i * step, 12) for i in range(count))
    return tuple(float(x) for x in text.split(",") if x.strip())


def load_config_file(path) -> Dict[str, str]:
    """Flat ``key=value`` lines; ``#`` comments and blank lines are skipped."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file '{path}': {exc}")
    for number, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULT_RUN_OPTIONS:
            raise ConfigError(f"{path}:{number}: unknown key '{key}'")
        values[key] = value
    return values


def build_config(
    command: str,
    scenario: str,
    flags: Optional[Dict[str, Any]] = None,
    config_path: Optional[str] = None,
) -> RunConfig:
    """Merge defaults < config file < flags (flags that are None do not override)."""
    options = DEFAULT_RUN_OPTIONS.copy()
    options["out"] = os.environ.get(OUT_ENV, DEFAULT_OUT)
    if config_path:
        for key, value in load_config_file(config_path).items():
            options[key] = _coerce(key, value)
    for key, value in (flags or {}).items():
        if key not in DEFAULT_RUN_OPTIONS:
            raise ConfigError(f"unknown option '{key}'")
        if value is not None:
            options[key] = _coerce(key, value)
    logger.debug("run options: %s", options)
    return RunConfig(command=command, scenario=scenario, **options)
