"""
Exception hierarchy for the decision-oriented model lab.
"""
from typing import Iterable, List, Tuple


class DomLabError(Exception):
    """Base class for all lab errors."""


class ConvergenceError(DomLabError, RuntimeError):
    """A fixed-point iteration did not reach its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = float(residual)
        self.iterations = int(iterations)


class _PairsError(DomLabError, ValueError):
    def __init__(self, message: str, pairs: Iterable[Tuple[int, int]]):
        self.pairs: List[Tuple[int, int]] = [(int(s), int(a)) for s, a in pairs]
        preview = ", ".join(f"({s},{a})" for s, a in self.pairs[:8])
        more = "" if len(self.pairs) <= 8 else f" ... (+{len(self.pairs) - 8} more)"
        super().__init__(f"{message}: {preview}{more}")


class UndefinedModelError(_PairsError):
    """A deterministic model is undefined on some (state, action) pairs."""


class MissingPairsError(_PairsError):
    """A transition dataset has no records for some (state, action) pairs."""


class ScenarioError(DomLabError, KeyError):
    """Unknown scenario name."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class NonFiniteLossError(DomLabError, FloatingPointError):
    """An optimisation objective evaluated to a non-finite value."""


class ConfigError(DomLabError, ValueError):
    """Invalid run configuration (bad flag, unknown key, non-positive override)."""
