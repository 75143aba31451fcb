"""
Predictive models
Deterministic maps and stochastic kernels, conventional fitting (expected value / MLE)
and the model-based MDP they induce.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from logic.errors import MissingPairsError, UndefinedModelError
from logic.mdp_core import (
    ActionGrid,
    Mdp,
    RewardTable,
    StateGrid,
    TransitionKernel,
    grid_kernel,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DeterministicModel:
    """Single-point prediction s_next = f(s, a), possibly undefined on some pairs."""
    f: np.ndarray
    defined: np.ndarray
    states: StateGrid

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        defined = np.array(self.defined, dtype=bool)
        if f.ndim != 2 or defined.shape != f.shape:
            raise ValueError("f and defined must be (states, actions) tables of equal shape")
        if f.shape[0] != self.states.size:
            raise ValueError("f has the wrong number of states")
        # undefined entries carry no prediction
        f = np.where(defined, f, np.nan)
        inside = f[defined]
        tol = 1e-12 * max(1.0, abs(self.states.lo), abs(self.states.hi))
        if inside.size and (inside.min() < self.states.lo - tol or inside.max() > self.states.hi + tol):
            raise ValueError("deterministic model predictions must lie inside the state grid")
        f.setflags(write=False)
        defined.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "defined", defined)

    @classmethod
    def from_map(cls, f: np.ndarray, states: StateGrid) -> "DeterministicModel":
        """Fully defined model; predictions are clamped to the grid bounds."""
        f = np.clip(np.asarray(f, dtype=float), states.lo, states.hi)
        return cls(f, np.ones(f.shape, dtype=bool), states)

    @property
    def is_complete(self) -> bool:
        return bool(self.defined.all())

    def undefined_pairs(self) -> List[Tuple[int, int]]:
        return [(int(s), int(a)) for s, a in np.argwhere(~self.defined)]


@dataclass(frozen=True, eq=False)
class StochasticModel:
    """Model transition kernel over the same grids as the true MDP."""
    kernel: TransitionKernel


PredictiveModel = Union[DeterministicModel, StochasticModel]


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Observed (s, a, s_next) index triples."""
    s_idx: np.ndarray
    a_idx: np.ndarray
    snext_idx: np.ndarray
    states: StateGrid
    n_actions: int
    seed: Optional[int] = None

    def __post_init__(self):
        cols = [np.array(c, dtype=np.int64).ravel() for c in (self.s_idx, self.a_idx, self.snext_idx)]
        if not (cols[0].size == cols[1].size == cols[2].size):
            raise ValueError("dataset columns must have equal length")
        if cols[0].size == 0:
            raise ValueError("dataset is empty")
        n = self.states.size
        if (
            cols[0].min() < 0 or cols[0].max() >= n
            or cols[2].min() < 0 or cols[2].max() >= n
            or cols[1].min() < 0 or cols[1].max() >= self.n_actions
        ):
            raise ValueError("dataset contains out-of-range indices")
        for name, col in zip(("s_idx", "a_idx", "snext_idx"), cols):
            col.setflags(write=False)
            object.__setattr__(self, name, col)

    def __len__(self) -> int:
        return int(self.s_idx.size)

    @property
    def pair_index(self) -> np.ndarray:
        return self.s_idx * self.n_actions + self.a_idx

    def pair_counts(self) -> np.ndarray:
        n_pairs = self.states.size * self.n_actions
        return np.bincount(self.pair_index, minlength=n_pairs).reshape(self.states.size, self.n_actions)

    def transition_counts(self) -> np.ndarray:
        n = self.states.size
        counts = np.zeros((n * self.n_actions, n))
        np.add.at(counts, (self.pair_index, self.snext_idx), 1.0)
        return counts.reshape(n, self.n_actions, n)

    def _require_all_pairs(self) -> np.ndarray:
        counts = self.pair_counts()
        missing = np.argwhere(counts == 0)
        if missing.size:
            raise MissingPairsError("dataset has no records for pairs", missing)
        return counts


def sample_transitions(mdp: Mdp, per_pair: int, seed: int) -> TransitionDataset:
    """Draw exactly ``per_pair`` successors from every kernel row."""
    if per_pair < 1:
        raise ValueError("per_pair must be >= 1")
    rng = np.random.default_rng(seed)
    n, m = mdp.n_states, mdp.n_actions
    cdf = np.cumsum(mdp.kernel.probs, axis=2)
    draws = rng.random((n, m, per_pair))
    snext = np.empty((n, m, per_pair), dtype=np.int64)
    for s in range(n):
        for a in range(m):
            snext[s, a] = np.searchsorted(cdf[s, a], draws[s, a], side="right")
    np.clip(snext, 0, n - 1, out=snext)
    s_idx = np.repeat(np.arange(n), m * per_pair)
    a_idx = np.tile(np.repeat(np.arange(m), per_pair), n)
    logger.debug("sampled %d transitions (seed %s)", snext.size, seed)
    return TransitionDataset(s_idx, a_idx, snext.ravel(), mdp.states, m, seed)


def fit_expected_value(source: Union[Mdp, TransitionDataset]) -> DeterministicModel:
    """Conditional-mean model: exact kernel mean or per-pair sample mean, clamped to the grid."""
    if isinstance(source, Mdp):
        mean = source.kernel.expected(source.states.points)
        return DeterministicModel.from_map(mean, source.states)
    counts = source._require_all_pairs()
    n, m = source.states.size, source.n_actions
    sums = np.bincount(
        source.pair_index, weights=source.states.points[source.snext_idx], minlength=n * m
    ).reshape(n, m)
    return DeterministicModel.from_map(sums / counts, source.states)


def fit_mle(source: Union[Mdp, TransitionDataset]) -> Tuple[StochasticModel, DeterministicModel]:
    """Tabular maximum-likelihood kernel and its mode map.

    Over unconstrained tabular kernels the likelihood maximiser is the empirical row
    distribution. The mode map picks the most probable successor of every row, ties
    going to the lower state index.
    """
    if isinstance(source, Mdp):
        kernel = TransitionKernel(source.kernel.probs)
        states = source.states
    else:
        counts = source._require_all_pairs()
        kernel = TransitionKernel(source.transition_counts() / counts[:, :, None])
        states = source.states
    mode = states.points[np.argmax(kernel.probs, axis=2)]
    return StochasticModel(kernel), DeterministicModel.from_map(mode, states)


def fill_undefined(model: DeterministicModel, fallback: DeterministicModel) -> DeterministicModel:
    """Complete a partial model with ``fallback`` predictions on its undefined pairs."""
    if model.is_complete:
        return model
    f = np.where(model.defined, model.f, fallback.f)
    return DeterministicModel(f, model.defined | fallback.defined, model.states)


def model_kernel(model: PredictiveModel, states: StateGrid, attribution: str = "nearest") -> TransitionKernel:
    """Kernel of a predictive model; deterministic maps become Dirac rows on the grid."""
    if isinstance(model, StochasticModel):
        return model.kernel
    if not model.is_complete:
        raise UndefinedModelError("model is undefined on pairs", model.undefined_pairs())
    return grid_kernel(states, model.f, np.zeros(1), np.ones(1), attribution=attribution)


def induced_mdp(
    model: PredictiveModel,
    reward: RewardTable,
    gamma: float,
    states: StateGrid,
    actions: ActionGrid,
    attribution: str = "nearest",
) -> Mdp:
    """Model-based MDP (states, actions, reward, model kernel, gamma).

    Deterministic predictions are rounded to the nearest grid point by default;
    ``attribution="linear"`` instead splits each Dirac between the bracketing nodes,
    which makes the model value at an off-grid prediction the linear interpolant.
    """
    kernel = model_kernel(model, states, attribution)
    return Mdp(states, actions, kernel, reward, gamma)
