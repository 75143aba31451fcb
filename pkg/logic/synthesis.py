"""
Decision-oriented model construction
Root-finding synthesis of deterministic models from the sufficient condition, Delta sweeps,
the penalised constrained fit and closed-loop fine-tuning of parametric models.
"""
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from logic.errors import NonFiniteLossError
from logic.mdp_core import (
    DEFAULT_TOL,
    ActionGrid,
    Mdp,
    Solution,
    StateGrid,
    closed_loop_return,
    solve_mdp,
)
from logic.models import (
    DeterministicModel,
    TransitionDataset,
    fill_undefined,
    fit_expected_value,
    induced_mdp,
)
from logic.optimality import argmax_agreement, delta_residual


logger = logging.getLogger(__name__)

ROOT_XTOL = 1e-12
JUMP_CELLS = 3.0
# a jump must also stand this many times above the median of its neighbouring steps
JUMP_RATIO = 4.0
JUMP_WINDOW = 3
FAMILIES = ("affine", "piecewise")


# ============================================================================
# SUFFICIENT-CONDITION SYNTHESIS
# ============================================================================

@dataclass(frozen=True, eq=False)
class SynthesisDiagnostics:
    """Definedness and continuity of a synthesized model over the decision region."""
    undefined_pairs: List[Tuple[int, int]]
    undefined_outside: int
    max_jump: np.ndarray
    continuous: bool
    support_violations: int
    jump_tol: float
    jump_count: int = 0

    @property
    def defined(self) -> bool:
        return not self.undefined_pairs


def _support_bounds(probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    positive = probs > 0.0
    n = probs.shape[2]
    first = np.argmax(positive, axis=2)
    last = n - 1 - np.argmax(positive[:, :, ::-1], axis=2)
    return first, last


def _select_root(
    states: StateGrid,
    values: np.ndarray,
    row: np.ndarray,
    lo: int,
    hi: int,
    target: float,
    mean: float,
) -> Optional[float]:
    """Root of interp(values)(x) = target on [points[lo], points[hi]] closest to ``mean``.

    Roots whose nearest grid node carries no probability in ``row`` are discarded.
    """
    points = states.points
    g = values[lo:hi + 1] - target
    xs = points[lo:hi + 1]
    roots = list(xs[g == 0.0])
    crossings = np.flatnonzero(g[:-1] * g[1:] < 0.0)
    for j in crossings:
        x0, x1 = xs[j], xs[j + 1]
        roots.append(brentq(lambda x: np.interp(x, points, values) - target, x0, x1, xtol=ROOT_XTOL))
    roots = [x for x in roots if row[states.nearest(x)] > 0.0]
    if not roots:
        return None
    roots = np.array(sorted(roots))
    # closest to the kernel mean; argmin keeps the lower root on ties
    return float(roots[np.argmin(np.abs(roots - mean))])


def _jump_mask(steps: np.ndarray, jump_tol: float, ratio: float) -> np.ndarray:
    """Adjacent-state steps that are jumps rather than part of a steep slope.

    A step counts when it exceeds ``jump_tol`` and ``ratio`` times the median of the
    JUMP_WINDOW steps on either side. NaN marks a step with an undefined end.
    """
    padded = np.pad(steps, ((JUMP_WINDOW, JUMP_WINDOW), (0, 0)), constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * JUMP_WINDOW + 1, axis=0)
    neighbours = np.delete(windows, JUMP_WINDOW, axis=2)
    with warnings.catch_warnings():
        # all-NaN windows (isolated steps) fall back to a zero median
        warnings.simplefilter("ignore", RuntimeWarning)
        local = np.nanmedian(neighbours, axis=2)
    local = np.nan_to_num(local, nan=0.0)
    size = np.nan_to_num(steps, nan=0.0)
    return (size > jump_tol) & (size > ratio * local)


def _diagnose(
    model: DeterministicModel,
    region: np.ndarray,
    support_ok: np.ndarray,
    jump_tol: float,
    jump_ratio: float = JUMP_RATIO,
) -> SynthesisDiagnostics:
    defined = model.defined
    inside = region[:, None] & ~defined
    undefined_pairs = [(int(s), int(a)) for s, a in np.argwhere(inside)]
    undefined_outside = int(np.count_nonzero(~region[:, None] & ~defined))

    n_actions = model.f.shape[1]
    max_jump = np.zeros(n_actions)
    jump_count = 0
    idx = np.flatnonzero(region)
    if idx.size > 1:
        adjacent = idx[:-1][np.diff(idx) == 1]
        both = defined[adjacent] & defined[adjacent + 1]
        steps = np.where(both, np.abs(model.f[adjacent + 1] - model.f[adjacent]), np.nan)
        if steps.size:
            max_jump = np.nan_to_num(steps, nan=0.0).max(axis=0)
            jump_count = int(np.count_nonzero(_jump_mask(steps, jump_tol, jump_ratio)))
    continuous = not undefined_pairs and jump_count == 0
    return SynthesisDiagnostics(
        undefined_pairs=undefined_pairs,
        undefined_outside=undefined_outside,
        max_jump=max_jump,
        continuous=continuous,
        support_violations=int(np.count_nonzero(defined & ~support_ok)),
        jump_tol=float(jump_tol),
        jump_count=jump_count,
    )


def synthesize_model(
    true_mdp: Mdp,
    true_solution: Solution,
    delta: float,
    region: Optional[np.ndarray] = None,
    jump_tol: Optional[float] = None,
    jump_ratio: float = JUMP_RATIO,
) -> Tuple[DeterministicModel, SynthesisDiagnostics]:
    """Deterministic model satisfying V*(f(s, a)) = E_true[V*(s_next) | s, a] + delta.

    Every prediction lies inside the support interval of the true row. Pairs without a
    root are left undefined and reported; a partial model is a legal outcome.

    Args:
        region: States over which definedness and continuity are diagnosed (all states
            when omitted).
        jump_tol: Smallest adjacent-state change of f that can be a jump
            (default three grid cells).
        jump_ratio: A jump must also exceed this multiple of the median of its
            neighbouring steps, so steep continuous stretches are not flagged.
    """
    states = true_mdp.states
    points = states.points
    values = np.asarray(true_solution.v_star, dtype=float)
    probs = true_mdp.kernel.probs
    if region is None:
        region = np.ones(true_mdp.n_states, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if jump_tol is None:
        jump_tol = JUMP_CELLS * states.spacing

    targets = true_mdp.kernel.expected(values) + float(delta)
    means = true_mdp.kernel.expected(points)
    first, last = _support_bounds(probs)

    n, m = true_mdp.n_states, true_mdp.n_actions
    f = np.full((n, m), np.nan)
    for s in range(n):
        for a in range(m):
            root = _select_root(
                states, values, probs[s, a], first[s, a], last[s, a], targets[s, a], means[s, a]
            )
            if root is not None:
                f[s, a] = root
    defined = ~np.isnan(f)
    model = DeterministicModel(np.where(defined, f, states.lo), defined, states)

    nearest = states.nearest(np.where(defined, f, states.lo))
    support_ok = np.take_along_axis(probs, nearest[:, :, None], axis=2)[:, :, 0] > 0.0
    diagnostics = _diagnose(model, region, support_ok, jump_tol, jump_ratio)
    if diagnostics.undefined_pairs:
        logger.warning(
            "delta %.4g: model undefined on %d region pairs", delta, len(diagnostics.undefined_pairs)
        )
    logger.info(
        "delta %.4g: max jump %.4g, continuous %s", delta, float(diagnostics.max_jump.max()),
        diagnostics.continuous,
    )
    return model, diagnostics


# ============================================================================
# DELTA SWEEP
# ============================================================================

@dataclass(frozen=True)
class SweepRow:
    delta: float
    undefined_count: int
    max_jump: float
    continuous: bool
    agreement_fraction: float


def synthesized_agreement(
    true_mdp: Mdp,
    true_solution: Solution,
    model: DeterministicModel,
    region: np.ndarray,
    tol: float = DEFAULT_TOL,
) -> Tuple[float, Solution]:
    """Agreement of the synthesized model's optimal policy with the true greedy sets.

    Undefined pairs are completed with the kernel-mean prediction, and predictions are
    attributed linearly so that the model value at f(s, a) is the interpolant used by the
    synthesis itself.
    """
    complete = fill_undefined(model, fit_expected_value(true_mdp))
    model_mdp = induced_mdp(
        complete, true_mdp.reward, true_mdp.gamma, true_mdp.states, true_mdp.actions, "linear"
    )
    model_solution = solve_mdp(model_mdp, tol=tol)
    agreement = argmax_agreement(true_solution, model_solution)
    return float(np.mean(agreement[region])), model_solution


def sweep_delta(
    true_mdp: Mdp,
    true_solution: Solution,
    deltas: Sequence[float],
    region: Optional[np.ndarray] = None,
    workers: int = 1,
) -> List[SweepRow]:
    """Synthesize and score one model per Delta; rows keep the order of ``deltas``."""
    if len(deltas) == 0:
        raise ValueError("deltas must be non-empty")
    if region is None:
        region = np.ones(true_mdp.n_states, dtype=bool)
    region = np.asarray(region, dtype=bool)

    def row(delta: float) -> SweepRow:
        model, diag = synthesize_model(true_mdp, true_solution, delta, region)
        fraction, _ = synthesized_agreement(true_mdp, true_solution, model, region)
        return SweepRow(
            delta=float(delta),
            undefined_count=len(diag.undefined_pairs),
            max_jump=float(diag.max_jump.max()),
            continuous=diag.continuous,
            agreement_fraction=fraction,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(row, deltas))
    return [row(d) for d in deltas]


# ============================================================================
# PARAMETRIC MODELS
# ============================================================================

@dataclass(frozen=True, eq=False)
class ParametricModel:
    """f_theta(s, a) on a fixed basis: affine (s, a, 1) or piecewise-affine in s."""
    theta: np.ndarray
    family: str = "affine"
    breakpoint: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family '{self.family}'")
        theta = np.array(self.theta, dtype=float).ravel()
        if theta.size != n_params(self.family):
            raise ValueError(f"family '{self.family}' needs {n_params(self.family)} parameters")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def evaluate(self, states: StateGrid, actions: ActionGrid) -> np.ndarray:
        design = basis(self.family, states.points, actions.points, self.breakpoint)
        return design @ self.theta

    def to_model(self, states: StateGrid, actions: ActionGrid) -> DeterministicModel:
        return DeterministicModel.from_map(self.evaluate(states, actions), states)


def n_params(family: str) -> int:
    return 3 if family == "affine" else 4


def basis(family: str, s: np.ndarray, a: np.ndarray, breakpoint: float = 0.5) -> np.ndarray:
    """Design tensor of shape (len(s), len(a), n_params)."""
    S, A = np.meshgrid(np.asarray(s, dtype=float), np.asarray(a, dtype=float), indexing="ij")
    columns = [S, A, np.ones_like(S)]
    if family == "piecewise":
        columns.append(np.maximum(S - breakpoint, 0.0))
    return np.stack(columns, axis=-1)


def fit_parametric(
    target: np.ndarray,
    states: StateGrid,
    actions: ActionGrid,
    family: str = "affine",
    weights: Optional[np.ndarray] = None,
    breakpoint: float = 0.5,
) -> ParametricModel:
    """Weighted least-squares projection of a (states, actions) map onto a family."""
    design = basis(family, states.points, actions.points, breakpoint).reshape(-1, n_params(family))
    y = np.asarray(target, dtype=float).ravel()
    w = np.ones_like(y) if weights is None else np.sqrt(np.asarray(weights, dtype=float).ravel())
    theta, *_ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
    return ParametricModel(theta, family, breakpoint)


# ============================================================================
# PATTERN SEARCH
# ============================================================================

def pattern_search(
    objective: Callable[[np.ndarray], float],
    theta0: np.ndarray,
    step: float,
    budget: int,
    shrink: float = 0.5,
    min_step: float = 1e-4,
) -> Tuple[np.ndarray, float, List[Tuple[np.ndarray, float]], int]:
    """Compass search minimising ``objective``.

    Each iteration evaluates theta +/- step along every coordinate (fixed order) and moves
    to the best candidate if it strictly improves; otherwise the step shrinks.

    Returns:
        (best theta, best value, accepted (theta, value) trace, iterations used)
    """
    theta = np.array(theta0, dtype=float)
    best = float(objective(theta))
    trace = [(theta.copy(), best)]
    iterations = 0
    for iterations in range(1, budget + 1):
        candidates = []
        for i in range(theta.size):
            for sign in (1.0, -1.0):
                cand = theta.copy()
                cand[i] += sign * step
                candidates.append(cand)
        scores = [float(objective(c)) for c in candidates]
        j = int(np.argmin(scores))
        if scores[j] < best:
            theta, best = candidates[j], scores[j]
            trace.append((theta.copy(), best))
            logger.debug("pattern search %d: accepted %.10g", iterations, best)
        else:
            step *= shrink
            if step < min_step:
                break
    return theta, best, trace, iterations


# ============================================================================
# CONSTRAINED FIT
# ============================================================================

@dataclass(frozen=True)
class FitReport:
    data_loss: float
    penalty: float
    delta_bar: float
    objective: float
    iterations: int


class _DatasetMoments:
    """Per-pair counts, means and within-pair sums of squares of the records whose
    state lies in ``region``."""

    def __init__(self, dataset: TransitionDataset, region: np.ndarray):
        n, m = dataset.states.size, dataset.n_actions
        keep = region[dataset.s_idx]
        if not keep.any():
            raise ValueError("dataset has no records inside the region")
        y = dataset.states.points[dataset.snext_idx[keep]]
        idx = dataset.pair_index[keep]
        self.total = float(np.count_nonzero(keep))
        self.counts = np.bincount(idx, minlength=n * m).astype(float).reshape(n, m)
        sums = np.bincount(idx, weights=y, minlength=n * m).reshape(n, m)
        sq = np.bincount(idx, weights=y * y, minlength=n * m).reshape(n, m)
        safe = np.where(self.counts > 0, self.counts, 1.0)
        self.means = np.where(self.counts > 0, sums / safe, 0.0)
        self.within = float(np.sum(np.maximum(sq - self.counts * self.means ** 2, 0.0)))

    def loss(self, f: np.ndarray) -> float:
        between = np.sum(self.counts * (f - self.means) ** 2)
        return float((between + self.within) / self.total)


def constrained_fit(
    dataset: TransitionDataset,
    true_mdp: Mdp,
    true_solution: Solution,
    family: str = "affine",
    penalty_weight: float = 0.0,
    delta_free: bool = True,
    region: Optional[np.ndarray] = None,
    budget: int = 200,
    step: float = 0.05,
) -> Tuple[ParametricModel, FitReport]:
    """Least-squares data fit plus a quadratic penalty on the sufficient-condition residual.

    objective = mean_region (f_theta(s_i, a_i) - s_next_i)^2
                + penalty_weight * mean_region (delta(s, a) - delta_bar)^2
    with delta_bar the residual mean when ``delta_free`` and 0 otherwise. Only records
    whose state lies in ``region`` enter the data term. The search starts from the
    plain least-squares solution over those records.
    """
    if penalty_weight < 0:
        raise ValueError("penalty_weight must be >= 0")
    states, actions = true_mdp.states, true_mdp.actions
    if region is None:
        region = np.ones(true_mdp.n_states, dtype=bool)
    region = np.asarray(region, dtype=bool)
    # successors of extended-domain states are clamped at the grid edge
    moments = _DatasetMoments(dataset, region)
    start = fit_parametric(moments.means, states, actions, family, weights=moments.counts)

    def terms(theta: np.ndarray) -> Tuple[float, float, float]:
        model = ParametricModel(theta, family).to_model(states, actions)
        data_loss = moments.loss(model.f)
        residual = delta_residual(true_mdp, true_solution, model)[region]
        delta_bar = float(residual.mean()) if delta_free else 0.0
        penalty = float(np.mean((residual - delta_bar) ** 2))
        return data_loss, penalty, delta_bar

    def objective(theta: np.ndarray) -> float:
        data_loss, penalty, _ = terms(theta)
        value = data_loss + penalty_weight * penalty
        if not np.isfinite(value):
            raise NonFiniteLossError(f"constrained fit loss is not finite at theta={theta.tolist()}")
        return value

    if penalty_weight > 0:
        theta, best, _, iterations = pattern_search(objective, start.theta, step, budget)
    else:
        theta, best, iterations = np.array(start.theta), objective(start.theta), 0
    data_loss, penalty, delta_bar = terms(theta)
    report = FitReport(data_loss, penalty, delta_bar, best, iterations)
    logger.info(
        "constrained fit (%s, weight %.3g): data %.6g, penalty %.6g", family, penalty_weight,
        data_loss, penalty,
    )
    return ParametricModel(theta, family), report


# ============================================================================
# CLOSED-LOOP FINE-TUNING
# ============================================================================

@dataclass(frozen=True, eq=False)
class FineTuneStep:
    theta: np.ndarray
    j: float
    objective: float


def fine_tune(
    family: str,
    theta0: Sequence[float],
    true_mdp: Mdp,
    budget: int,
    objective: str = "closed_loop",
    true_solution: Optional[Solution] = None,
    region: Optional[np.ndarray] = None,
    step: float = 0.05,
    min_step: float = 1e-4,
) -> Tuple[ParametricModel, List[FineTuneStep]]:
    """Derivative-free tuning of model parameters for decision quality.

    ``objective="closed_loop"`` maximises J of the model-induced optimal policy on the true
    MDP (uniform initial distribution over ``region``); ``objective="q_match"`` minimises
    the mean squared gap between Q* and the model Q over region pairs. Accepted iterates
    are recorded with their closed-loop J. An exhausted budget returns the best so far.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if objective not in ("closed_loop", "q_match"):
        raise ValueError(f"unknown objective '{objective}'")
    if objective == "q_match" and true_solution is None:
        true_solution = solve_mdp(true_mdp)
    states, actions = true_mdp.states, true_mdp.actions
    if region is None:
        region = np.ones(true_mdp.n_states, dtype=bool)
    region = np.asarray(region, dtype=bool)

    def model_solution(theta: np.ndarray) -> Solution:
        model = ParametricModel(theta, family).to_model(states, actions)
        model_mdp = induced_mdp(model, true_mdp.reward, true_mdp.gamma, states, actions)
        return solve_mdp(model_mdp)

    def closed_loop_j(solution: Solution) -> float:
        return closed_loop_return(true_mdp, solution.policy, region)

    def score(theta: np.ndarray) -> float:
        solution = model_solution(theta)
        if objective == "closed_loop":
            return -closed_loop_j(solution)
        gap = true_solution.q_star[region] - solution.q_star[region]
        return float(np.mean(gap ** 2))

    _, _, accepted, iterations = pattern_search(score, theta0, step, budget, min_step=min_step)
    trace = []
    for theta, value in accepted:
        j = -value if objective == "closed_loop" else closed_loop_j(model_solution(theta))
        trace.append(FineTuneStep(theta, float(j), float(value)))
    logger.info(
        "fine-tune (%s): J %.6g -> %.6g over %d iterations", objective, trace[0].j, trace[-1].j,
        iterations,
    )
    return ParametricModel(accepted[-1][0], family), trace
