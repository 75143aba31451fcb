"""
Optimality audit of predictive models
Delta-residual of the sufficient condition, storage functions, the class-K sandwich
between true and model advantages, and the bounded-value set check.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from logic.errors import UndefinedModelError
from logic.mdp_core import (
    DEFAULT_TOL,
    GREEDY_TOL,
    Mdp,
    Solution,
    greedy_sets,
    policy_matrix,
    solve_mdp,
)
from logic.models import DeterministicModel, PredictiveModel, induced_mdp


logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-8
INTERP_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class StorageField:
    """lambda(s) and Lambda(s, a) = lambda(s) - gamma * E_model[lambda(s_next) | s, a]."""
    lam: np.ndarray
    big_lambda: np.ndarray


@dataclass(frozen=True, eq=False)
class Alpha0:
    """Tabulated lower bound alpha0(x) = min d_model s.t. d_true >= x, extended linearly."""
    breakpoints: np.ndarray
    values: np.ndarray
    feasible: bool

    def __call__(self, x) -> np.ndarray:
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        top = self.breakpoints[-1]
        idx = np.clip(np.searchsorted(self.breakpoints, x, side="left"), 0, self.breakpoints.size - 1)
        return np.where(x > top, self.values[-1] + x - top, self.values[idx])


@dataclass(frozen=True, eq=False)
class SandwichResult:
    alpha0: Alpha0
    beta0: Alpha0
    holds: bool


@dataclass(frozen=True, eq=False)
class ConditionReport:
    delta_field: np.ndarray
    delta_spread: float
    argmax_agreement: np.ndarray
    agreement_fraction: float
    alpha0: Alpha0
    beta0: Alpha0
    sandwich_holds: bool
    value_gap: float
    modified_bellman_residual: float
    q_match: bool
    q_offset: float
    q_offset_holds: bool
    region: Optional[np.ndarray] = field(default=None)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready summary (arrays go to CSV dumps)."""
        # no region means every state
        region_states = self.delta_field.shape[0] if self.region is None else np.count_nonzero(self.region)
        return {
            "delta_spread": float(self.delta_spread),
            "agreement_fraction": float(self.agreement_fraction),
            "sandwich_holds": bool(self.sandwich_holds),
            "value_gap": float(self.value_gap),
            "modified_bellman_residual": float(self.modified_bellman_residual),
            "alpha0_feasible": bool(self.alpha0.feasible),
            "beta0_feasible": bool(self.beta0.feasible),
            "q_match": bool(self.q_match),
            "q_offset": float(self.q_offset),
            "q_offset_holds": bool(self.q_offset_holds),
            "region_states": int(region_states),
        }


def delta_residual(
    true_mdp: Mdp,
    true_solution: Solution,
    model: PredictiveModel,
    allow_partial: bool = False,
) -> np.ndarray:
    """Sufficient-condition residual on the cost-to-go -V*.

    delta(s, a) = E_model[V*(s_next) | s, a] - E_true[V*(s_next) | s, a]; deterministic
    models evaluate V* by piecewise-linear interpolation at f(s, a). A model whose
    residual is constant over all pairs is closed-loop optimal.

    Undefined pairs of a partial model raise unless ``allow_partial``, in which case
    they come back as NaN.
    """
    v = true_solution.v_star
    e_true = true_mdp.kernel.expected(v)
    if isinstance(model, DeterministicModel):
        if not model.is_complete and not allow_partial:
            raise UndefinedModelError("model is undefined on pairs", model.undefined_pairs())
        f = np.where(model.defined, model.f, true_mdp.states.lo)
        e_model = true_mdp.states.interpolate(v, f)
        return np.where(model.defined, e_model - e_true, np.nan)
    return model.kernel.expected(v) - e_true


def storage_matching(true_solution: Solution, model_mdp: Mdp, model_solution: Solution) -> StorageField:
    """Storage function matching the model value to V*: lambda = V* - V_model."""
    lam = np.asarray(true_solution.v_star - model_solution.v_star, dtype=float)
    big_lambda = lam[:, None] - model_mdp.gamma * model_mdp.kernel.expected(lam)
    return StorageField(lam, big_lambda)


def modified_bellman_residual(storage: StorageField, model_mdp: Mdp, model_solution: Solution) -> float:
    """Sup-norm violation of Q_model + lambda = r + Lambda + gamma * E_model[V_model + lambda]."""
    lhs = model_solution.q_star + storage.lam[:, None]
    rhs = (
        model_mdp.reward.values
        + storage.big_lambda
        + model_mdp.gamma * model_mdp.kernel.expected(model_solution.v_star + storage.lam)
    )
    return float(np.max(np.abs(lhs - rhs)))


def alpha0_construct(d_true: np.ndarray, d_model: np.ndarray, tol: float = GREEDY_TOL) -> Alpha0:
    """Constructive alpha0 from two disadvantage tables (D = -A >= 0).

    alpha0(x) is the smallest model disadvantage among pairs whose true disadvantage is
    at least x, tabulated at the distinct true disadvantages. The construction is
    feasible (alpha0(x) > 0 for every tabulated x > 0) exactly when every pair that is
    greedy for the model is greedy for the true problem.
    """
    dt = np.asarray(d_true, dtype=float).ravel()
    dm = np.asarray(d_model, dtype=float).ravel()
    if dt.shape != dm.shape:
        raise ValueError("disadvantage tables must have the same shape")
    if dt.min() < -tol or dm.min() < -tol:
        raise ValueError("disadvantages must be non-negative")
    dt = np.where(dt <= tol, 0.0, dt)
    dm = np.where(dm <= tol, 0.0, dm)

    order = np.argsort(dt, kind="stable")
    dt_sorted = dt[order]
    suffix_min = np.minimum.accumulate(dm[order][::-1])[::-1]
    breakpoints = np.unique(dt_sorted)
    values = suffix_min[np.searchsorted(dt_sorted, breakpoints, side="left")]
    feasible = bool(np.all(values[breakpoints > 0] > 0))
    breakpoints.setflags(write=False)
    values.setflags(write=False)
    return Alpha0(breakpoints, values, feasible)


def check_sandwich(true_solution: Solution, model_solution: Solution, tol: float = GREEDY_TOL) -> SandwichResult:
    """Two-sided class-K sandwich between model and true advantages.

    alpha side: alpha0 on (D_true, D_model), feasible iff model greedy sets are inside the
    true ones. beta side: the reflected pair (D_model, D_true), feasible iff the true greedy
    sets are inside the model ones. Both together hold iff the greedy sets coincide.
    """
    d_true = -np.asarray(true_solution.advantage)
    d_model = -np.asarray(model_solution.advantage)
    alpha0 = alpha0_construct(d_true, d_model, tol)
    beta0 = alpha0_construct(d_model, d_true, tol)
    return SandwichResult(alpha0, beta0, alpha0.feasible and beta0.feasible)


def argmax_agreement(true_solution: Solution, model_solution: Solution, tol: float = GREEDY_TOL) -> np.ndarray:
    """Per state: every model-greedy action is greedy for the true problem."""
    true_sets = true_solution.greedy_sets(tol)
    model_sets = model_solution.greedy_sets(tol)
    return np.all(~model_sets | true_sets, axis=1)


def q_conditions(
    true_solution: Solution, model_solution: Solution, tol: float = INTERP_TOL
) -> Tuple[bool, float, bool]:
    """Perfect-model check Q_model = Q* and its constant-offset relaxation Q_model + Q0 = Q*.

    Returns (q_match, q_offset, q_offset_holds) with Q0 estimated as the mean gap.
    """
    gap = np.asarray(true_solution.q_star - model_solution.q_star, dtype=float)
    q_match = bool(np.max(np.abs(gap)) <= tol)
    q_offset = float(np.mean(gap))
    q_offset_holds = bool(np.max(np.abs(gap - q_offset)) <= tol)
    return q_match, q_offset, q_offset_holds


def omega_check(
    model_mdp: Mdp,
    policy: np.ndarray,
    horizon: int,
    bound: float,
    model_values: Optional[np.ndarray] = None,
) -> np.ndarray:
    """States whose model rollouts under ``policy`` keep E|V_model| <= bound for k < horizon.

    An empty result is legal and only logged.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if model_values is None:
        model_values = solve_mdp(model_mdp).v_star
    P_pi, _ = policy_matrix(model_mdp, policy)
    u = np.abs(np.asarray(model_values, dtype=float))
    threshold = bound + 1e-12 * max(1.0, abs(bound))
    inside = np.ones(model_mdp.n_states, dtype=bool)
    for _ in range(horizon):
        inside &= u <= threshold
        u = P_pi @ u
    if not inside.any():
        logger.warning("bounded-value set is empty (bound %.6g, horizon %d)", bound, horizon)
    return inside


def audit_model(
    true_mdp: Mdp,
    true_solution: Solution,
    model: PredictiveModel,
    region: Optional[np.ndarray] = None,
    attribution: str = "nearest",
    tol: float = DEFAULT_TOL,
) -> Tuple[ConditionReport, Solution]:
    """Solve the model-based MDP and run every optimality check against the true solution.

    Args:
        region: Boolean state mask over which agreement and residual spread are reported
            (all states when omitted).
        attribution: Grid attribution of deterministic predictions in the induced MDP.

    Returns:
        The condition report and the model-based solution.
    """
    if region is None:
        region = np.ones(true_mdp.n_states, dtype=bool)
    region = np.asarray(region, dtype=bool)

    model_mdp = induced_mdp(
        model, true_mdp.reward, true_mdp.gamma, true_mdp.states, true_mdp.actions, attribution
    )
    model_solution = solve_mdp(model_mdp, tol=tol)

    delta_field = delta_residual(true_mdp, true_solution, model)
    regional = delta_field[region]
    delta_spread = float(regional.max() - regional.min()) if regional.size else 0.0

    agreement = argmax_agreement(true_solution, model_solution)
    agreement_fraction = float(np.mean(agreement[region])) if region.any() else 1.0

    sandwich = check_sandwich(true_solution, model_solution)
    storage = storage_matching(true_solution, model_mdp, model_solution)
    value_gap = float(np.max(np.abs(model_solution.v_star + storage.lam - true_solution.v_star)))
    q_match, q_offset, q_offset_holds = q_conditions(true_solution, model_solution)

    report = ConditionReport(
        delta_field=delta_field,
        delta_spread=delta_spread,
        argmax_agreement=agreement,
        agreement_fraction=agreement_fraction,
        alpha0=sandwich.alpha0,
        beta0=sandwich.beta0,
        sandwich_holds=sandwich.holds,
        value_gap=value_gap,
        modified_bellman_residual=modified_bellman_residual(storage, model_mdp, model_solution),
        q_match=q_match,
        q_offset=q_offset,
        q_offset_holds=q_offset_holds,
        region=region,
    )
    logger.info(
        "audit: agreement %.4f, delta spread %.3e, sandwich %s",
        agreement_fraction, delta_spread, sandwich.holds,
    )
    return report, model_solution
