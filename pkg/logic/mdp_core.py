"""
Tabular MDP core
Discretized stochastic decision processes, exact value iteration and policy evaluation
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Optional, Tuple

import numpy as np
from scipy import sparse

from logic.errors import ConvergenceError


logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200_000
ROW_SUM_TOL = 1e-9
# Advantages within this band of zero count as greedy (absorbs tol / (1 - gamma))
GREEDY_TOL = 1e-7


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateGrid:
    """Uniform grid of scalar states."""
    points: np.ndarray

    def __post_init__(self):
        pts = _frozen_array(self.points)
        # a single point is allowed for degenerate one-state problems
        if pts.ndim != 1 or pts.size < 1:
            raise ValueError("StateGrid needs at least 1 point")
        if pts.size > 1:
            diffs = np.diff(pts)
            if np.any(diffs <= 0):
                raise ValueError("StateGrid points must be strictly increasing")
            spacing = (pts[-1] - pts[0]) / (pts.size - 1)
            scale = max(abs(spacing), float(np.abs(pts).max()))
            if np.max(np.abs(diffs - spacing)) > 1e-12 * scale:
                raise ValueError("StateGrid points must be uniformly spaced")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "StateGrid":
        return cls(np.linspace(float(lo), float(hi), int(n)))

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])

    @property
    def spacing(self) -> float:
        if self.size == 1:
            return 1.0
        return (self.hi - self.lo) / (self.size - 1)

    @property
    def size(self) -> int:
        return int(self.points.size)

    def interpolate(self, values: np.ndarray, x) -> np.ndarray:
        """Piecewise-linear interpolation of per-state ``values`` at ``x`` (clamped at the ends)."""
        return np.interp(x, self.points, values)

    def nearest(self, x) -> np.ndarray:
        """Index of the nearest grid point; exact midpoints go to the upper node."""
        u = (np.clip(x, self.lo, self.hi) - self.lo) / self.spacing
        return np.clip(np.floor(u + 0.5).astype(int), 0, self.size - 1)

    def mask_between(self, lo: float, hi: float) -> np.ndarray:
        """Boolean mask of grid points inside ``[lo, hi]`` (half a micro-cell of slack)."""
        eps = 1e-9 * self.spacing
        return (self.points >= lo - eps) & (self.points <= hi + eps)


@dataclass(frozen=True, eq=False)
class ActionGrid:
    """Ordered scalar actions."""
    points: np.ndarray

    def __post_init__(self):
        pts = _frozen_array(self.points)
        if pts.ndim != 1 or pts.size < 1:
            raise ValueError("ActionGrid needs at least 1 point")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("ActionGrid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "ActionGrid":
        if int(n) == 1:
            return cls(np.array([0.5 * (float(lo) + float(hi))]))
        return cls(np.linspace(float(lo), float(hi), int(n)))

    @property
    def size(self) -> int:
        return int(self.points.size)


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """probs[s, a, s_next]: row-stochastic over the last index."""
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen_array(self.probs)
        if probs.ndim != 3:
            raise ValueError("TransitionKernel needs a [state, action, next-state] table")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("TransitionKernel entries must be finite and non-negative")
        row_sums = probs.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError("TransitionKernel rows must sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return int(self.probs.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.probs.shape[1])

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        """CSR view of shape (states * actions, states) used by the sweeps."""
        return sparse.csr_matrix(self.probs.reshape(-1, self.probs.shape[2]))

    def expected(self, values: np.ndarray) -> np.ndarray:
        """E[values(s_next) | s, a] for every pair, shape (states, actions)."""
        flat = self.matrix @ np.asarray(values, dtype=float)
        return flat.reshape(self.n_states, self.n_actions)

    def support(self, s: int, a: int) -> np.ndarray:
        """Indices of successors with strictly positive probability."""
        return np.flatnonzero(self.probs[s, a] > 0.0)


@dataclass(frozen=True, eq=False)
class RewardTable:
    values: np.ndarray
    penalty_coeff: float = 0.0

    def __post_init__(self):
        vals = _frozen_array(self.values)
        if vals.ndim != 2:
            raise ValueError("RewardTable needs a [state, action] table")
        if not np.all(np.isfinite(vals)):
            raise ValueError("RewardTable entries must be finite")
        if self.penalty_coeff < 0:
            raise ValueError("penalty_coeff must be >= 0")
        object.__setattr__(self, "values", vals)

    def shifted(self, c: float) -> "RewardTable":
        return RewardTable(self.values + float(c), self.penalty_coeff)


@dataclass(frozen=True, eq=False)
class Mdp:
    """The tuple (states, actions, reward, kernel, gamma)."""
    states: StateGrid
    actions: ActionGrid
    kernel: TransitionKernel
    reward: RewardTable
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        n, m = self.states.size, self.actions.size
        if self.kernel.probs.shape != (n, m, n):
            raise ValueError(
                f"kernel shape {self.kernel.probs.shape} does not match grids ({n}, {m}, {n})"
            )
        if self.reward.values.shape != (n, m):
            raise ValueError(f"reward shape {self.reward.values.shape} does not match grids ({n}, {m})")

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def n_actions(self) -> int:
        return self.actions.size

    def with_reward(self, reward: RewardTable) -> "Mdp":
        return Mdp(self.states, self.actions, self.kernel, reward, self.gamma)

    def with_kernel(self, kernel: TransitionKernel) -> "Mdp":
        return Mdp(self.states, self.actions, kernel, self.reward, self.gamma)


@dataclass(frozen=True, eq=False)
class Solution:
    """V*, Q*, greedy policy and advantage of one MDP."""
    v_star: np.ndarray
    q_star: np.ndarray
    policy: np.ndarray
    advantage: np.ndarray
    iterations: int
    residual: float

    def greedy_sets(self, tol: float = GREEDY_TOL) -> np.ndarray:
        return greedy_sets(self.q_star, tol)


def greedy_sets(q: np.ndarray, tol: float = GREEDY_TOL) -> np.ndarray:
    """Boolean [state, action] mask of actions whose advantage is >= -tol."""
    q = np.asarray(q, dtype=float)
    return q - q.max(axis=1, keepdims=True) >= -tol


def value_iteration_steps(mdp: Mdp) -> Iterator[Tuple[np.ndarray, np.ndarray, float]]:
    """Yield (values, q, residual) for successive Bellman sweeps starting from V = 0.

    ``q`` is built from the previous iterate and ``values`` is its row maximum, so
    every yielded pair satisfies values = max_a q exactly.
    """
    P = mdp.kernel.matrix
    r = mdp.reward.values
    shape = r.shape
    v = np.zeros(mdp.n_states)
    while True:
        q = r + mdp.gamma * (P @ v).reshape(shape)
        v_new = q.max(axis=1)
        residual = float(np.max(np.abs(v_new - v)))
        yield v_new, q, residual
        v = v_new


def solve_mdp(mdp: Mdp, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> Solution:
    """Solve the Bellman optimality equations by plain value iteration.

    Raises:
        ConvergenceError: if the sup-norm residual is still above ``tol`` after ``max_iter`` sweeps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    residual = float("inf")
    for iteration, (v, q, residual) in enumerate(value_iteration_steps(mdp), start=1):
        if residual <= tol:
            break
        if iteration >= max_iter:
            raise ConvergenceError(
                f"value iteration did not converge in {max_iter} iterations (residual {residual:.3e})",
                residual=residual,
                iterations=iteration,
            )
    # lowest index wins ties
    policy = np.argmax(q, axis=1)
    advantage = q - v[:, None]
    logger.debug("value iteration converged: %d iterations, residual %.3e", iteration, residual)
    return Solution(
        v_star=_frozen_array(v),
        q_star=_frozen_array(q),
        policy=_frozen_array(policy, dtype=int),
        advantage=_frozen_array(advantage),
        iterations=iteration,
        residual=residual,
    )


def policy_matrix(mdp: Mdp, policy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Dense closed-loop transition matrix and reward vector of a deterministic policy."""
    policy = np.asarray(policy, dtype=int)
    if policy.shape != (mdp.n_states,):
        raise ValueError(f"policy must have shape ({mdp.n_states},), got {policy.shape}")
    if policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise ValueError("policy contains invalid action indices")
    rows = np.arange(mdp.n_states)
    return mdp.kernel.probs[rows, policy, :], mdp.reward.values[rows, policy]


def evaluate_policy(mdp: Mdp, policy: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """V^pi from the linear fixed point V = r_pi + gamma * P_pi V."""
    P_pi, r_pi = policy_matrix(mdp, policy)
    n = mdp.n_states
    v = np.linalg.solve(np.eye(n) - mdp.gamma * P_pi, r_pi)
    # a few fixed-point sweeps polish the direct solve if it is ill-conditioned
    for _ in range(100):
        v_next = r_pi + mdp.gamma * (P_pi @ v)
        residual = float(np.max(np.abs(v_next - v)))
        v = v_next
        if residual <= tol:
            break
    return v


def expected_next_value(kernel: TransitionKernel, values: np.ndarray, s: int, a: int) -> float:
    """E[values(s_next) | s, a] accumulated in index order."""
    return float(np.dot(kernel.probs[s, a], np.asarray(values, dtype=float)))


def closed_loop_return(mdp: Mdp, policy: np.ndarray, initial_mask: Optional[np.ndarray] = None) -> float:
    """J(pi): mean of V^pi over a uniform initial distribution on ``initial_mask`` states."""
    v = evaluate_policy(mdp, policy)
    if initial_mask is None:
        return float(np.mean(v))
    return float(np.mean(v[np.asarray(initial_mask, dtype=bool)]))


def grid_kernel(
    states: StateGrid,
    means: np.ndarray,
    offsets: np.ndarray,
    pmf: np.ndarray,
    attribution: str = "linear",
) -> TransitionKernel:
    """Place the distribution of ``means[s, a] + w`` on the state grid.

    Args:
        states: Target grid; successors beyond it are clamped to the end nodes.
        means: (states, actions) table of the deterministic part of the successor.
        offsets: Noise nodes w_k.
        pmf: Probabilities of the noise nodes (renormalized here).
        attribution: ``"nearest"`` rounds each successor to the nearest grid point,
            ``"linear"`` splits its mass between the two bracketing grid points so
            that the row mean equals the successor mean inside the domain.
    """
    means = np.asarray(means, dtype=float)
    offsets = np.asarray(offsets, dtype=float).ravel()
    pmf = np.asarray(pmf, dtype=float).ravel()
    if offsets.shape != pmf.shape:
        raise ValueError("offsets and pmf must have the same length")
    if means.ndim != 2:
        raise ValueError("means must be a (states, actions) table")
    n = states.size
    n_rows = means.shape[0] * means.shape[1]

    x = np.clip(means[:, :, None] + offsets[None, None, :], states.lo, states.hi)
    u = (x - states.lo) / states.spacing
    rows = np.broadcast_to(np.arange(n_rows).reshape(means.shape + (1,)), x.shape).ravel()
    weights = np.broadcast_to(pmf / pmf.sum(), x.shape).ravel()
    flat = np.zeros((n_rows, n))

    if attribution not in ("nearest", "linear"):
        raise ValueError(f"unknown attribution '{attribution}'")
    if n == 1:
        flat[:, 0] = 1.0
    elif attribution == "nearest":
        idx = np.clip(np.floor(u + 0.5).astype(int), 0, n - 1).ravel()
        np.add.at(flat, (rows, idx), weights)
    elif attribution == "linear":
        lower = np.clip(np.floor(u).astype(int), 0, n - 2)
        frac = np.clip(u - lower, 0.0, 1.0)
        # snap round-off so on-grid successors keep a single support node
        frac = np.where(frac < 1e-9, 0.0, np.where(frac > 1.0 - 1e-9, 1.0, frac)).ravel()
        lower = lower.ravel()
        np.add.at(flat, (rows, lower), weights * (1.0 - frac))
        np.add.at(flat, (rows, lower + 1), weights * frac)

    flat /= flat.sum(axis=1, keepdims=True)
    return TransitionKernel(flat.reshape(means.shape + (n,)))
