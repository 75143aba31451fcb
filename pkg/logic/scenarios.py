"""
Example decision problems
Battery storage cases, a scalar LQR reference system with its Riccati solution and
seeded random MDPs, plus the name lookup used by the command line.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.stats import norm

from logic.errors import ConvergenceError, ScenarioError
from logic.mdp_core import (
    ActionGrid,
    Mdp,
    RewardTable,
    StateGrid,
    TransitionKernel,
    grid_kernel,
)
from logic.models import DeterministicModel, fit_expected_value


logger = logging.getLogger(__name__)

GAMMA = 0.99
RANDOM_GAMMA = 0.9
BOUNDARY_PENALTY = 100.0
FEASIBILITY_TOL = 1e-9
RICCATI_TOL = 1e-14
RICCATI_MAX_ITER = 100_000

SCENARIO_NAMES = ("battery1", "battery2", "lqr", "random:<seed>")

# Grid defaults per scenario: (states, actions, noise nodes)
DEFAULT_GRIDS = {
    "battery1": (201, 51, 33),
    "battery2": (201, 51, 33),
    "lqr": (401, 21, 33),
    "random": (6, 3, 1),
}

DEFAULT_LQR = {
    "a_coef": 1.0,
    "b_coef": 1.0,
    "q": 1.0,
    "r_cost": 1.0,
    "sigma": 0.1,
    "gamma": GAMMA,
    "state_range": (-2.0, 2.0),
    "action_range": (-2.0, 2.0),
    "noise_width": 3.0,  # in standard deviations
    "inner_fraction": 0.6,
}


@dataclass(frozen=True, eq=False)
class LqrClosedForm:
    """Discounted scalar Riccati solution: V*(s) = -p s^2 - const, u*(s) = -k s."""
    p: float
    k: float
    residual: float
    iterations: int

    def control(self, s) -> np.ndarray:
        return -self.k * np.asarray(s, dtype=float)


@dataclass(frozen=True, eq=False)
class ScenarioBundle:
    """A named MDP with its expected-value model and decision region."""
    mdp: Mdp
    nominal_model: DeterministicModel
    name: str
    closed_form: Optional[LqrClosedForm] = None
    region_bounds: Optional[Tuple[float, float]] = None
    noise: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if not self.nominal_model.is_complete:
            raise ValueError("nominal model must be defined everywhere")

    @property
    def region(self) -> np.ndarray:
        """Boolean mask of the states decisions are judged on."""
        if self.region_bounds is None:
            return np.ones(self.mdp.n_states, dtype=bool)
        return self.mdp.states.mask_between(*self.region_bounds)


@lru_cache(maxsize=None)
def truncated_gaussian_pmf(sigma: float, width: float, n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian density sampled at ``n_nodes`` equispaced points on [-width, width], renormalized."""
    if sigma <= 0 or width <= 0:
        raise ValueError("sigma and width must be positive")
    if n_nodes < 1 or n_nodes % 2 == 0:
        raise ValueError("noise_nodes must be odd")
    nodes = np.linspace(-width, width, n_nodes) if n_nodes > 1 else np.zeros(1)
    pmf = norm.pdf(nodes, scale=sigma)
    pmf = pmf / pmf.sum()
    nodes.setflags(write=False)
    pmf.setflags(write=False)
    return nodes, pmf


def _check_counts(states: int, actions: int, noise_nodes: int):
    if states < 3 or actions < 3 or noise_nodes < 3:
        raise ValueError("states, actions and noise_nodes must all be >= 3")
    if noise_nodes % 2 == 0:
        raise ValueError("noise_nodes must be odd")


def boundary_distance(s: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return np.maximum(lo - s, 0.0) + np.maximum(s - hi, 0.0)


def _battery(
    name: str,
    domain: Tuple[float, float],
    sigma: float,
    width: float,
    reward_fn,
    states: int,
    actions: int,
    noise_nodes: int,
) -> ScenarioBundle:
    _check_counts(states, actions, noise_nodes)
    state_grid = StateGrid.uniform(domain[0], domain[1], states)
    action_grid = ActionGrid.uniform(-0.25, 0.25, actions)
    S, A = np.meshgrid(state_grid.points, action_grid.points, indexing="ij")

    reward = reward_fn(S, A) - BOUNDARY_PENALTY * boundary_distance(S)
    offsets, pmf = truncated_gaussian_pmf(sigma, width, noise_nodes)
    kernel = grid_kernel(state_grid, S + A, offsets, pmf, attribution="linear")
    mdp = Mdp(state_grid, action_grid, kernel, RewardTable(reward, BOUNDARY_PENALTY), GAMMA)
    nominal = DeterministicModel.from_map(S + A, state_grid)
    logger.info("built %s: %d states, %d actions, %d noise nodes", name, states, actions, noise_nodes)
    return ScenarioBundle(mdp, nominal, name, region_bounds=(0.0, 1.0), noise=(offsets, pmf))


def battery_reward_case1(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Selling earns -a, buying costs twice the quantity."""
    a = np.asarray(a, dtype=float)
    return np.where(a <= 0.0, -a, -2.0 * a)


def battery_reward_case2(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return -np.abs(np.asarray(s, dtype=float) - 0.5) - np.abs(np.asarray(a, dtype=float))


def battery_case1(states: int = 201, actions: int = 51, noise_nodes: int = 33) -> ScenarioBundle:
    """Storage with asymmetric buy/sell prices and small noise (sigma 0.05, width 0.05)."""
    return _battery(
        "battery1", (-0.35, 1.35), 0.05, 0.05, battery_reward_case1, states, actions, noise_nodes
    )


def battery_case2(states: int = 201, actions: int = 51, noise_nodes: int = 33) -> ScenarioBundle:
    """Storage kept near half charge under larger noise (sigma 0.1, width 0.25)."""
    return _battery(
        "battery2", (-0.55, 1.55), 0.1, 0.25, battery_reward_case2, states, actions, noise_nodes
    )


def feasible_actions(bundle: ScenarioBundle) -> np.ndarray:
    """Per region state: some action keeps s + a + w in the region for every noise node."""
    if bundle.noise is None or bundle.region_bounds is None:
        raise ValueError(f"scenario '{bundle.name}' has no noise or region description")
    lo, hi = bundle.region_bounds
    offsets, _ = bundle.noise
    s = bundle.mdp.states.points[bundle.region]
    a = bundle.mdp.actions.points
    nxt = s[:, None, None] + a[None, :, None] + offsets[None, None, :]
    safe = np.all((nxt >= lo - FEASIBILITY_TOL) & (nxt <= hi + FEASIBILITY_TOL), axis=2)
    return safe.any(axis=1)


def riccati(
    a_coef: float, b_coef: float, q: float, r_cost: float, gamma: float = GAMMA
) -> LqrClosedForm:
    """Fixed point of p = q + g a^2 p - (g a b p)^2 / (r + g b^2 p) by iteration from p = 0.

    Raises:
        ConvergenceError: if the iteration diverges or stalls.
    """
    if q < 0 or r_cost <= 0:
        raise ValueError("q must be >= 0 and r_cost > 0")

    def update(p: float) -> float:
        cross = gamma * a_coef * b_coef * p
        return q + gamma * a_coef * a_coef * p - cross * cross / (r_cost + gamma * b_coef * b_coef * p)

    p = 0.0
    for iteration in range(1, RICCATI_MAX_ITER + 1):
        p_next = update(p)
        if not np.isfinite(p_next):
            raise ConvergenceError("Riccati iteration diverged", residual=float("inf"), iterations=iteration)
        step = abs(p_next - p)
        p = p_next
        if step <= RICCATI_TOL * max(1.0, abs(p)):
            break
    else:
        raise ConvergenceError(
            f"Riccati iteration did not converge in {RICCATI_MAX_ITER} iterations",
            residual=step,
            iterations=RICCATI_MAX_ITER,
        )
    k = gamma * a_coef * b_coef * p / (r_cost + gamma * b_coef ** 2 * p)
    return LqrClosedForm(p=float(p), k=float(k), residual=float(abs(update(p) - p)), iterations=iteration)


def lqr_scenario(
    a_coef: float = 1.0,
    b_coef: float = 1.0,
    q: float = 1.0,
    r_cost: float = 1.0,
    sigma: float = 0.1,
    states: int = 401,
    actions: int = 21,
    noise_nodes: int = 33,
) -> ScenarioBundle:
    """Scalar s_next = a s + b u + w with reward -q s^2 - r u^2 on a bounded grid."""
    _check_counts(states, actions, noise_nodes)
    options = DEFAULT_LQR.copy()
    closed_form = riccati(a_coef, b_coef, q, r_cost, options["gamma"])

    state_grid = StateGrid.uniform(*options["state_range"], states)
    action_grid = ActionGrid.uniform(*options["action_range"], actions)
    S, U = np.meshgrid(state_grid.points, action_grid.points, indexing="ij")
    drift = a_coef * S + b_coef * U
    reward = -q * S ** 2 - r_cost * U ** 2
    offsets, pmf = truncated_gaussian_pmf(sigma, options["noise_width"] * sigma, noise_nodes)
    kernel = grid_kernel(state_grid, drift, offsets, pmf, attribution="linear")
    mdp = Mdp(state_grid, action_grid, kernel, RewardTable(reward), options["gamma"])

    half = 0.5 * options["inner_fraction"] * (state_grid.hi - state_grid.lo)
    center = 0.5 * (state_grid.hi + state_grid.lo)
    logger.info("built lqr: p %.10g, k %.10g", closed_form.p, closed_form.k)
    return ScenarioBundle(
        mdp,
        DeterministicModel.from_map(drift, state_grid),
        "lqr",
        closed_form=closed_form,
        region_bounds=(center - half, center + half),
        noise=(offsets, pmf),
    )


def random_mdp(seed: int, n_states: int = 6, n_actions: int = 3) -> Mdp:
    """Dirichlet(1) kernel rows, rewards uniform in [-1, 0], gamma 0.9; integer state labels."""
    if not 1 <= n_states <= 12 or not 1 <= n_actions <= 5:
        raise ValueError("random MDPs need 1..12 states and 1..5 actions")
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    probs /= probs.sum(axis=2, keepdims=True)
    rewards = rng.uniform(-1.0, 0.0, size=(n_states, n_actions))
    return Mdp(
        StateGrid(np.arange(n_states, dtype=float)),
        ActionGrid(np.arange(n_actions, dtype=float)),
        TransitionKernel(probs),
        RewardTable(rewards),
        RANDOM_GAMMA,
    )


def build_scenario(
    name: str,
    states: Optional[int] = None,
    actions: Optional[int] = None,
    noise_nodes: Optional[int] = None,
) -> ScenarioBundle:
    """Scenario by CLI name: ``battery1``, ``battery2``, ``lqr`` or ``random:<seed>``.

    Raises:
        ScenarioError: for an unknown name or a malformed seed.
    """
    key = name.split(":", 1)[0]
    if key not in DEFAULT_GRIDS or (key == "random") != (":" in name):
        raise ScenarioError(f"unknown scenario '{name}' (expected one of {', '.join(SCENARIO_NAMES)})")
    n, m, k = DEFAULT_GRIDS[key]
    n = n if states is None else states
    m = m if actions is None else actions
    k = k if noise_nodes is None else noise_nodes

    if key == "battery1":
        return battery_case1(n, m, k)
    if key == "battery2":
        return battery_case2(n, m, k)
    if key == "lqr":
        return lqr_scenario(states=n, actions=m, noise_nodes=k)
    try:
        seed = int(name.split(":", 1)[1])
    except ValueError:
        raise ScenarioError(f"invalid seed in scenario '{name}'")
    mdp = random_mdp(seed, n, m)
    return ScenarioBundle(mdp, fit_expected_value(mdp), name)
