"""
Tests for the example problems
"""
import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from logic.errors import ConvergenceError, ScenarioError
from logic.mdp_core import solve_mdp
from logic.scenarios import (
    battery_case1,
    battery_case2,
    battery_reward_case1,
    battery_reward_case2,
    build_scenario,
    feasible_actions,
    lqr_scenario,
    random_mdp,
    riccati,
    truncated_gaussian_pmf,
)


@pytest.fixture(scope="module")
def case1():
    return battery_case1()


@pytest.fixture(scope="module")
def case2():
    return battery_case2()


def index_of(grid_points, x):
    i = int(np.argmin(np.abs(grid_points - x)))
    assert grid_points[i] == pytest.approx(x, abs=1e-9)
    return i


def test_case1_reward_branches(case1):
    assert battery_reward_case1(0.5, 0.1) == pytest.approx(-0.2)
    assert battery_reward_case1(0.5, -0.1) == pytest.approx(0.1)
    mdp = case1.mdp
    s, a = index_of(mdp.states.points, 0.5), index_of(mdp.actions.points, 0.1)
    assert mdp.reward.values[s, a] == pytest.approx(-0.2)


def test_case2_reward_examples():
    assert battery_reward_case2(0.5, 0.0) == pytest.approx(0.0)
    assert battery_reward_case2(0.25, -0.1) == pytest.approx(-0.35)


def test_boundary_penalty_outside_unit_interval(case1):
    mdp = case1.mdp
    s, a = index_of(mdp.states.points, -0.35), index_of(mdp.actions.points, 0.0)
    assert mdp.reward.values[s, a] == pytest.approx(-35.0)


@pytest.mark.parametrize("name", ["case1", "case2"])
def test_kernel_mean_is_drift(name, request):
    bundle = request.getfixturevalue(name)
    mdp = bundle.mdp
    region = bundle.region
    drift = mdp.states.points[:, None] + mdp.actions.points[None, :]
    mean = mdp.kernel.expected(mdp.states.points)
    assert np.max(np.abs(mean[region] - drift[region])) <= 1e-3


def test_grids_and_region(case1, case2):
    assert case1.mdp.states.lo == pytest.approx(-0.35)
    assert case1.mdp.states.hi == pytest.approx(1.35)
    assert case2.mdp.states.lo == pytest.approx(-0.55)
    assert case2.mdp.states.hi == pytest.approx(1.55)
    assert case1.mdp.n_states == 201 and case1.mdp.n_actions == 51
    assert case1.mdp.gamma == 0.99
    points = case1.mdp.states.points[case1.region]
    assert points.min() >= 0.0 - 1e-9 and points.max() <= 1.0 + 1e-9
    assert case1.nominal_model.is_complete


def test_feasible_action_everywhere(case1, case2):
    assert feasible_actions(case1).all()
    assert feasible_actions(case2).all()


def test_grid_count_preconditions():
    with pytest.raises(ValueError):
        battery_case1(states=2)
    with pytest.raises(ValueError):
        battery_case2(noise_nodes=4)
    with pytest.raises(ValueError):
        lqr_scenario(actions=1)


def test_truncated_gaussian_pmf():
    nodes, pmf = truncated_gaussian_pmf(0.1, 0.25, 33)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(pmf, pmf[::-1], atol=1e-15)
    assert nodes[0] == pytest.approx(-0.25) and nodes[-1] == pytest.approx(0.25)
    assert np.argmax(pmf) == 16
    with pytest.raises(ValueError):
        truncated_gaussian_pmf(0.1, 0.25, 32)


# ============================================================================
# LQR
# ============================================================================

def test_riccati_matches_fixed_point_oracle():
    gamma = 0.99
    p = 0.0
    for _ in range(10_000):
        p = 1.0 + gamma * p - (gamma * p) ** 2 / (1.0 + gamma * p)
    closed = riccati(1.0, 1.0, 1.0, 1.0, gamma)
    assert closed.p == pytest.approx(p, rel=1e-12)
    assert closed.residual <= 1e-12
    assert closed.k == pytest.approx(gamma * p / (1.0 + gamma * p), rel=1e-12)
    # undiscounted limit is the golden ratio
    assert abs(closed.p - (1 + np.sqrt(5)) / 2) < 0.05


def test_riccati_agrees_with_discrete_are():
    gamma, a, b, q, r = 0.95, 1.1, 0.7, 2.0, 0.5
    closed = riccati(a, b, q, r, gamma)
    reference = solve_discrete_are(np.array([[np.sqrt(gamma) * a]]), np.array([[b]]), np.array([[q]]),
                                   np.array([[r / gamma]]))
    assert closed.p == pytest.approx(float(reference[0, 0]), rel=1e-9)


def test_riccati_degenerate_cases():
    zero = riccati(1.0, 1.0, 0.0, 1.0)
    assert zero.p == 0.0 and zero.k == 0.0
    uncontrolled = riccati(0.5, 0.0, 1.0, 1.0, 0.99)
    assert uncontrolled.k == 0.0
    assert uncontrolled.p == pytest.approx(1.0 / (1.0 - 0.99 * 0.25), rel=1e-12)
    with pytest.raises(ConvergenceError):
        riccati(2.0, 0.0, 1.0, 1.0, 0.99)


def test_lqr_bundle_shape():
    bundle = lqr_scenario(states=41, actions=5, noise_nodes=5)
    assert bundle.closed_form is not None
    points = bundle.mdp.states.points[bundle.region]
    assert points.min() == pytest.approx(-1.2) and points.max() == pytest.approx(1.2)
    assert bundle.closed_form.control(1.0) == pytest.approx(-bundle.closed_form.k)


# ============================================================================
# RANDOM MDPS AND LOOKUP
# ============================================================================

def test_random_mdp_reproducible():
    a, b = random_mdp(42, 8, 4), random_mdp(42, 8, 4)
    np.testing.assert_array_equal(a.kernel.probs, b.kernel.probs)
    np.testing.assert_array_equal(a.reward.values, b.reward.values)
    assert np.max(np.abs(a.kernel.probs.sum(axis=2) - 1.0)) <= 1e-12
    assert a.reward.values.min() >= -1.0 and a.reward.values.max() <= 0.0
    assert a.gamma == 0.9


def test_random_mdp_limits():
    with pytest.raises(ValueError):
        random_mdp(0, 13, 2)
    with pytest.raises(ValueError):
        random_mdp(0, 4, 6)
    with pytest.raises(ValueError):
        random_mdp(0, 0, 1)
    assert random_mdp(0, 1, 1).n_states == 1


def test_random_mdps_converge_quickly():
    for seed in range(100):
        assert solve_mdp(random_mdp(seed, 12, 5), max_iter=10_000).residual <= 1e-10


def test_build_scenario_names():
    bundle = build_scenario("random:7")
    assert bundle.region.all()
    assert bundle.name == "random:7"
    for bad in ("battery3", "random", "random:x", "battery1:2"):
        with pytest.raises(ScenarioError):
            build_scenario(bad)
    small = build_scenario("battery2", states=21, actions=5, noise_nodes=5)
    assert small.mdp.n_states == 21
