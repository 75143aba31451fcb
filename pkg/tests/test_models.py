"""
Tests for predictive models, dataset fits and induced MDPs
"""
import numpy as np
import pytest

from logic.errors import MissingPairsError, UndefinedModelError
from logic.mdp_core import ActionGrid, Mdp, RewardTable, StateGrid, TransitionKernel, solve_mdp
from logic.models import (
    DeterministicModel,
    StochasticModel,
    TransitionDataset,
    fill_undefined,
    fit_expected_value,
    fit_mle,
    induced_mdp,
    model_kernel,
    sample_transitions,
)
from logic.scenarios import battery_case1, random_mdp


def test_partial_model_reports_undefined_pairs():
    states = StateGrid.uniform(0.0, 1.0, 3)
    model = DeterministicModel(np.full((3, 2), 0.5), np.array([[1, 1], [1, 0], [1, 1]], dtype=bool), states)
    assert not model.is_complete
    assert model.undefined_pairs() == [(1, 1)]
    assert np.isnan(model.f[1, 1])


def test_predictions_must_stay_on_grid():
    states = StateGrid.uniform(0.0, 1.0, 3)
    with pytest.raises(ValueError):
        DeterministicModel(np.full((3, 1), 1.5), np.ones((3, 1), dtype=bool), states)
    clamped = DeterministicModel.from_map(np.full((3, 1), 1.5), states)
    assert clamped.f.max() == pytest.approx(1.0)


def test_induced_mdp_of_partial_model_fails():
    mdp = random_mdp(4, 4, 2)
    defined = np.ones((4, 2), dtype=bool)
    defined[2, 0] = False
    model = DeterministicModel(np.zeros((4, 2)), defined, mdp.states)
    with pytest.raises(UndefinedModelError) as info:
        induced_mdp(model, mdp.reward, mdp.gamma, mdp.states, mdp.actions)
    assert info.value.pairs == [(2, 0)]


def test_fill_undefined_uses_fallback():
    states = StateGrid.uniform(0.0, 1.0, 3)
    defined = np.array([[True], [False], [True]])
    partial = DeterministicModel(np.array([[0.0], [0.0], [1.0]]), defined, states)
    fallback = DeterministicModel.from_map(np.full((3, 1), 0.5), states)
    complete = fill_undefined(partial, fallback)
    assert complete.is_complete
    np.testing.assert_allclose(complete.f[:, 0], [0.0, 0.5, 1.0])


def test_sampling_is_reproducible():
    mdp = random_mdp(8, 5, 3)
    a = sample_transitions(mdp, 20, seed=42)
    b = sample_transitions(mdp, 20, seed=42)
    c = sample_transitions(mdp, 20, seed=43)
    np.testing.assert_array_equal(a.snext_idx, b.snext_idx)
    assert not np.array_equal(a.snext_idx, c.snext_idx)
    assert len(a) == 5 * 3 * 20
    assert a.pair_counts().min() == 20


def test_dirac_rows_are_reproduced_exactly():
    """A deterministic MDP sampled at any size fits back to itself"""
    states = StateGrid.uniform(0.0, 3.0, 4)
    succ = np.array([[1, 2], [2, 3], [3, 0], [0, 1]])
    probs = np.zeros((4, 2, 4))
    np.put_along_axis(probs, succ[:, :, None], 1.0, axis=2)
    mdp = Mdp(states, ActionGrid([0.0, 1.0]), TransitionKernel(probs), RewardTable(np.zeros((4, 2))), 0.9)
    data = sample_transitions(mdp, 3, seed=1)
    mean = fit_expected_value(data)
    stochastic, mode = fit_mle(data)
    np.testing.assert_allclose(mean.f, states.points[succ])
    np.testing.assert_allclose(mode.f, states.points[succ])
    np.testing.assert_allclose(stochastic.kernel.probs, probs)


def unit_interval_copy(mdp):
    """The same kernel with states relabelled onto [0, 1]"""
    return Mdp(StateGrid.uniform(0.0, 1.0, mdp.n_states), mdp.actions, mdp.kernel, mdp.reward, mdp.gamma)


def test_sample_mean_approaches_kernel_mean():
    mdp = unit_interval_copy(random_mdp(13, 6, 2))
    exact = fit_expected_value(mdp)
    sampled = fit_expected_value(sample_transitions(mdp, 100_000, seed=5))
    # successors lie in [0, 1], so the standard error is below 0.0016
    np.testing.assert_allclose(sampled.f, exact.f, atol=0.01)


def test_sample_frequencies_within_binomial_bands():
    mdp = battery_case1(21, 5, 5).mdp
    draws = 10_000
    counts = sample_transitions(mdp, draws, seed=11).transition_counts()
    p = mdp.kernel.probs
    sd = np.sqrt(draws * p * (1.0 - p))
    # cells where the normal approximation of the binomial holds
    cells = sd >= 3.0
    assert cells.sum() > 100
    outside = np.abs(counts - draws * p) > 3.0 * sd
    assert outside[cells].mean() <= 0.02
    assert np.all(np.abs(counts - draws * p)[cells] <= 5.0 * sd[cells])
    assert np.all(counts[p == 0.0] == 0)


def test_dataset_fit_error_halves_when_data_quadruples():
    mdp = battery_case1(21, 5, 5).mdp
    exact = fit_expected_value(mdp).f

    def rms_error(per_pair):
        fitted = fit_expected_value(sample_transitions(mdp, per_pair, seed=per_pair)).f
        return float(np.sqrt(np.mean((fitted - exact) ** 2)))

    ratio = rms_error(1600) / rms_error(400)
    # 0.5 expected, checked within a factor of three
    assert 0.5 / 3.0 <= ratio <= 0.5 * 3.0


def test_bimodal_row_mode_and_mean_differ():
    states = StateGrid.uniform(0.0, 1.0, 6)
    probs = np.zeros((6, 1, 6))
    probs[:, 0, 1] = 0.6
    probs[:, 0, 4] = 0.4
    mdp = Mdp(states, ActionGrid([0.0]), TransitionKernel(probs), RewardTable(np.zeros((6, 1))), 0.9)
    _, mode = fit_mle(mdp)
    mean = fit_expected_value(mdp)
    np.testing.assert_allclose(mode.f, 0.2)
    np.testing.assert_allclose(mean.f, 0.44)


def test_mode_within_one_cell_of_mean_on_symmetric_rows():
    bundle = battery_case1(41, 5, 5)
    region = bundle.region
    _, mode = fit_mle(bundle.mdp)
    mean = fit_expected_value(bundle.mdp)
    # region rows are never clamped, so their successor law is symmetric about s + a
    np.testing.assert_allclose(mean.f[region], bundle.nominal_model.f[region], atol=1e-12)
    gap = np.abs(mode.f - mean.f)[region]
    assert gap.max() <= bundle.mdp.states.spacing + 1e-12


def test_missing_pairs_are_reported():
    states = StateGrid.uniform(0.0, 1.0, 2)
    data = TransitionDataset([0, 0], [0, 1], [1, 0], states, n_actions=2)
    with pytest.raises(MissingPairsError) as info:
        fit_expected_value(data)
    assert info.value.pairs == [(1, 0), (1, 1)]
    with pytest.raises(MissingPairsError):
        fit_mle(data)


def test_dataset_rejects_bad_indices():
    states = StateGrid.uniform(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        TransitionDataset([0], [0], [2], states, n_actions=1)
    with pytest.raises(ValueError):
        TransitionDataset([0, 1], [0], [0], states, n_actions=1)
    with pytest.raises(ValueError):
        TransitionDataset([], [], [], states, n_actions=1)


def test_mode_ties_go_to_lower_state():
    states = StateGrid.uniform(0.0, 1.0, 2)
    data = TransitionDataset([0, 0, 1], [0, 0, 0], [0, 1, 1], states, n_actions=1)
    _, mode = fit_mle(data)
    assert mode.f[0, 0] == pytest.approx(0.0)
    assert mode.f[1, 0] == pytest.approx(1.0)


def test_stochastic_model_of_true_kernel_reproduces_solution():
    mdp = random_mdp(17, 7, 3)
    model_mdp = induced_mdp(StochasticModel(mdp.kernel), mdp.reward, mdp.gamma, mdp.states, mdp.actions)
    np.testing.assert_array_equal(solve_mdp(model_mdp).v_star, solve_mdp(mdp).v_star)


def test_linear_attribution_of_deterministic_model():
    states = StateGrid.uniform(0.0, 1.0, 5)
    model = DeterministicModel.from_map(np.full((5, 1), 0.3), states)
    linear = model_kernel(model, states, "linear")
    nearest = model_kernel(model, states, "nearest")
    np.testing.assert_allclose(linear.probs[0, 0, 1:3], [0.8, 0.2])
    assert nearest.support(0, 0).tolist() == [1]
