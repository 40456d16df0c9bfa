import warnings

import numpy as np
import pytest

from ubsde.condexp import (Projector, RegressionBasis, fit_conditional_expectation,
                           reconstruction_error, represent_martingale)
from ubsde.errors import ConfigurationError, DegradedBasisWarning, InvalidValueError

from conftest import make_bundle, rms


def test_basis_feature_counts():
    assert RegressionBasis("brownian", 2).feature_count(1) == 3
    assert RegressionBasis("brownian", 2).feature_count(2) == 6
    assert RegressionBasis("state", 2).feature_count(1, state_dim=1) == 6
    with pytest.raises(ConfigurationError):
        RegressionBasis("spline", 2)
    with pytest.raises(ConfigurationError):
        RegressionBasis("brownian", -1)


def test_constant_target_exact(desk_bundle):
    e = fit_conditional_expectation(np.full(desk_bundle.M, 3.0), 20, RegressionBasis(), desk_bundle, 0)
    assert np.abs(e.fitted - 3.0).max() <= 1e-12


def test_martingale_coefficient(desk_bundle):
    b = desk_bundle
    e = fit_conditional_expectation(b.brownian[:, -1, 0], 25, RegressionBasis("brownian", 1), b, 2)
    assert e.coefficients[1] == pytest.approx(1.0, abs=0.05)


def test_quadratic_conditional_mean(desk_bundle):
    b = desk_bundle
    e = fit_conditional_expectation(b.brownian[:, -1, 0] ** 2, 25, RegressionBasis("brownian", 2), b, 0)
    assert e.coefficients[0] == pytest.approx(0.5, abs=0.05)
    assert e.coefficients[2] == pytest.approx(1.0, abs=0.05)


def test_node_zero_is_degenerate(desk_bundle):
    e = fit_conditional_expectation(desk_bundle.brownian[:, -1, 0], 0, RegressionBasis(), desk_bundle, 0)
    assert e.degenerate and not e.ridge
    assert abs(e.fitted[0] - desk_bundle.brownian[:, -1, 0].mean()) < 1e-12


def test_too_few_paths():
    b = make_bundle(N=5, M=20, L=3)
    with pytest.raises(ConfigurationError) as exc:
        fit_conditional_expectation(np.zeros(20), 2, RegressionBasis(), b, 0)
    assert "ensemble.paths" in exc.value.fields


def test_rank_deficient_state_basis_warns(small_bundle):
    b = small_bundle
    state = 2.0 * b.brownian[:, 10, :] + 1.0  # collinear with B
    with pytest.warns(DegradedBasisWarning):
        e = fit_conditional_expectation(b.brownian[:, -1, 0], 10, RegressionBasis("state", 1), b, 0,
                                        state=state)
    assert e.ridge
    assert rms(e.fitted - b.brownian[:, 10, 0]) < 0.1


def test_nonfinite_target(small_bundle):
    t = np.zeros(small_bundle.M)
    t[3] = np.nan
    with pytest.raises(InvalidValueError):
        fit_conditional_expectation(t, 3, RegressionBasis(), small_bundle, 0)


def test_alpha_levels_not_mixed(small_bundle):
    b = small_bundle
    rng = np.random.default_rng(0)
    target = rng.normal(size=(b.L, b.M))
    full = Projector(b).project(7, target)
    target2 = target.copy()
    target2[3] += 100.0 * b.brownian[:, 7, 0]
    full2 = Projector(b).project(7, target2)
    np.testing.assert_array_equal(np.delete(full, 3, axis=0), np.delete(full2, 3, axis=0))
    for j in range(b.L):
        np.testing.assert_allclose(full[j], fit_conditional_expectation(target[j], 7, RegressionBasis(),
                                                                        b, j).fitted, atol=1e-12)


def test_tower_property(desk_bundle):
    b = desk_bundle
    target = np.sin(b.brownian[:, -1, 0]) + b.brownian[:, -1, 0] ** 2
    e = fit_conditional_expectation(target, 30, RegressionBasis(), b, 0)
    assert abs(e.fitted.mean() - target.mean()) <= 1e-10


def test_represent_brownian(desk_bundle):
    b = desk_bundle
    Mt = np.broadcast_to(b.brownian[None, :, :, 0], (b.L, b.M, b.N + 1))
    rep = represent_martingale(Mt, b)
    assert rep.Y.shape == (b.L, b.M, b.N + 1, 1, 1)
    assert rms(rep.Y[:, :, :-1] - 1.0) <= 0.05


def test_represent_constant(desk_bundle):
    b = desk_bundle
    rep = represent_martingale(np.full((b.L, b.M, b.N + 1), 2.0), b)
    assert np.abs(rep.Y).max() <= 1e-10


def test_represent_compensated_square(desk_bundle):
    b = desk_bundle
    t = b.grid.nodes
    Mt = np.broadcast_to((b.brownian[:, :, 0] ** 2 - t)[None], (b.L, b.M, b.N + 1))
    rep = represent_martingale(Mt, b)
    want = 2 * b.brownian[None, :, 1:-1, 0]
    assert rms(rep.Y[:, :, 1:-1, 0, 0] - want) / rms(want) <= 0.10


def test_reconstruction_within_budget():
    budgets = {}
    for N, M in ((25, 2000), (50, 2000), (50, 8000), (100, 8000)):
        b = make_bundle(N=N, M=M, L=3, seed=4)
        t = b.grid.nodes
        Mt = np.broadcast_to((b.brownian[:, :, 0] ** 2 - t)[None], (b.L, b.M, b.N + 1))
        rep = represent_martingale(Mt, b)
        assert np.all(reconstruction_error(Mt, rep.Y, b) <= rep.budget)
        budgets[N, M] = rep.budget[0]
    assert budgets[50, 2000] < budgets[25, 2000]
    assert budgets[50, 8000] < budgets[50, 2000]
    assert budgets[100, 8000] < budgets[50, 8000]
