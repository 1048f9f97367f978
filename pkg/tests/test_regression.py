import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from mveq.errors import SingularRegression
from mveq.regression import (
    ConditionalExpectation,
    Projector,
    conditional_expectation,
    polynomial_basis,
)

rng = np.random.default_rng(0)
W = rng.standard_normal(5000)
X = rng.standard_normal(5000)


def test_cubic_targets_are_reproduced():
    y = 1.0 - 2.0 * W + 0.5 * W ** 3
    np.testing.assert_allclose(conditional_expectation(y, W), y, atol=1e-6)


def test_constant_feature_is_dropped():
    basis, _ = polynomial_basis(np.zeros(10))
    assert basis.shape == (1, 10)
    y = np.arange(10.0)
    np.testing.assert_allclose(conditional_expectation(y, np.zeros(10)), y.mean())


def test_two_features_include_interactions():
    basis, _ = polynomial_basis([W, X], 3)
    assert basis.shape[0] == 8
    y = W * X + X
    np.testing.assert_allclose(conditional_expectation(y, [W, X]), y, atol=1e-6)


def test_noise_is_averaged_out():
    y = W ** 2 + rng.standard_normal(W.size)
    fit = conditional_expectation(y, W)
    assert np.sqrt(np.mean((fit - W ** 2) ** 2)) < 0.1


@given(seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_projection_is_idempotent_and_self_adjoint(seed):
    r = np.random.default_rng(seed)
    w = r.standard_normal(300)
    a, b = r.standard_normal(300), r.standard_normal(300)
    proj = Projector(polynomial_basis(w)[0], ridge=0.0)
    pa = proj.project(a)
    np.testing.assert_allclose(proj.project(pa), pa, atol=1e-9)
    assert np.mean(pa * b) == pytest.approx(np.mean(a * proj.project(b)), abs=1e-9)


def test_leverage_sums_to_basis_size():
    proj = Projector(polynomial_basis(W)[0], ridge=0.0)
    # trace of the hat matrix
    assert proj.leverage().sum() == pytest.approx(4.0, rel=1e-8)


def test_singular_basis():
    with pytest.raises(SingularRegression):
        Projector(np.vstack([np.ones(5), np.ones(5)]), ridge=0.0)


def test_estimator_api():
    est = ConditionalExpectation(degree=2)
    assert est.get_params() == {"degree": 2, "ridge": 1e-8}
    c = clone(est).set_params(degree=3)
    c.fit(W[:, None], W ** 3)
    np.testing.assert_allclose(c.predict([[1.0], [2.0]]), [1.0, 8.0], atol=1e-6)
    assert c.score(W[:, None], W ** 3) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        est.fit(W[:, None], W[:10])
    with pytest.raises(ValueError):
        est.fit(np.full((3, 1), np.nan), np.zeros(3))
