import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mveq import InsufficientPaths
from mveq.objective import evaluate_objective

rng = np.random.default_rng(3)


def test_unconditional_moments():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    est = evaluate_objective("mean-variance", x, gamma=2.0)
    assert est.value == pytest.approx(np.var(x, ddof=1) - 2.0 * 2.5)
    assert est.per_path is None and est.se > 0


def test_hedging_uses_claim_minus_wealth():
    x = rng.standard_normal(1000)
    xi = x + 0.5
    est = evaluate_objective("hedging", x, claim=xi, gamma=9.0)
    assert est.value == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        evaluate_objective("hedging", x)


def test_conditional_variance_recovered():
    w = rng.standard_normal(50000)
    x = 2.0 * w + np.sqrt(1.0 + w * w) * rng.standard_normal(w.size)
    est = evaluate_objective("mean-variance", x, gamma=0.0, conditioning=w)
    err = est.per_path - (1.0 + w * w)
    central = np.abs(w) < 2
    assert np.sqrt(np.mean(err[central] ** 2)) < 0.1
    assert est.per_path_se.shape == w.shape and np.all(est.per_path_se > 0)


@given(shift=st.floats(-100, 100), gamma=st.floats(0, 5))
@settings(max_examples=30, deadline=None)
def test_shift_moves_only_the_mean_term(shift, gamma):
    x = np.random.default_rng(0).standard_normal(500)
    a = evaluate_objective("mean-variance", x, gamma=gamma)
    b = evaluate_objective("mean-variance", x + shift, gamma=gamma)
    assert b.value == pytest.approx(a.value - gamma * shift, rel=1e-9, abs=1e-9)


def test_precision_and_sample_size():
    with pytest.raises(InsufficientPaths):
        evaluate_objective("mean-variance", rng.standard_normal(10), precision=1e-6)
    with pytest.raises(InsufficientPaths):
        evaluate_objective("mean-variance", np.ones(1))
    with pytest.raises(ValueError):
        evaluate_objective("other", np.ones(3))
