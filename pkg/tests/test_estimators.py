import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mveq import (
    ConfigError,
    GeneralStrategy,
    HedgingStrategy,
    LinearClaim,
    MeanVarianceStrategy,
    OpenLoopStrategy,
    simulate_brownian,
)
from oracles import MV_PHI0

SMALL = dict(n_paths=2000, n_steps=40)


def test_params_roundtrip(const_scenario):
    est = MeanVarianceStrategy(const_scenario, gamma=0.5, **SMALL)
    p = est.get_params()
    assert p["gamma"] == 0.5 and p["n_paths"] == 2000 and p["scenario"] is const_scenario
    c = clone(est).set_params(gamma=1.0)
    assert c.gamma == 1.0 and est.gamma == 0.5
    assert set(GeneralStrategy().get_params()) >= {"l", "h"}
    assert "claim" in HedgingStrategy().get_params()
    assert OpenLoopStrategy().get_params()["method"] == "shared"


def test_fit_predict(const_scenario):
    est = MeanVarianceStrategy(const_scenario, gamma=0.5, **SMALL).fit()
    assert est.operator_.phi[0].mean() == pytest.approx(MV_PHI0, rel=0.01)
    u = est.predict(np.full(2000, 1.0), step=0)
    assert u.shape == (2000,) and u.mean() == pytest.approx(MV_PHI0, rel=0.01)
    st = est.simulate()
    np.testing.assert_allclose(est.predict(st.values), st.control)
    assert np.isfinite(est.score())


def test_predict_validation(const_scenario):
    est = MeanVarianceStrategy(const_scenario, gamma=0.5, **SMALL)
    with pytest.raises(NotFittedError):
        est.predict(np.ones(2000), step=0)
    est.fit()
    with pytest.raises(ValueError):
        est.predict(np.ones(5), step=0)
    with pytest.raises(ValueError):
        est.predict(np.ones(2000), step=99)
    with pytest.raises(ValueError):
        est.predict(np.ones((3, 3)))


@pytest.mark.parametrize("bad", [dict(scenario=None), dict(n_paths=1), dict(n_steps=2.5),
                                 dict(gamma=float("nan")), dict(seed="a")])
def test_param_validation(const_scenario, bad):
    params = dict(scenario=const_scenario, gamma=0.5, **SMALL)
    params.update(bad)
    with pytest.raises(ConfigError):
        MeanVarianceStrategy(**params).fit()


def test_fit_on_given_grid(random_r_scenario):
    g = simulate_brownian(1000, 20, 1.0, seed=9)
    est = MeanVarianceStrategy(random_r_scenario, gamma=0.5).fit(g)
    assert est.grid_ is g and est.operator_.shape == g.shape
    with pytest.raises(TypeError):
        MeanVarianceStrategy(random_r_scenario).fit(np.zeros(3))
    with pytest.raises(ConfigError):
        MeanVarianceStrategy(random_r_scenario).fit(simulate_brownian(10, 5, 2.0, seed=0))


def test_other_strategies(random_r_scenario):
    from mveq import Constant

    gen = GeneralStrategy(random_r_scenario, gamma=0.5, l=Constant(0.01), h=Constant(0.02),
                          **SMALL).fit()
    assert gen.simulate().values.shape == (41, 2000)
    with pytest.raises(ConfigError):
        GeneralStrategy(random_r_scenario, l=0.01, **SMALL).fit()
    hed = HedgingStrategy(random_r_scenario, claim=LinearClaim(), **SMALL).fit()
    x = np.full(2000, 1.0)
    lam0 = hed.solution_.claim.lam[0]
    expect = hed.operator_.theta[0] * (x - lam0) + hed.operator_.phi[0]
    np.testing.assert_allclose(hed.predict(x, step=0), expect)
    assert hed.score() <= 0.0
    with pytest.raises(ConfigError):
        HedgingStrategy(random_r_scenario, claim="W_T", **SMALL).fit()
    ol = OpenLoopStrategy(random_r_scenario, gamma=0.5, method="direct", **SMALL).fit()
    assert ol.operator_.kind == "open-loop"
    with pytest.raises(ConfigError):
        OpenLoopStrategy(random_r_scenario, method="other", **SMALL).fit()
