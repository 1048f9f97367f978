import numpy as np
import pytest

from mveq import (
    BoundedSmoothClaim,
    ConfigError,
    Constant,
    ConstantClaim,
    LinearClaim,
    NotDeterministic,
    UnboundedCoefficient,
    build_scenario,
    claim_processes,
    evaluate_coefficients,
    general_equilibrium,
    simulate_state,
    solve_hedging_equilibrium,
    solve_mv_equilibrium,
)
from mveq.hedging import (
    claim_oracle,
    hedging_closed_form_phi,
    hedging_objective_reduction,
    shifted_state,
)
from oracles import HEDGE_PHI0, hedge_phi_linear


@pytest.fixture(scope="module")
def flat():
    return build_scenario(Constant(0.03), Constant(0.03), Constant(0.2))


def test_claim_validation():
    with pytest.raises(ConfigError):
        LinearClaim(moment_order=2.0)
    with pytest.raises(UnboundedCoefficient):
        BoundedSmoothClaim(np.sin, None)
    c = BoundedSmoothClaim.tanh(2.0, 3.0)
    assert c.bound == 2.0
    assert np.abs(c.payoff(np.linspace(-10, 10, 11))).max() <= 2.0


def test_exact_claim_processes(small_grid):
    g = small_grid
    p = claim_processes(ConstantClaim(3.0), g)
    assert p.exact and p.lam.shape == (1, 1) and p.zeta[0, 0] == 0.0
    np.testing.assert_array_equal(p.xi, 3.0)
    p = claim_processes(LinearClaim(2.0, 1.0), g)
    np.testing.assert_array_equal(p.lam, 1.0 + 2.0 * g.W)
    assert p.zeta[0, 0] == 2.0


def test_claim_oracle_quadrature():
    mean, slope = claim_oracle(LinearClaim(1.5, 0.5), 2.0)
    assert mean == pytest.approx(0.5, abs=1e-10)
    assert slope == pytest.approx(1.5, rel=1e-10)
    mean, slope = claim_oracle(BoundedSmoothClaim.tanh(), 1.0)
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert 0.0 < slope < 1.0


def test_smooth_claim_martingale(mid_grid):
    claim = BoundedSmoothClaim.tanh()
    p = claim_processes(claim, mid_grid)
    mean, slope = claim_oracle(claim, 1.0)
    se = p.xi.std() / np.sqrt(p.xi.size)
    assert abs(p.lam[0].mean() - mean) <= 3 * se
    assert p.zeta[0].mean() == pytest.approx(slope, rel=0.03)
    assert p.drift_residuals(mid_grid).max() < 1e-3


def test_closed_form_hedge(flat, mid_grid):
    he = solve_hedging_equilibrium(flat, LinearClaim(), mid_grid)
    cf = hedging_closed_form_phi(flat, LinearClaim(), mid_grid)
    assert cf[0] == pytest.approx(HEDGE_PHI0, rel=1e-6)
    np.testing.assert_allclose(cf, hedge_phi_linear(0.03, 0.2, mid_grid.times))
    err = np.abs(he.operator.phi - cf[:, None])
    assert err[0].max() <= 0.01 * cf[0]
    # interior nodes carry regression noise in the tails
    assert err.mean() <= 1e-3 * cf.max()
    assert err.max() <= 0.02 * cf.max()
    assert np.abs(he.operator.theta).max() < 1e-12


def test_closed_form_preconditions(const_scenario, random_r_scenario, flat):
    with pytest.raises(ConfigError):
        hedging_closed_form_phi(flat, BoundedSmoothClaim.tanh(), [0.0])
    with pytest.raises(ConfigError):
        hedging_closed_form_phi(const_scenario, LinearClaim(), [0.0])
    with pytest.raises(NotDeterministic):
        hedging_closed_form_phi(random_r_scenario, LinearClaim(), [0.0])


@pytest.mark.parametrize("fixture", ["random_r_scenario", "random_all_scenario"])
@pytest.mark.parametrize("claim", [LinearClaim(), BoundedSmoothClaim.tanh()])
def test_reduction_to_general_system(fixture, claim, request, small_grid):
    g = small_grid
    c = evaluate_coefficients(request.getfixturevalue(fixture), g)
    he = solve_hedging_equilibrium(c, claim, g)
    mv = solve_mv_equilibrium(c, 0.5, g, mn=he.mn)
    assert np.abs(he.operator.theta - mv.theta).max() <= 1e-10
    lam = np.broadcast_to(he.claim.lam, g.shape)
    zeta = np.broadcast_to(he.claim.zeta, g.shape)
    _, op = general_equilibrium(c, g, 0.0, l=c.r * lam, h=-zeta, mn=he.mn)
    assert np.abs(he.operator.phi - op.phi).max() <= 1e-10 * max(1.0, np.abs(op.phi).max())


def test_hedge_removes_variance(flat, small_grid):
    c = evaluate_coefficients(flat, small_grid)
    he = solve_hedging_equilibrium(c, LinearClaim(), small_grid)
    st = simulate_state(c, small_grid, 1.0, theta=he.operator.theta, phi=he.operator.phi,
                        offset=he.operator.offset)
    np.testing.assert_allclose(he.strategy(st), st.control)
    hedged = hedging_objective_reduction(st, he.claim.xi)
    idle = simulate_state(c, small_grid, 1.0, control=0.0)
    assert hedged.value <= 0.05 * hedging_objective_reduction(idle, he.claim.xi).value
    y = shifted_state(st, he.claim)
    np.testing.assert_allclose(y[-1], st.terminal - he.claim.xi)
