import numpy as np
import pytest

from mveq import (
    BrownianFunction,
    Constant,
    EquilibriumOperator,
    GridMismatch,
    build_scenario,
    evaluate_coefficients,
    simulate_brownian,
    solve_mv_equilibrium,
    solve_openloop,
)
from mveq.openloop import compare_operators
from oracles import mv_phi_const


def test_constants_match_closed_form(const_scenario, small_grid):
    ol = solve_openloop(const_scenario, 0.5, small_grid)
    np.testing.assert_allclose(ol.operator.phi[:, 0],
                               mv_phi_const(0.03, 0.08, 0.2, 0.5, small_grid.times), rtol=2e-3)
    assert np.abs(ol.operator.theta).max() < 1e-12


def test_shared_route_reuses_first_pair(random_r_scenario, small_grid):
    c = evaluate_coefficients(random_r_scenario, small_grid)
    mv = solve_mv_equilibrium(c, 0.5, small_grid)
    ol = solve_openloop(c, 0.5, small_grid, mn=mv.mn)
    np.testing.assert_array_equal(ol.operator.theta, mv.theta)


def test_direct_route_agrees_on_central_paths(random_r_scenario, mid_grid):
    g = mid_grid
    c = evaluate_coefficients(random_r_scenario, g)
    a = solve_openloop(c, 0.5, g)
    b = solve_openloop(c, 0.5, g, method="direct")
    central = np.abs(g.W) <= 3.0 * np.sqrt(g.times)[:, None]
    for name in ("theta", "phi"):
        x, y = getattr(a.operator, name), getattr(b.operator, name)
        d = np.abs(x - y)
        scale = np.abs(x).max()
        assert d[central].max() <= 0.02 * scale, name
        assert np.sqrt(np.mean(d * d)) <= 0.002 * scale, name


def test_unknown_method(const_scenario, small_grid):
    with pytest.raises(ValueError):
        solve_openloop(const_scenario, 0.5, small_grid, method="other")


def test_deterministic_rate_phi_agrees(mid_grid):
    sc = build_scenario(Constant(0.03), BrownianFunction.sin(0.08, 0.03),
                        BrownianFunction.cos(0.25, 0.05))
    c = evaluate_coefficients(sc, mid_grid)
    mv = solve_mv_equilibrium(c, 0.5, mid_grid)
    ol = solve_openloop(c, 0.5, mid_grid, mn=mv.mn)
    rep = compare_operators(mv.operator, ol.operator, mid_grid, r_deterministic=True)
    assert rep.passed and rep.phi_pass
    assert rep.theta_sup.shape == (mid_grid.n_steps + 1,)


def test_report_semantics(small_grid):
    n = small_grid.n_steps + 1
    a = EquilibriumOperator(np.zeros((n, 1)), np.ones((n, 1)))
    b = EquilibriumOperator(np.full((n, 1), 1e-4), np.full((n, 1), 1.1))
    rep = compare_operators(a, b, small_grid, r_deterministic=False)
    assert rep.phi_pass is None and rep.passed
    assert rep.theta_rel == pytest.approx(1e-4 / 1e-2)
    rep = compare_operators(a, b, small_grid, r_deterministic=True)
    assert rep.phi_pass is False and not rep.passed
    assert rep.phi_rel == pytest.approx(0.1)
    assert any("FAIL" in line for line in rep.lines())
    with pytest.raises(GridMismatch):
        compare_operators(a, EquilibriumOperator(np.zeros((3, 1)), np.zeros((3, 1))),
                          small_grid, r_deterministic=True)
