import numpy as np
import pytest

from mveq import (
    Constant,
    FormulaMismatch,
    LinearBsdeSpec,
    StepSizeTooLarge,
    build_scenario,
    evaluate_coefficients,
    general_equilibrium,
    simulate_brownian,
    solve_bsde,
    solve_linear_bsde,
    solve_mn,
)
from mveq.bsde import forward_transition, mn_oracle_measure_change
from oracles import m_const, p1_const, p2_const, phi_ode_const


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def test_deterministic_linear_equation():
    g = simulate_brownian(10, 400, 1.0, seed=0)
    a, c = 0.3, 0.5
    pair = solve_linear_bsde(LinearBsdeSpec(np.ones(10), a=a, c=c), g)
    exact = np.exp(a * (1 - g.times)) + c * (np.exp(a * (1 - g.times)) - 1) / a
    np.testing.assert_allclose(pair.Y[:, 0], exact, rtol=2e-3)
    assert np.abs(pair.Z).max() < 1e-12


def test_martingale_terminals(mid_grid):
    g = mid_grid
    lin = solve_linear_bsde(LinearBsdeSpec(g.W[-1]), g)
    assert rms(lin.Y - g.W) < 0.01
    assert rms(lin.Z[:-1] - 1.0) < 0.05
    sq = solve_linear_bsde(LinearBsdeSpec(g.W[-1] ** 2), g)
    assert rms(sq.Y - g.W ** 2 - (1 - g.times)[:, None]) < 0.05
    assert rms(sq.Z[:-1] - 2 * g.W[:-1]) < 0.15


def test_callable_coefficients_match_arrays(small_grid):
    g = small_grid
    arr = 0.1 * np.tanh(g.W)
    p1 = solve_linear_bsde(LinearBsdeSpec(g.W[-1], a=arr, b=0.2), g)
    p2 = solve_linear_bsde(LinearBsdeSpec(g.W[-1], a=lambda k: arr[k], b=lambda k: 0.2), g)
    np.testing.assert_array_equal(p1.Y, p2.Y)
    np.testing.assert_array_equal(p1.Z, p2.Z)


def test_step_size_guard():
    g = simulate_brownian(10, 5, 1.0, seed=0)
    with pytest.raises(StepSizeTooLarge):
        solve_linear_bsde(LinearBsdeSpec(np.ones(10), a=10.0), g)


def test_general_driver_reduces_to_linear():
    g = simulate_brownian(10, 400, 1.0, seed=0)
    pair = solve_bsde(lambda k, y, z: 0.3 * y, np.ones(10), g)
    np.testing.assert_allclose(pair.Y[0], np.exp(0.3), rtol=2e-3)


@pytest.mark.parametrize("r", [0.0, 0.03, -0.02])
def test_mn_constants_against_ode(r):
    g = simulate_brownian(50, 200, 1.0, seed=1)
    sc = build_scenario(Constant(r), Constant(0.08), Constant(0.2))
    mn = solve_mn(evaluate_coefficients(sc, g), g)
    np.testing.assert_allclose(mn.Y[:, 0], m_const(r, g.times), rtol=1e-4)
    assert np.abs(mn.Z).max() < 1e-12


def test_pipeline_constants_against_ode(const_scenario):
    g = simulate_brownian(50, 200, 1.0, seed=1)
    sol, op = general_equilibrium(evaluate_coefficients(const_scenario, g), g, 0.5)
    t = g.times
    np.testing.assert_allclose(sol.p1.Y[:, 0], p1_const(0.03, t), rtol=1e-4)
    np.testing.assert_allclose(sol.p2.Y[:, 0], p2_const(0.03, t), rtol=1e-4)
    np.testing.assert_allclose(sol.phipsi.Y[:, 0], phi_ode_const(0.03, 0.5, t), rtol=1e-4)
    assert np.abs(op.theta).max() < 1e-12


def test_identities_and_formula_gaps(random_all_scenario, small_grid):
    c = evaluate_coefficients(random_all_scenario, small_grid)
    sol, op = general_equilibrium(c, small_grid, 0.5, l=0.01, h=0.02)
    viol = sol.identity_violations()
    for key in ("P1-2P2^2", "L1-4P2L2", "P4-Phi-2P2P3", "L4-Psi-2L2P3-2L3P2"):
        assert viol[key] <= 1e-10, key
    assert viol["P1-4/M^2"] <= 1e-12 * np.abs(sol.p1.Y).max()
    d = sol.diagnostics
    assert d["theta_formula_gap"] <= 1e-10 and d["phi_formula_gap"] <= 1e-10
    assert d["P1_min"] >= d["P1_lower_bound"] * (1 - 1e-12)
    assert op.shape == small_grid.shape
    with pytest.raises(FormulaMismatch):
        general_equilibrium(c, small_grid, 0.5, l=0.01, h=0.02, tol=-1.0)


def test_components_order(const_scenario, small_grid):
    sol, _ = general_equilibrium(evaluate_coefficients(const_scenario, small_grid), small_grid, 1.0)
    assert list(sol.components()) == ["M", "N", "P1", "Lambda1", "P2", "Lambda2", "P3",
                                      "Lambda3", "P4", "Lambda4", "Phi", "Psi"]


def test_forward_transition(const_scenario, random_r_scenario, mid_grid):
    g = simulate_brownian(20, 400, 1.0, seed=2)
    c = evaluate_coefficients(const_scenario, g)
    sol, op = general_equilibrium(c, g, 0.5)
    F = forward_transition(c, g, op.theta)
    np.testing.assert_allclose(F, sol.p2.Y[0] / sol.p2.Y, rtol=1e-4)
    c = evaluate_coefficients(random_r_scenario, mid_grid)
    sol, op = general_equilibrium(c, mid_grid, 0.5)
    gap = forward_transition(c, mid_grid, op.theta) - sol.p2.Y[0] / sol.p2.Y
    assert np.abs(gap).mean() < 1e-3
    assert np.abs(gap).max() < 0.02


def test_measure_change_oracle_constants():
    g = simulate_brownian(4000, 50, 1.0, seed=3)
    sc = build_scenario(Constant(0.03), Constant(0.08), Constant(0.2))
    est = mn_oracle_measure_change(sc, g, 0)
    assert abs(est.mean[0] - m_const(0.03, 0.0)) <= 4 * est.se[0]
    inner = mn_oracle_measure_change(sc, g, 25, [0.0, 1.0], n_inner=4000, seed=1)
    assert np.all(np.abs(inner.mean - m_const(0.03, 0.5)) <= 4 * inner.se)
    last = mn_oracle_measure_change(sc, g, 50, [0.0])
    assert last.mean[0] == -np.sqrt(2.0)
    with pytest.raises(ValueError):
        mn_oracle_measure_change(sc, g, 10)
