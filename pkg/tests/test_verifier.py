import numpy as np
import pytest

from mveq import (
    BoundedSmoothClaim,
    InsufficientPaths,
    PerturbationSpec,
    evaluate_coefficients,
    general_equilibrium,
    perturbation_quotient,
    run_probe_suite,
    simulate_state,
    solve_hedging_equilibrium,
    solve_mv_equilibrium,
)
from mveq.verifier import (
    build_auxiliary_pair,
    diagonal_identity_check,
    ladder_weights,
    recursion_residuals,
    riccati_view,
    scaled_operator,
)

L, H = 0.01, 0.02


@pytest.fixture(scope="module")
def general_case(random_all_scenario, mid_grid):
    c = evaluate_coefficients(random_all_scenario, mid_grid)
    sol, op = general_equilibrium(c, mid_grid, 0.5, l=L, h=H)
    st = simulate_state(c, mid_grid, 1.0, theta=op.theta, phi=op.phi, l=L, h=H)
    return c, sol, op, st


def test_ladder_weights_extrapolate_lines():
    e = np.array([0.1, 0.05, 0.025])
    w = ladder_weights(e)
    assert w.sum() == pytest.approx(1.0)
    assert w @ (3.0 + 7.0 * e) == pytest.approx(3.0)
    np.testing.assert_allclose(w, ladder_weights(e * 2))
    np.testing.assert_allclose(w, [-0.5, 0.5, 1.0], atol=1e-12)
    assert ladder_weights([0.1])[0] == 1.0


def test_mean_variance_view_matches_general(random_r_scenario, small_grid):
    c = evaluate_coefficients(random_r_scenario, small_grid)
    mv = solve_mv_equilibrium(c, 0.5, small_grid)
    sol, _ = general_equilibrium(c, small_grid, 0.5, mn=mv.mn)
    view = riccati_view(mv)
    for name in ("p1", "p2", "p3", "phipsi"):
        a, b = getattr(view, name), getattr(sol, name)
        scale = max(1.0, np.abs(b.Y).max())
        assert np.abs(a.Y - b.Y).max() <= 1e-10 * scale, name
        assert np.abs(a.Z - b.Z).max() <= 1e-10 * max(1.0, np.abs(b.Z).max()), name
    with pytest.raises(TypeError):
        riccati_view(object())


def test_diagonal_identity(general_case, mid_grid):
    c, sol, op, st = general_case
    rep = diagonal_identity_check(sol, st, c, mid_grid, operator=op, h=H)
    assert rep.sup <= 1e-10 and rep.sup_direct <= 1e-10
    bad = scaled_operator(op, 1.5)
    assert diagonal_identity_check(sol, st, c, mid_grid, operator=bad, h=H).sup > 1e-4


@pytest.mark.parametrize("t", [0.0, 0.5])
def test_recursion_residuals(general_case, mid_grid, t):
    c, sol, op, st = general_case
    pair = build_auxiliary_pair(sol, st, c, mid_grid, t, operator=op, h=H)
    assert pair.Y.shape[0] == mid_grid.n_steps - pair.anchor + 1
    rr = recursion_residuals(pair, c, mid_grid, op)
    # many steps are tested at once; see the notes on the multiple-testing rule
    assert np.mean(rr.z <= 3.0) >= 0.98
    assert rr.z.max() <= 4.5
    with pytest.raises(ValueError):
        build_auxiliary_pair(sol, st, c, mid_grid, t, h=H)


def test_probe_suite_and_power(general_case, mid_grid):
    c, sol, op, st = general_case
    kw = dict(gamma=0.5, l=L, h=H, adaptive=True)
    rep = run_probe_suite(c, op, mid_grid, "general", **kw)
    assert len(rep.probes) == 12 and rep.adaptive is not None
    assert rep.passed
    bad = run_probe_suite(c, scaled_operator(op, 2.0), mid_grid, "general", **kw)
    assert bad.rejects(5.0)


def test_state_dependent_perturbation(general_case, mid_grid):
    c, sol, op, st = general_case
    rep = perturbation_quotient(c, op, PerturbationSpec(0.25, 0.1, 2.0, clamp=1.0), mid_grid,
                                "general", gamma=0.5, l=L, h=H)
    assert rep.passed
    # 0.025 snaps to two steps of 0.01 (round half to even)
    assert rep.eps.tolist() == pytest.approx([0.1, 0.05, 0.02])
    with pytest.raises(InsufficientPaths):
        perturbation_quotient(c, op, PerturbationSpec(0.25, 0.1), mid_grid, "general",
                              gamma=0.5, l=L, h=H, precision=1e-12)


def test_hedging_probes(random_r_scenario, mid_grid):
    c = evaluate_coefficients(random_r_scenario, mid_grid)
    he = solve_hedging_equilibrium(c, BoundedSmoothClaim.tanh(), mid_grid)
    rep = run_probe_suite(c, he.operator, mid_grid, "hedging", xi=he.claim.xi)
    assert rep.passed
    with pytest.raises(ValueError):
        run_probe_suite(c, he.operator, mid_grid, "hedging")
    with pytest.raises(ValueError):
        run_probe_suite(c, he.operator, mid_grid, "unknown")
