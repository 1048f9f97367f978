"""Equilibrium mean-variance strategies.

The first equation of the mean-variance system is the general system's
``P2`` equation: both have terminal value 1 and the same quadratic driver,
so ``sP1 = P2 = -sqrt(2) / M`` and ``sL1 = L2 = sqrt(2) N / M^2`` come from
one linear solve for ``(M, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bsde import (
    SQRT2,
    BsdePair,
    EquilibriumOperator,
    LinearBsdeSpec,
    solve_linear_bsde,
    solve_mn,
)
from .errors import DegenerateM, DegenerateP1, NotDeterministic
from .market import (
    BrownianGrid,
    MarketScenario,
    StatePaths,
    _at,
    _rows,
    as_coefficients,
)

P1_FLOOR = 1e-8


@dataclass
class MvEquilibrium:
    """Solved mean-variance system and its feedback operator."""

    sp1: BsdePair
    sp2: BsdePair
    sp3: BsdePair
    operator: EquilibriumOperator
    gamma: float
    mn: BsdePair = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.operator.theta

    @property
    def phi(self) -> np.ndarray:
        return self.operator.phi


def first_pair_from_mn(mn: BsdePair, *, m_floor: float = 1e-8) -> BsdePair:
    """``(sP1, sL1)`` with terminal value 1 from the ``(M, N)`` solution."""
    M, N = mn.Y, mn.Z
    if np.min(np.abs(M)) < m_floor:
        raise DegenerateM(f"|M| = {np.min(np.abs(M)):.3g} below {m_floor:.3g}")
    P = -SQRT2 / M
    P[-1] = 1.0
    L = SQRT2 * N / (M * M)
    if np.min(P) < P1_FLOOR:
        raise DegenerateP1(f"sP1 = {np.min(P):.3g} below {P1_FLOOR:.3g}")
    return BsdePair(P, L, None, "sP1")


def mv_theta(sp1: BsdePair, sigma) -> np.ndarray:
    """``Theta* = -sL1 / (sigma sP1)``."""
    sigma = _rows(sigma, sp1.Y.shape)
    out = np.empty(sp1.Y.shape)
    for k in range(out.shape[0]):
        out[k] = -sp1.Z[k] / (_at(sigma, k) * sp1.Y[k])
    return out


def solve_mv_equilibrium(scenario, gamma: float, grid: BrownianGrid, *,
                         mn: Optional[BsdePair] = None, **kw) -> MvEquilibrium:
    """Solve the mean-variance system on ``grid`` and assemble ``(Theta*, phi*)``.

    ``scenario`` may be a :class:`MarketScenario` or evaluated
    :class:`CoefficientPaths`.  Pass ``mn`` to reuse an existing ``(M, N)``
    solve (the hedging and open-loop systems share it).
    """
    coeffs = as_coefficients(scenario, grid)
    if mn is None:
        mn = solve_mn(coeffs, grid, **kw)
    sp1 = first_pair_from_mn(mn)
    P, L = sp1.Y, sp1.Z
    p_floor = float(P.min())

    def a2(k):
        r, beta, sigma = coeffs.at(k)
        return r - beta * L[k] / (sigma * P[k])

    def b2(k):
        return -L[k] / P[k]

    sp2 = solve_linear_bsde(LinearBsdeSpec(np.full(grid.n_paths, -float(gamma)), a=a2, b=b2),
                            grid, name="sP2", **kw)

    def b3(k):
        r, beta, sigma = coeffs.at(k)
        return -(P[k] * beta + L[k] * sigma) / (sigma * P[k])

    def c3(k):
        r, beta, sigma = coeffs.at(k)
        denom = np.maximum(2.0 * sigma * sigma * P[k] * P[k], _guard(sigma, p_floor))
        return -(P[k] * beta + L[k] * sigma) * (beta * sp2.Y[k] + sigma * sp2.Z[k]) / denom

    sp3 = solve_linear_bsde(LinearBsdeSpec(np.zeros(grid.n_paths), b=b3, c=c3), grid,
                            name="sP3", **kw)
    theta = mv_theta(sp1, coeffs.sigma)
    phi = np.empty(grid.shape)
    for k in range(phi.shape[0]):
        r, beta, sigma = coeffs.at(k)
        denom = np.maximum(2.0 * sigma * sigma * P[k] * P[k], _guard(sigma, p_floor))
        phi[k] = -(2.0 * P[k] * sp3.Z[k] * sigma + beta * sp2.Y[k] + sigma * sp2.Z[k]) / denom
    op = EquilibriumOperator(theta, phi, "mean-variance")
    diag = {
        "sP1_min": p_floor,
        "sup_abs_theta": float(np.abs(theta).max()),
        "sup_abs_sL3": float(np.abs(sp3.Z).max()),
        "phi0_mean": float(phi[0].mean()),
    }
    return MvEquilibrium(sp1, sp2, sp3, op, float(gamma), mn, diag)


def _guard(sigma, p_floor: float) -> float:
    # sigma^2 sP1^2 is bounded below by (min sigma^2) (min sP1)^2 in theory;
    # the guard only stops a division by a rounding-level value
    return 0.5 * float(np.min(sigma * sigma)) * p_floor * p_floor


def mv_closed_form_deterministic(scenario: MarketScenario, gamma: float,
                                 grid_or_times) -> EquilibriumOperator:
    """Closed-form operator for deterministic coefficients.

    ``Theta* = 0`` and ``phi*(t) = gamma beta(t) / (2 sigma(t)^2) exp(-int_t^T r)``,
    evaluated at the nodes of a grid (or an explicit time array).
    """
    if not scenario.deterministic:
        raise NotDeterministic("closed form needs deterministic r, b and sigma")
    times = getattr(grid_or_times, "times", grid_or_times)
    times = np.asarray(times, dtype=float)
    r = _time_values(scenario.r, times)
    b = _time_values(scenario.b, times)
    sigma = _time_values(scenario.sigma, times)
    disc = np.exp(-integral_to_horizon(scenario.r, times, scenario.T))
    phi = gamma * (b - r) / (2.0 * sigma * sigma) * disc
    return EquilibriumOperator(np.zeros((times.size, 1)), phi[:, None], "mean-variance")


def _time_values(spec, times: np.ndarray) -> np.ndarray:
    return np.broadcast_to(spec.evaluate(times, None), (times.size, 1))[:, 0]


def integral_to_horizon(spec, times: np.ndarray, T: float) -> np.ndarray:
    """``int_t^T f(s) ds`` for a deterministic coefficient at each ``t``.

    Exact for constants and for piecewise-linear time functions (the
    trapezoid rule runs over every knot).
    """
    times = np.asarray(times, dtype=float)
    knots = np.asarray(getattr(spec, "knots", ()), dtype=float)
    knots = knots[(knots > 0.0) & (knots < T)]
    fine = np.unique(np.concatenate([times, knots, [0.0, T]]))
    vals = _time_values(spec, fine)
    seg = 0.5 * (vals[1:] + vals[:-1]) * np.diff(fine)
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    return np.interp(times, fine, tail)


def equilibrium_strategy(operator: EquilibriumOperator, state: StatePaths) -> np.ndarray:
    """Controls ``u* = Theta* X + phi*`` along the given wealth paths."""
    return operator.control(state.values)
