"""Open-loop equilibrium system and its comparison with the closed-loop operator."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bsde import (
    BsdePair,
    EquilibriumOperator,
    LinearBsdeSpec,
    solve_bsde,
    solve_linear_bsde,
    solve_mn,
)
from .errors import GridMismatch
from .market import BrownianGrid, as_coefficients
from .mean_variance import first_pair_from_mn

METHODS = ("shared", "direct")


@dataclass
class OpenLoopEquilibrium:
    cp1: BsdePair
    cp2: BsdePair
    cp3: BsdePair
    cp4: BsdePair
    operator: EquilibriumOperator
    gamma: float
    method: str = "shared"
    diagnostics: dict = field(default_factory=dict)


def solve_openloop(scenario, gamma: float, grid: BrownianGrid, *, method: str = "shared",
                   mn: Optional[BsdePair] = None, **kw) -> OpenLoopEquilibrium:
    """Solve the four open-loop equations backward in order.

    ``method="shared"`` builds ``cP1`` from the ``(M, N)`` solution, exactly
    as the closed-loop first equation.  ``method="direct"`` integrates the
    quadratic ``cP1`` equation with the explicit scheme instead, which gives
    an independent route to the same feedback coefficient.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    coeffs = as_coefficients(scenario, grid)
    if method == "shared":
        if mn is None:
            mn = solve_mn(coeffs, grid, **kw)
        cp1 = first_pair_from_mn(mn)
    else:
        def driver(k, y, z):
            r, beta, sigma = coeffs.at(k)
            return r * y - beta * z / sigma - z * z / y

        cp1 = solve_bsde(driver, np.ones(grid.n_paths), grid, name="cP1", **kw)
    P1, L1 = cp1.Y, cp1.Z

    cp2 = solve_linear_bsde(
        LinearBsdeSpec(np.full(grid.n_paths, -2.0), a=lambda k: coeffs.at(k)[0]),
        grid, name="cP2", **kw)
    P2, L2 = cp2.Y, cp2.Z

    def a3(k):
        r, beta, sigma = coeffs.at(k)
        return r - beta * L2[k] / (sigma * P2[k])

    cp3 = solve_linear_bsde(
        LinearBsdeSpec(np.full(grid.n_paths, -float(gamma)), a=a3, b=lambda k: -L2[k] / P2[k]),
        grid, name="cP3", **kw)
    P3, L3 = cp3.Y, cp3.Z

    def b4(k):
        r, beta, sigma = coeffs.at(k)
        return -(P1[k] * beta + L1[k] * sigma) / (sigma * P1[k])

    def c4(k):
        r, beta, sigma = coeffs.at(k)
        return ((P1[k] * beta + L1[k] * sigma) * (beta * P3[k] + sigma * L3[k])
                / (sigma * sigma * P2[k] * P1[k]))

    cp4 = solve_linear_bsde(LinearBsdeSpec(np.zeros(grid.n_paths), b=b4, c=c4), grid,
                            name="cP4", **kw)
    theta = np.empty(grid.shape)
    phi = np.empty(grid.shape)
    for k in range(grid.shape[0]):
        r, beta, sigma = coeffs.at(k)
        theta[k] = -L1[k] / (sigma * P1[k])
        phi[k] = ((beta * P3[k] + sigma * L3[k]) / (sigma * sigma * P2[k] * P1[k])
                  - cp4.Z[k] / (sigma * P1[k]))
    op = EquilibriumOperator(theta, phi, "open-loop")
    diag = {"sup_abs_theta": float(np.abs(theta).max()), "phi0_mean": float(phi[0].mean())}
    return OpenLoopEquilibrium(cp1, cp2, cp3, cp4, op, float(gamma), method, diag)


@dataclass
class ComparisonReport:
    """Node-wise differences between two operators on one grid.

    ``theta_sup[k]`` and ``phi_sup[k]`` are sup-norms over paths at node
    ``k``; ``*_l2`` are root-mean-square differences.  The relative figures
    divide the overall sup difference by ``max(sup |reference|, floor)``.
    """

    times: np.ndarray
    theta_sup: np.ndarray
    theta_l2: np.ndarray
    phi_sup: np.ndarray
    phi_l2: np.ndarray
    theta_rel: float
    phi_rel: float
    phi_expected_equal: bool
    theta_pass: bool
    phi_pass: Optional[bool]
    tol: float = 0.02

    @property
    def passed(self) -> bool:
        return self.theta_pass and (self.phi_pass is not False)

    def lines(self) -> list:
        phi_flag = "n/a" if self.phi_pass is None else ("pass" if self.phi_pass else "FAIL")
        return [
            f"sup|dTheta| = {self.theta_sup.max():.6g} (relative {self.theta_rel:.3g}) "
            f"{'pass' if self.theta_pass else 'FAIL'}",
            f"sup|dphi|   = {self.phi_sup.max():.6g} (relative {self.phi_rel:.3g}) {phi_flag}",
        ]


def _nodewise(a, b, shape):
    sup = np.empty(shape[0])
    l2 = np.empty(shape[0])
    for k in range(shape[0]):
        d = np.broadcast_to(a[min(k, a.shape[0] - 1)] - b[min(k, b.shape[0] - 1)], (shape[1],))
        sup[k] = np.abs(d).max()
        l2[k] = np.sqrt((d * d).mean())
    return sup, l2


def compare_operators(a: EquilibriumOperator, b: EquilibriumOperator, grid: BrownianGrid, *,
                      r_deterministic: bool, tol: float = 0.02,
                      floor: float = 1e-2) -> ComparisonReport:
    """Compare ``a`` (reference) against ``b`` node by node.

    ``Theta`` equality is always asserted.  ``phi`` equality is asserted only
    when ``r_deterministic``; otherwise ``phi_pass`` is ``None``.  The
    ``floor`` keeps the relative figure meaningful when the reference is
    identically 0, as ``Theta*`` is for deterministic ``r``.
    """
    shape = grid.shape
    for op in (a, b):
        s = op.shape
        if len(s) != 2 or s[0] not in (1, shape[0]) or s[1] not in (1, shape[1]):
            raise GridMismatch(f"operator of shape {s} does not live on grid {shape}")
    th_sup, th_l2 = _nodewise(np.asarray(a.theta), np.asarray(b.theta), shape)
    ph_sup, ph_l2 = _nodewise(np.asarray(a.phi), np.asarray(b.phi), shape)
    th_rel = float(th_sup.max() / max(float(np.abs(a.theta).max()), floor))
    ph_rel = float(ph_sup.max() / max(float(np.abs(a.phi).max()), floor))
    theta_pass = th_rel <= tol
    phi_pass = (ph_rel <= tol) if r_deterministic else None
    return ComparisonReport(grid.times, th_sup, th_l2, ph_sup, ph_l2, th_rel, ph_rel,
                            r_deterministic, theta_pass, phi_pass, tol)
