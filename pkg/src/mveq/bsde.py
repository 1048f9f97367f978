"""Regression solver for linear BSDEs and the constructive Riccati assembly.

Every backward equation is written as ``dY = -g(Y, Z) ds + Z dW`` with a
linear generator ``g = a Y + b Z + c``.  One backward step reads

    Z_k = E[(Y_{k+1} - E[Y_{k+1} | W_k]) dW_k | W_k] / dt
    Y_k = (E[Y_{k+1} | W_k] + (b_k Z_k + c_k) dt) / (1 - a_k dt)

with both conditional expectations computed by least squares on a cubic
polynomial basis in ``W_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateM, FormulaMismatch, GridMismatch, StepSizeTooLarge
from .market import BrownianGrid, CoefficientPaths, MarketScenario, _at, _rows
from .regression import DEFAULT_DEGREE, DEFAULT_RIDGE, Projector, polynomial_basis

SQRT2 = np.sqrt(2.0)
IDENTITY_TOL = 1e-10


@dataclass
class LinearBsdeSpec:
    """Generator coefficients and terminal value.

    Each of ``a, b, c`` is a scalar, a grid process broadcastable to
    ``(n_steps + 1, n_paths)``, or a callable ``k -> cross-section at node k``
    (which keeps large drivers from being materialised in full).
    """

    terminal: np.ndarray
    a: object = 0.0
    b: object = 0.0
    c: object = 0.0


@dataclass
class BsdePair:
    """Grid solution ``(Y, Z)`` of a backward equation.

    ``residuals[k]`` is the RMS regression residual of ``Y_{k+1}`` on the
    basis at node ``k``.  ``Z[-1]`` repeats ``Z[-2]`` by convention.
    """

    Y: np.ndarray
    Z: np.ndarray
    residuals: np.ndarray = field(default=None, repr=False)
    name: str = ""


def _coef(v, shape):
    return v if callable(v) else _rows(v, shape)


def _row(v, k: int):
    return v(k) if callable(v) else _at(v, k)


def _state(grid: BrownianGrid, state, k: int):
    if state is None:
        return grid.W[k]
    return [s[k] for s in state]


def solve_linear_bsde(spec: LinearBsdeSpec, grid: BrownianGrid, *, state=None,
                      degree: int = DEFAULT_DEGREE, ridge: float = DEFAULT_RIDGE,
                      name: str = "") -> BsdePair:
    """Backward induction for ``dY = -(aY + bZ + c) ds + Z dW``.

    ``state`` optionally replaces ``W`` as the regression variable; it is a
    list of ``(n_steps + 1, n_paths)`` arrays.

    Raises
    ------
    StepSizeTooLarge
        if ``|a dt| >= 1`` somewhere, which would break the implicit step.
    SingularRegression
        from the regression.
    """
    shape = grid.shape
    n, dt = grid.n_steps, grid.dt
    a, b, c = (_coef(v, shape) for v in (spec.a, spec.b, spec.c))
    terminal = np.broadcast_to(np.asarray(spec.terminal, dtype=float), (grid.n_paths,))
    Y = np.empty(shape)
    Z = np.empty(shape)
    res = np.empty(n)
    Y[n] = terminal
    for k in range(n - 1, -1, -1):
        basis, _ = polynomial_basis(_state(grid, state, k), degree)
        proj = Projector(basis, ridge)
        y_next = Y[k + 1]
        ey = proj.project(y_next)
        innov = y_next - ey
        res[k] = np.sqrt((innov * innov).sum() / innov.size)
        z = proj.project(innov * grid.dW[k]) / dt
        Z[k] = z
        ak = _row(a, k)
        if np.max(np.abs(ak)) * dt >= 1.0:
            raise StepSizeTooLarge(
                f"|a dt| = {np.max(np.abs(ak)) * dt:.3g} >= 1 at node {k} of {name or 'BSDE'}")
        Y[k] = (ey + (_row(b, k) * z + _row(c, k)) * dt) / (1.0 - ak * dt)
    Z[n] = Z[n - 1]
    return BsdePair(Y, Z, res, name)


def solve_bsde(driver: Callable, terminal, grid: BrownianGrid, *, degree: int = DEFAULT_DEGREE,
               ridge: float = DEFAULT_RIDGE, name: str = "") -> BsdePair:
    """Explicit scheme for a general driver ``g(k, Y, Z)``.

    ``Y_k = E[Y_{k+1} | W_k] + g(k, E[Y_{k+1} | W_k], Z_k) dt``.  Used as an
    independent route for the quadratic Riccati equations.
    """
    shape = grid.shape
    n, dt = grid.n_steps, grid.dt
    Y = np.empty(shape)
    Z = np.empty(shape)
    res = np.empty(n)
    Y[n] = np.broadcast_to(np.asarray(terminal, dtype=float), (grid.n_paths,))
    for k in range(n - 1, -1, -1):
        basis, _ = polynomial_basis(grid.W[k], degree)
        proj = Projector(basis, ridge)
        ey = proj.project(Y[k + 1])
        innov = Y[k + 1] - ey
        res[k] = np.sqrt((innov * innov).sum() / innov.size)
        z = proj.project(innov * grid.dW[k]) / dt
        Z[k] = z
        Y[k] = ey + driver(k, ey, z) * dt
    Z[n] = Z[n - 1]
    return BsdePair(Y, Z, res, name)


# ---------------------------------------------------------------------------
# (M, N) and its measure-change representation
# ---------------------------------------------------------------------------


def solve_mn(coeffs: CoefficientPaths, grid: BrownianGrid, **kw) -> BsdePair:
    """Solve ``dM = (rM + theta N) ds + N dW``, ``M(T) = -sqrt(2)``."""
    def a(k):
        return -coeffs.at(k)[0]

    def b(k):
        r, beta, sigma = coeffs.at(k)
        return -beta / sigma

    spec = LinearBsdeSpec(np.full(grid.n_paths, -SQRT2), a=a, b=b)
    return solve_linear_bsde(spec, grid, name="M", **kw)


@dataclass
class OracleEstimate:
    mean: np.ndarray
    se: np.ndarray


def _weights(scenario: MarketScenario, times: np.ndarray, W: np.ndarray, dW: np.ndarray):
    """``rho(t, T) exp(-int r)`` along paths, left-point sums."""
    dt = times[1] - times[0]
    nodes = times[:-1]
    Wl = W[:-1]
    r = np.broadcast_to(scenario.r.evaluate(nodes, Wl), dW.shape)
    b = np.broadcast_to(scenario.b.evaluate(nodes, Wl), dW.shape)
    sig = np.broadcast_to(scenario.sigma.evaluate(nodes, Wl), dW.shape)
    th = (b - r) / sig
    log_w = -(th * dW).sum(axis=0) - 0.5 * (th * th).sum(axis=0) * dt - r.sum(axis=0) * dt
    return np.exp(log_w)


def mn_oracle_measure_change(scenario: MarketScenario, grid: BrownianGrid, node: int,
                             conditioning=None, *, n_inner: int = 20000,
                             seed: Optional[int] = None) -> OracleEstimate:
    """Regression-free estimate of ``M(t_k) = -sqrt(2) E_t[rho(t,T) exp(-int_t^T r)]``.

    ``rho`` is the stochastic exponential of ``-int theta dW``.  At node 0 the
    grid's own paths are averaged.  At later nodes each value ``w`` in
    ``conditioning`` starts ``n_inner`` fresh Brownian paths from ``W_t = w``.
    """
    n = grid.n_steps
    if node == n:
        m = 1 if conditioning is None else np.size(conditioning)
        return OracleEstimate(np.full(m, -SQRT2), np.zeros(m))
    if node == 0:
        wts = _weights(scenario, grid.times, grid.W, grid.dW)
        mean = -SQRT2 * wts.mean()
        se = SQRT2 * wts.std(ddof=1) / np.sqrt(wts.size)
        return OracleEstimate(np.array([mean]), np.array([se]))
    if conditioning is None:
        raise ValueError("conditioning values are required at interior nodes")
    rng = np.random.default_rng(seed)
    times = grid.times[node:]
    steps = n - node
    means, ses = [], []
    for w in np.atleast_1d(conditioning):
        dW = rng.standard_normal((steps, n_inner)) * np.sqrt(grid.dt)
        W = np.empty((steps + 1, n_inner))
        W[0] = w
        np.cumsum(dW, axis=0, out=W[1:])
        W[1:] += w
        wts = _weights(scenario, times, W, dW)
        means.append(-SQRT2 * wts.mean())
        ses.append(SQRT2 * wts.std(ddof=1) / np.sqrt(n_inner))
    return OracleEstimate(np.array(means), np.array(ses))


# ---------------------------------------------------------------------------
# constructive assembly
# ---------------------------------------------------------------------------


@dataclass
class RiccatiCore:
    P1: np.ndarray
    L1: np.ndarray
    P2: np.ndarray
    L2: np.ndarray
    theta: np.ndarray


def build_riccati_core(mn: BsdePair, sigma, *, m_floor: float = 1e-8) -> RiccatiCore:
    """``P1 = 4/M^2``, ``L1 = -8N/M^3``, ``P2 = sqrt(P1/2)``, ``L2 = L1/(4 P2)``.

    The feedback coefficient is ``-L2 / (sigma P2)``.  Terminal rows are set
    to their exact values ``P1(T) = 2``, ``P2(T) = 1``.
    """
    M, N = mn.Y, mn.Z
    sigma = _rows(sigma, M.shape)
    if np.min(np.abs(M)) < m_floor:
        raise DegenerateM(f"|M| = {np.min(np.abs(M)):.3g} below {m_floor:.3g}")
    P1 = 4.0 / (M * M)
    P1[-1] = 2.0
    L1 = -8.0 * N / (M * M * M)
    P2 = np.sqrt(P1 / 2.0)
    P2[-1] = 1.0
    L2 = L1 / (4.0 * P2)
    theta = np.empty(M.shape)
    for k in range(M.shape[0]):
        theta[k] = -L2[k] / (_at(sigma, k) * P2[k])
    return RiccatiCore(P1, L1, P2, L2, theta)


def solve_phi_psi(theta, coeffs: CoefficientPaths, gamma: float, grid: BrownianGrid,
                  **kw) -> BsdePair:
    """``dPhi = -[(r + beta Theta) Phi + Theta sigma Psi] ds + Psi dW``, ``Phi(T) = -gamma``."""
    theta = _rows(theta, grid.shape)

    def a(k):
        r, beta, sigma = coeffs.at(k)
        return r + beta * _at(theta, k)

    def b(k):
        return _at(theta, k) * coeffs.at(k)[2]

    spec = LinearBsdeSpec(np.full(grid.n_paths, -float(gamma)), a=a, b=b)
    return solve_linear_bsde(spec, grid, name="Phi", **kw)


def _phi_star(P1, P2, L3, Phi, Psi, beta, sigma, h) -> np.ndarray:
    return (-2.0 * P2 * L3 / (sigma * P1)
            - (beta * Phi + sigma * Psi + sigma * P1 * h) / (sigma * sigma * P1))


def solve_p3_phi_star(core: RiccatiCore, phipsi: BsdePair, coeffs: CoefficientPaths,
                      grid: BrownianGrid, l=None, h=None, **kw):
    """Solve the ``P3`` equation (terminal 0) and assemble the affine term.

    Returns ``(P3 pair, phi_star)``.
    """
    shape = grid.shape
    l, h = _rows(l, shape), _rows(h, shape)
    P1, P2, L2 = core.P1, core.P2, core.L2

    def b(k):
        r, beta, sigma = coeffs.at(k)
        return -(P2[k] * beta + L2[k] * sigma) * 2.0 * P2[k] / (sigma * P1[k])

    def c(k):
        r, beta, sigma = coeffs.at(k)
        hk = _at(h, k)
        lever = P2[k] * beta + L2[k] * sigma
        source = (lever * (beta * phipsi.Y[k] + sigma * phipsi.Z[k] + sigma * P1[k] * hk)
                  / (sigma * sigma * P1[k]) - P2[k] * _at(l, k) - L2[k] * hk)
        return -source

    p3 = solve_linear_bsde(LinearBsdeSpec(np.zeros(grid.n_paths), b=b, c=c), grid,
                           name="P3", **kw)
    phi = np.empty(shape)
    for k in range(shape[0]):
        r, beta, sigma = coeffs.at(k)
        phi[k] = _phi_star(P1[k], P2[k], p3.Z[k], phipsi.Y[k], phipsi.Z[k], beta, sigma,
                           _at(h, k))
    return p3, phi


def assemble_p4(phipsi: BsdePair, P2, L2, p3: BsdePair) -> BsdePair:
    """``P4 = Phi + 2 P2 P3``, ``L4 = Psi + 2 L2 P3 + 2 L3 P2``."""
    Y = np.empty(p3.Y.shape)
    Z = np.empty(p3.Y.shape)
    for k in range(Y.shape[0]):
        Y[k] = phipsi.Y[k] + 2.0 * P2[k] * p3.Y[k]
        Z[k] = phipsi.Z[k] + 2.0 * L2[k] * p3.Y[k] + 2.0 * p3.Z[k] * P2[k]
    return BsdePair(Y, Z, None, "P4")


@dataclass
class EquilibriumOperator:
    """Feedback law ``u = theta (X - offset) + phi`` on a grid.

    ``offset`` is zero except for hedging, where the feedback acts on the
    claim-adjusted wealth ``X - lambda``.
    """

    theta: np.ndarray
    phi: np.ndarray
    kind: str = "general"
    offset: object = 0.0

    def control(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.theta * (X - self.offset) + self.phi

    @property
    def shape(self) -> tuple:
        return np.broadcast_shapes(np.shape(self.theta), np.shape(self.phi))


@dataclass
class RiccatiSolution:
    """All backward components of the general system.

    ``p4`` is assembled from the other pairs on every access and is not kept.
    """

    mn: BsdePair
    p1: BsdePair
    p2: BsdePair
    p3: BsdePair
    phipsi: BsdePair
    gamma: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def p4(self) -> BsdePair:
        return assemble_p4(self.phipsi, self.p2.Y, self.p2.Z, self.p3)

    def components(self) -> dict:
        """Name -> grid array, in a fixed order (used for dumps)."""
        p4 = self.p4
        return {"M": self.mn.Y, "N": self.mn.Z, "P1": self.p1.Y, "Lambda1": self.p1.Z,
                "P2": self.p2.Y, "Lambda2": self.p2.Z, "P3": self.p3.Y, "Lambda3": self.p3.Z,
                "P4": p4.Y, "Lambda4": p4.Z, "Phi": self.phipsi.Y, "Psi": self.phipsi.Z}

    def identity_violations(self) -> dict:
        """Sup-norm of each constructive identity, all expected near 0."""
        M, N = self.mn.Y, self.mn.Z
        P1, L1 = self.p1.Y, self.p1.Z
        P2, L2 = self.p2.Y, self.p2.Z
        P3, L3 = self.p3.Y, self.p3.Z
        p4 = self.p4
        out = dict.fromkeys(["P1-4/M^2", "P1-2P2^2", "L1-4P2L2", "L1+8N/M^3",
                             "P4-Phi-2P2P3", "L4-Psi-2L2P3-2L3P2"], 0.0)
        # P4 is built from the same formula it is checked against, so its rows
        # only guard the assembly against later edits
        last = M.shape[0] - 1
        for k in range(M.shape[0]):
            m = M[k]
            rows = {
                "P1-4/M^2": P1[k] - 4.0 / (m * m) if k < last else 0.0 * m,
                "P1-2P2^2": P1[k] - 2.0 * P2[k] * P2[k],
                "L1-4P2L2": L1[k] - 4.0 * P2[k] * L2[k],
                "L1+8N/M^3": L1[k] + 8.0 * N[k] / (m * m * m),
                "P4-Phi-2P2P3": p4.Y[k] - self.phipsi.Y[k] - 2.0 * P2[k] * P3[k],
                "L4-Psi-2L2P3-2L3P2": (p4.Z[k] - self.phipsi.Z[k] - 2.0 * L2[k] * P3[k]
                                       - 2.0 * L3[k] * P2[k]),
            }
            for key, v in rows.items():
                out[key] = max(out[key], float(np.max(np.abs(v))))
        return out


def theta_from_riccati(P1, L1, P2, L2, beta, sigma) -> np.ndarray:
    """Feedback coefficient written through all four of ``P1, L1, P2, L2``."""
    return -(beta * (P1 - 2.0 * P2 * P2) + sigma * (L1 - 2.0 * L2 * P2)) / (sigma * sigma * P1)


def phi_from_riccati(P1, P2, L2, P3, L3, P4, L4, beta, sigma, h) -> np.ndarray:
    """Affine term written through ``P4, L4`` instead of ``Phi, Psi``."""
    return -(beta * (P4 - 2.0 * P2 * P3) + sigma * (P1 * h + L4 - 2.0 * L2 * P3)) / (sigma * sigma * P1)


def _gap(a, b) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))


def general_equilibrium(coeffs: CoefficientPaths, grid: BrownianGrid, gamma: float, *,
                        l=None, h=None, mn: Optional[BsdePair] = None, tol: float = IDENTITY_TOL,
                        **kw):
    """Full constructive pipeline for the state equation with inhomogeneous terms.

    Returns ``(RiccatiSolution, EquilibriumOperator)``.  Both expressions of
    the operator are evaluated; ``FormulaMismatch`` is raised if they differ
    by more than ``tol`` (relative to ``max(1, |value|)``).
    """
    if coeffs.shape != grid.shape:
        raise GridMismatch(f"coefficients on {coeffs.shape}, grid is {grid.shape}")
    shape = grid.shape
    hh = _rows(h, shape)
    if mn is None:
        mn = solve_mn(coeffs, grid, **kw)
    core = build_riccati_core(mn, coeffs.sigma)
    phipsi = solve_phi_psi(core.theta, coeffs, gamma, grid, **kw)
    p3, phi = solve_p3_phi_star(core, phipsi, coeffs, grid, l=l, h=h, **kw)
    sol = RiccatiSolution(mn, BsdePair(core.P1, core.L1, None, "P1"),
                          BsdePair(core.P2, core.L2, None, "P2"), p3, phipsi, float(gamma))
    theta_gap = phi_gap = 0.0
    for k in range(shape[0]):
        r, beta, sigma = coeffs.at(k)
        P1, P2, L2 = core.P1[k], core.P2[k], core.L2[k]
        p4y = phipsi.Y[k] + 2.0 * P2 * p3.Y[k]
        p4z = phipsi.Z[k] + 2.0 * L2 * p3.Y[k] + 2.0 * p3.Z[k] * P2
        th_alt = theta_from_riccati(P1, core.L1[k], P2, L2, beta, sigma)
        ph_alt = phi_from_riccati(P1, P2, L2, p3.Y[k], p3.Z[k], p4y, p4z, beta, sigma,
                                  _at(hh, k))
        theta_gap = max(theta_gap, _gap(core.theta[k], th_alt))
        phi_gap = max(phi_gap, _gap(phi[k], ph_alt))
    if theta_gap > tol or phi_gap > tol:
        raise FormulaMismatch(
            f"operator formulas disagree: theta gap {theta_gap:.3g}, phi gap {phi_gap:.3g}")
    sol.diagnostics["theta_formula_gap"] = theta_gap
    sol.diagnostics["phi_formula_gap"] = phi_gap
    sol.diagnostics["P1_lower_bound"] = float(4.0 / np.max(np.abs(mn.Y)) ** 2)
    sol.diagnostics["P1_min"] = float(core.P1.min())
    sol.diagnostics["L2_sup_second_moment"] = float(max(
        (row * row).mean() for row in core.L2))
    if sol.diagnostics["P1_min"] < sol.diagnostics["P1_lower_bound"] * (1 - 1e-12):
        raise FormulaMismatch("P1 fell below 4 / sup M^2")
    op = EquilibriumOperator(np.broadcast_to(core.theta, shape), phi, "general")
    return sol, op


def forward_transition(coeffs: CoefficientPaths, grid: BrownianGrid, theta) -> np.ndarray:
    """Euler solution of ``dF = F (r + beta Theta) ds + sigma Theta F dW``, ``F(0) = 1``.

    Along the equilibrium this transition equals ``P2(0) / P2``.
    """
    shape = grid.shape
    theta = _rows(theta, shape)
    F = np.empty(shape)
    F[0] = 1.0
    dt = grid.dt
    for k in range(grid.n_steps):
        th = _at(theta, k)
        r, beta, sigma = coeffs.at(k)
        F[k + 1] = F[k] * (1.0 + (r + beta * th) * dt + sigma * th * grid.dW[k])
    return F
