"""Monte Carlo checks of the equilibrium property.

Two kinds of evidence are produced.  The auxiliary pair ``(Y', Z')`` and its
diagonal are assembled from a Riccati solution and checked algebraically.
The perturbation quotient

    [J(u^{v,eps}; t, X*(t)) - J(u*; t, X*(t))] / eps

is estimated by simulating the spiked and unspiked states on common noise.
It splits into a first-order term, which must vanish as ``eps -> 0`` for an
equilibrium, and a conditional variance, which is never negative.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bsde import BsdePair, EquilibriumOperator, RiccatiSolution
from .errors import GridMismatch, InsufficientPaths
from .market import BrownianGrid, PerturbationSpec, StatePaths, _at, _rows, as_coefficients
from .objective import ObjectiveEstimate, evaluate_objective  # noqa: F401  (re-export)
from .regression import DEFAULT_DEGREE, DEFAULT_RIDGE, Projector, polynomial_basis

KINDS = ("mean-variance", "hedging", "general")
DEFAULT_LADDER = (1.0, 0.5, 0.25)


# ---------------------------------------------------------------------------
# Riccati views
# ---------------------------------------------------------------------------


def riccati_view(solution) -> RiccatiSolution:
    """General-system components from a general or a mean-variance solution.

    The mean-variance pairs map as ``P1 = 2 sP1^2``, ``L1 = 4 sP1 sL1``,
    ``(P2, L2) = (sP1, sL1)``, ``(P3, L3) = (sP3, sL3)`` and
    ``(Phi, Psi) = (sP2, sL2)``.
    """
    if isinstance(solution, RiccatiSolution):
        return solution
    if all(hasattr(solution, a) for a in ("sp1", "sp2", "sp3")):
        P, L = solution.sp1.Y, solution.sp1.Z
        p1 = BsdePair(2.0 * P * P, 4.0 * P * L, None, "P1")
        return RiccatiSolution(solution.mn, p1, solution.sp1, solution.sp3, solution.sp2,
                               float(solution.gamma))
    raise TypeError(f"cannot read Riccati components from {type(solution).__name__}")


def _p4_row(sol: RiccatiSolution, k: int):
    P2, L2 = sol.p2.Y[k], sol.p2.Z[k]
    P3, L3 = sol.p3.Y[k], sol.p3.Z[k]
    return (sol.phipsi.Y[k] + 2.0 * P2 * P3,
            sol.phipsi.Z[k] + 2.0 * L2 * P3 + 2.0 * L3 * P2)


# ---------------------------------------------------------------------------
# auxiliary pair and diagonal identity
# ---------------------------------------------------------------------------


@dataclass
class AuxiliaryPair:
    """``(Y'(s, t), Z'(s, t))`` for ``s >= t`` and the diagonal ``(Y'(s, s), Z'(s, s))``.

    ``Y`` and ``Z`` have one row per node from the anchor to ``T``;
    ``diagY`` and ``diagZ`` cover the whole grid.
    """

    anchor: int
    Y: np.ndarray
    Z: np.ndarray
    diagY: np.ndarray
    diagZ: np.ndarray
    cond: np.ndarray = field(repr=False, default=None)
    inner: np.ndarray = field(repr=False, default=None)
    L2: np.ndarray = field(repr=False, default=None)
    P2: np.ndarray = field(repr=False, default=None)
    projector: Projector = field(repr=False, default=None)


def _cond_projector(grid: BrownianGrid, state: StatePaths, j: int, degree: int, ridge: float):
    basis, _ = polynomial_basis([grid.W[j], state.values[j]], degree)
    return Projector(basis, ridge)


def build_auxiliary_pair(riccati, state: StatePaths, coeffs, grid: BrownianGrid, t: float, *,
                         operator: Optional[EquilibriumOperator] = None, h=None,
                         degree: int = DEFAULT_DEGREE,
                         ridge: float = DEFAULT_RIDGE) -> AuxiliaryPair:
    """Assemble the auxiliary pair anchored at ``t``.

    ``E_t`` is a regression on ``(W_t, X*(t))``; at ``t = 0`` it is a plain
    average.  ``operator`` supplies ``(Theta*, phi*)`` and is required.
    """
    sol = riccati_view(riccati)
    coeffs = as_coefficients(coeffs, grid)
    if state.values.shape != grid.shape or sol.mn.Y.shape != grid.shape:
        raise GridMismatch("state, Riccati solution and grid must share one shape")
    if operator is None:
        raise ValueError("operator is required")
    j = grid.index_of(t)
    n = grid.n_steps
    hh = _rows(h, grid.shape)
    theta, phi = _rows(operator.theta, grid.shape), _rows(operator.phi, grid.shape)
    proj = _cond_projector(grid, state, j, degree, ridge)
    rows = n - j + 1
    Y = np.empty((rows, grid.n_paths))
    Z = np.empty((rows, grid.n_paths))
    cond = np.empty((rows, grid.n_paths))
    inners = np.empty((rows, grid.n_paths))
    dY = np.empty(grid.shape)
    dZ = np.empty(grid.shape)
    for k in range(n + 1):
        X = state.values[k]
        P1, L1 = sol.p1.Y[k], sol.p1.Z[k]
        P2, L2 = sol.p2.Y[k], sol.p2.Z[k]
        P3 = sol.p3.Y[k]
        P4, L4 = _p4_row(sol, k)
        sigma = coeffs.at(k)[2]
        th, ph, hk = _at(theta, k), _at(phi, k), _at(hh, k)
        inner = P2 * X + P3
        common_z = (P1 * sigma * th + L1) * X + P1 * sigma * ph + P1 * hk + L4
        dY[k] = P1 * X - 2.0 * P2 * inner + P4
        dZ[k] = -2.0 * L2 * inner + common_z
        if k >= j:
            e = proj.project(inner)
            cond[k - j] = e
            inners[k - j] = inner
            Y[k - j] = P1 * X - 2.0 * P2 * e + P4
            Z[k - j] = -2.0 * L2 * e + common_z
    return AuxiliaryPair(j, Y, Z, dY, dZ, cond, inners, sol.p2.Z[j:], sol.p2.Y[j:], proj)


@dataclass
class DiagonalReport:
    """Sup-norms of ``beta Y'(s, s) + sigma Z'(s, s)``.

    ``expansion`` uses the grouped form (coefficient of ``X*`` plus the
    remainder); ``direct`` adds ``beta Y' + sigma Z'`` term by term.
    """

    expansion: np.ndarray
    direct: np.ndarray

    @property
    def sup(self) -> float:
        return float(self.expansion.max())

    @property
    def sup_direct(self) -> float:
        return float(self.direct.max())


def diagonal_identity_check(riccati, state: StatePaths, coeffs, grid: BrownianGrid, *,
                            operator: EquilibriumOperator, h=None) -> DiagonalReport:
    """Node-wise sup of ``beta Y'(s, s) + sigma Z'(s, s)``, expected to be 0.

    Passing an operator obtained from another solve of the same system makes
    this a cross-check between the two solves.
    """
    sol = riccati_view(riccati)
    coeffs = as_coefficients(coeffs, grid)
    hh = _rows(h, grid.shape)
    theta, phi = _rows(operator.theta, grid.shape), _rows(operator.phi, grid.shape)
    expansion = np.empty(grid.shape[0])
    direct = np.empty(grid.shape[0])
    for k in range(grid.shape[0]):
        X = state.values[k]
        r, beta, sigma = coeffs.at(k)
        P1, L1 = sol.p1.Y[k], sol.p1.Z[k]
        P2, L2 = sol.p2.Y[k], sol.p2.Z[k]
        P3 = sol.p3.Y[k]
        P4, L4 = _p4_row(sol, k)
        th, ph, hk = _at(theta, k), _at(phi, k), _at(hh, k)
        slope = beta * (P1 - 2.0 * P2 * P2) + sigma * (-2.0 * L2 * P2 + P1 * sigma * th + L1)
        rest = (beta * (-2.0 * P2 * P3 + P4)
                + sigma * (-2.0 * L2 * P3 + P1 * sigma * ph + P1 * hk + L4))
        expansion[k] = np.abs(slope * X + rest).max()
        inner = P2 * X + P3
        dY = P1 * X - 2.0 * P2 * inner + P4
        dZ = -2.0 * L2 * inner + (P1 * sigma * th + L1) * X + P1 * sigma * ph + P1 * hk + L4
        direct[k] = np.abs(beta * dY + sigma * dZ).max()
    return DiagonalReport(expansion, direct)


@dataclass
class RecursionReport:
    """Per-step path-average of the one-step residual of ``Y'`` and its SE."""

    anchor: int
    mean: np.ndarray
    se: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.abs(self.mean) / np.where(self.se > 0, self.se, np.inf)

    def within(self, n_se: float = 3.0, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.mean) <= n_se * self.se + atol))


def recursion_residuals(pair: AuxiliaryPair, coeffs, grid: BrownianGrid,
                        operator: EquilibriumOperator) -> RecursionReport:
    """Replay ``Y'_{k+1} - Y'_k = -[(r + beta Theta) Y'_k + Theta sigma Z'_k] dt + Z'_k dW_k``.

    The one-step residual is a martingale increment plus discretisation
    error, so its path-average should sit within a few standard errors of 0.

    ``Y'`` contains the estimate of ``E_t[P2 X* + P3]``, which is shared by
    all paths.  Its sampling noise is carried into the standard error by
    the delta method: the residual is linear in the fitted values, and a
    least-squares fit is self-adjoint, so ``mean(c * fit(q)) = mean(fit(c) * q)``
    gives a per-path summand with the same mean.
    """
    coeffs = as_coefficients(coeffs, grid)
    theta = _rows(operator.theta, grid.shape)
    j, n, dt = pair.anchor, grid.n_steps, grid.dt
    mean = np.zeros(n - j)
    se = np.zeros(n - j)
    proj = pair.projector
    for k in range(j, n):
        i = k - j
        r, beta, sigma = coeffs.at(k)
        th = _at(theta, k)
        y, z = pair.Y[i], pair.Z[i]
        dW = grid.dW[k]
        res = pair.Y[i + 1] - y + ((r + beta * th) * y + th * sigma * z) * dt - z * dW
        # sensitivities of the residual to the fitted E_t values at k and k + 1
        c_now = 2.0 * pair.P2[i] * (1.0 - (r + beta * th) * dt) - 2.0 * pair.L2[i] * (th * sigma * dt - dW)
        c_next = -2.0 * pair.P2[i + 1]
        psi = (res - c_now * pair.cond[i] - c_next * pair.cond[i + 1]
               + proj.project(np.broadcast_to(c_now, dW.shape)) * pair.inner[i]
               + proj.project(np.broadcast_to(c_next, dW.shape)) * pair.inner[i + 1])
        mean[i] = res.mean()
        se[i] = psi.std(ddof=1) / np.sqrt(psi.size)
    return RecursionReport(j, mean, se)


# ---------------------------------------------------------------------------
# perturbation quotient
# ---------------------------------------------------------------------------


def _cols(arr, paths):
    arr = np.asarray(arr, dtype=float)
    if paths is None or arr.ndim == 0 or arr.shape[-1] == 1:
        return arr
    return arr[..., paths]


class _Forward:
    """Streaming Euler recursion of the controlled wealth on a subset of paths."""

    def __init__(self, coeffs, grid: BrownianGrid, operator: EquilibriumOperator, *,
                 l=None, h=None, paths=None):
        shape = grid.shape
        self.grid, self.coeffs, self.paths = grid, coeffs, paths
        self.theta = _cols(_rows(operator.theta, shape), paths)
        self.phi = _cols(_rows(operator.phi, shape), paths)
        self.offset = _cols(_rows(operator.offset, shape), paths)
        self.l = _cols(_rows(l, shape), paths)
        self.h = _cols(_rows(h, shape), paths)
        self.dW = grid.dW if paths is None else grid.dW[:, paths]
        self.W = grid.W if paths is None else grid.W[:, paths]

    def coef(self, k):
        r, beta, sigma = self.coeffs.at(k)
        return _cols(r, self.paths), _cols(beta, self.paths), _cols(sigma, self.paths)

    def run(self, x, k0: int, k1: int, spike=None):
        dt = self.grid.dt
        x = np.array(x, dtype=float, copy=True)
        for k in range(k0, k1):
            r, beta, sigma = self.coef(k)
            u = _at(self.theta, k) * (x - _at(self.offset, k)) + _at(self.phi, k)
            if spike is not None and spike[0] <= k < spike[1]:
                u = u + spike[2]
            x = x + (r * x + beta * u + _at(self.l, k)) * dt + (sigma * u + _at(self.h, k)) * self.dW[k]
        if not np.all(np.isfinite(x)):
            from .errors import NonFinite
            raise NonFinite("wealth paths diverged during a perturbation probe")
        return x


def ladder_weights(eps: Sequence[float]) -> np.ndarray:
    """Weights giving the intercept at ``eps = 0`` of the least-squares line."""
    e = np.asarray(eps, dtype=float)
    if e.size == 1:
        return np.ones(1)
    design = np.column_stack([np.ones_like(e), e])
    return np.linalg.pinv(design)[0]


def _cv_adjust(q: np.ndarray, cvs: Optional[np.ndarray], ridge: float):
    """Regression-adjusted control-variate mean of ``q`` and its standard error.

    ``cvs`` rows have exactly zero expectation.
    """
    n = q.size
    if cvs is None or cvs.shape[0] == 0:
        return float(q.sum() / n), float(q.std(ddof=1) / np.sqrt(n))
    basis = np.vstack([np.ones(n), cvs])
    proj = Projector(basis, ridge)
    coef = proj.coef(q)
    adj = q - proj.evaluate(np.concatenate([[0.0], coef[1:]]), basis)
    return float(adj.sum() / n), float(adj.std(ddof=1) / np.sqrt(n))


def _spread(x) -> bool:
    x = np.asarray(x)
    return x.size > 1 and float(x.std()) > 1e-12 * max(1.0, float(np.abs(x).max()))


@dataclass
class QuotientReport:
    """Perturbation quotient at one probe ``(t, v)`` over an ``eps`` ladder.

    Arrays are indexed like ``eps``; the ``*_extrap`` values are the
    least-squares intercepts at ``eps = 0`` (computed path by path, so their
    standard errors include the correlation between rungs).
    """

    t: float
    node: int
    eps: np.ndarray
    amount: str
    first: np.ndarray
    first_se: np.ndarray
    second: np.ndarray
    second_se: np.ndarray
    total: np.ndarray
    total_se: np.ndarray
    first_extrap: float
    first_extrap_se: float
    second_extrap: float
    second_extrap_se: float
    total_extrap: float
    total_extrap_se: float
    n_paths: int
    n_se: float = 3.0

    @property
    def total_ok(self) -> bool:
        return self.total_extrap >= -self.n_se * self.total_extrap_se

    @property
    def first_ok(self) -> bool:
        return abs(self.first_extrap) <= self.n_se * self.first_extrap_se

    @property
    def passed(self) -> bool:
        return self.total_ok and self.first_ok

    @property
    def z_total(self) -> float:
        return self.total_extrap / self.total_extrap_se if self.total_extrap_se > 0 else (
            0.0 if self.total_extrap == 0 else np.copysign(np.inf, self.total_extrap))

    def row(self) -> dict:
        return {"t": self.t, "amount": self.amount, "first": self.first_extrap,
                "first_se": self.first_extrap_se, "second": self.second_extrap,
                "second_se": self.second_extrap_se, "total": self.total_extrap,
                "total_se": self.total_extrap_se, "z_total": self.z_total,
                "first_ok": self.first_ok, "total_ok": self.total_ok}


def _check_kind(kind: str):
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def perturbation_quotient(scenario, operator: EquilibriumOperator, pert: PerturbationSpec,
                          grid: BrownianGrid, kind: str, *, x0: float = 1.0,
                          gamma: float = 0.0, xi=None, l=None, h=None,
                          ladder: Optional[Sequence[float]] = DEFAULT_LADDER,
                          control_variates: bool = True, paths=None,
                          precision: Optional[float] = None, n_se: float = 3.0,
                          degree: int = DEFAULT_DEGREE, ridge: float = DEFAULT_RIDGE,
                          _star=None) -> QuotientReport:
    """Estimate the perturbation quotient for one probe.

    The spike lengths are ``pert.eps * ladder`` (snapped to whole steps).
    ``kind="hedging"`` measures ``Var_t[xi - X(T)]`` and needs the claim
    samples ``xi``; the other kinds use ``Var_t[X(T)] - gamma E_t[X(T)]``.
    ``paths`` optionally restricts the estimate to a slice of paths.
    Raises ``InsufficientPaths`` if the extrapolated standard error exceeds
    ``precision``.
    """
    _check_kind(kind)
    coeffs = as_coefficients(scenario, grid)
    if kind == "hedging":
        if xi is None:
            raise ValueError("hedging probes need claim samples xi")
        gamma = 0.0
    fwd = _Forward(coeffs, grid, operator, l=l, h=h, paths=paths)
    n = grid.n_steps
    j = grid.index_of(pert.t)
    ladder = (1.0,) if ladder is None else tuple(ladder)
    specs = [PerturbationSpec(pert.t, pert.eps * f, pert.amount, pert.clamp) for f in ladder]
    snaps = [s.snap(grid) for s in specs]
    if _star is None:
        x_t = fwd.run(np.full(fwd.W.shape[1], float(x0)), 0, j)
        x_T = fwd.run(x_t, j, n)
    else:
        x_t, x_T = _star
    W = fwd.W
    v = _cols(specs[0].values(grid), paths)
    A = x_T - (_cols(xi, paths) if kind == "hedging" else 0.0)
    proj = Projector(polynomial_basis([W[j], x_t], degree)[0], ridge)
    centred = A - proj.project(A)
    cvs = []
    firsts, seconds, eps_eff = [], [], []
    for (jj, m) in snaps:
        x1 = fwd.run(x_t, j, n, spike=(j, j + m, v)) - x_T
        e = m * grid.dt
        eps_eff.append(e)
        firsts.append((2.0 * centred - gamma) * x1 / e)
        seconds.append((x1 - proj.project(x1)) * x1 / e)
        if control_variates:
            d = W[j + m] - W[j]
            cvs.extend([d, d * d - e, d * (W[n] - W[j + m])])
            if _spread(W[j]):
                cvs.extend([d * W[j], d * W[j] * W[j]])
            if _spread(x_t):
                cvs.append(d * x_t)
    C = np.array(cvs) if cvs else None
    w = ladder_weights(eps_eff)
    stats = {}
    for name, series in (("first", firsts), ("second", seconds)):
        per = [_cv_adjust(q, C, ridge) for q in series]
        comb = sum(wi * q for wi, q in zip(w, series))
        stats[name] = (np.array([p[0] for p in per]), np.array([p[1] for p in per]),
                       _cv_adjust(comb, C, ridge))
    totals = [f + s for f, s in zip(firsts, seconds)]
    per_t = [_cv_adjust(q, C, ridge) for q in totals]
    tot_ext = _cv_adjust(sum(wi * q for wi, q in zip(w, totals)), C, ridge)
    if pert.clamp is None:
        desc = f"{pert.amount:g}"
    else:
        desc = f"{pert.amount:g}*clip(W_t,{pert.clamp:g})"
    rep = QuotientReport(
        float(grid.times[j]), j, np.array(eps_eff), desc,
        stats["first"][0], stats["first"][1], stats["second"][0], stats["second"][1],
        np.array([p[0] for p in per_t]), np.array([p[1] for p in per_t]),
        stats["first"][2][0], stats["first"][2][1], stats["second"][2][0], stats["second"][2][1],
        tot_ext[0], tot_ext[1], int(A.size), n_se)
    if precision is not None and rep.total_extrap_se > precision:
        raise InsufficientPaths(
            f"quotient standard error {rep.total_extrap_se:.3g} exceeds {precision:.3g}")
    return rep


# ---------------------------------------------------------------------------
# probe suite
# ---------------------------------------------------------------------------


@dataclass
class VerificationReport:
    """All probes of one operator, plus the adaptive probe when requested."""

    probes: list
    adaptive: Optional[QuotientReport] = None
    adaptive_amount: Optional[float] = None

    @property
    def all_reports(self) -> list:
        return self.probes + ([self.adaptive] if self.adaptive is not None else [])

    @property
    def total_ok(self) -> bool:
        return all(p.total_ok for p in self.all_reports)

    @property
    def first_ok(self) -> bool:
        return all(p.first_ok for p in self.probes)

    @property
    def passed(self) -> bool:
        return self.total_ok and self.first_ok

    @property
    def min_z(self) -> float:
        return float(min(p.z_total for p in self.all_reports))

    def rejects(self, n_se: float = 5.0) -> bool:
        """True if some probe has quotient below ``-n_se`` standard errors."""
        return self.min_z < -n_se


def probe_times(T: float) -> tuple:
    return (0.0, T / 4.0, T / 2.0)


def run_probe_suite(scenario, operator: EquilibriumOperator, grid: BrownianGrid, kind: str, *,
                    x0: float = 1.0, gamma: float = 0.0, xi=None, l=None, h=None,
                    times: Optional[Sequence[float]] = None,
                    amounts: Sequence[float] = (1.0, -1.0, 5.0, -5.0),
                    eps: Optional[float] = None, ladder=DEFAULT_LADDER,
                    adaptive: bool = False, pilot_fraction: float = 0.25,
                    amount_bound: float = 5.0, n_se: float = 3.0,
                    **kw) -> VerificationReport:
    """Probe ``(t, v)`` over ``times x amounts`` with the ``eps`` ladder.

    With ``adaptive=True`` an extra constant probe targets the most
    unfavourable amount.  For a constant ``v`` the quotient is ``a v + c v^2``
    with ``c >= 0``, minimal at ``v = -a / (2c)``.  ``a`` and ``c`` are
    estimated on the first ``pilot_fraction`` of the paths at the time with
    the largest ``|a|``, and the probe is evaluated on the remaining paths.
    """
    _check_kind(kind)
    coeffs = as_coefficients(scenario, grid)
    T = grid.T
    times = probe_times(T) if times is None else tuple(times)
    eps = 0.1 * T if eps is None else eps
    common = dict(x0=x0, gamma=gamma, xi=xi, l=l, h=h, ladder=ladder, n_se=n_se, **kw)
    fwd = _Forward(coeffs, grid, operator, l=l, h=h)
    probes = []
    for t in times:
        j = grid.index_of(t)
        x_t = fwd.run(np.full(grid.n_paths, float(x0)), 0, j)
        star = (x_t, fwd.run(x_t, j, grid.n_steps))
        for a in amounts:
            probes.append(perturbation_quotient(coeffs, operator, PerturbationSpec(t, eps, a),
                                                grid, kind, _star=star, **common))
    report = VerificationReport(probes)
    if adaptive:
        split = max(2, int(round(pilot_fraction * grid.n_paths)))
        pilot, rest = slice(0, split), slice(split, grid.n_paths)
        best = None
        for t in times:
            rep = perturbation_quotient(coeffs, operator, PerturbationSpec(t, eps, 1.0), grid,
                                        kind, paths=pilot, **common)
            a, c = rep.first_extrap, rep.second_extrap
            if best is None or abs(a) > abs(best[1]):
                best = (t, a, c)
        t, a, c = best
        amount = float(np.clip(-a / (2.0 * c), -amount_bound, amount_bound)) if c > 0 else 0.0
        if amount != 0.0:
            report.adaptive = perturbation_quotient(coeffs, operator,
                                                    PerturbationSpec(t, eps, amount), grid,
                                                    kind, paths=rest, **common)
            report.adaptive_amount = amount
    return report


def scaled_operator(operator: EquilibriumOperator, phi_scale: float = 2.0) -> EquilibriumOperator:
    """The same feedback with ``phi`` multiplied by ``phi_scale`` (for power checks)."""
    return EquilibriumOperator(operator.theta, operator.phi * phi_scale,
                               f"{operator.kind}-phi-x{phi_scale:g}", operator.offset)
