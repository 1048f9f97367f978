"""Equilibrium variance hedging of a claim written on ``W_T``.

Hedging ``xi`` is the general problem for the shifted state ``Y = X - lambda``
with ``l = r lambda``, ``h = -zeta`` and ``gamma = 0``; the feedback therefore
acts on ``X - lambda`` (see :attr:`EquilibriumOperator.offset`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .bsde import BsdePair, EquilibriumOperator, LinearBsdeSpec, solve_linear_bsde, solve_mn
from .errors import ConfigError, NotDeterministic, UnboundedCoefficient
from .market import BrownianGrid, StatePaths, _at, as_coefficients
from .mean_variance import _time_values, first_pair_from_mn, integral_to_horizon, mv_theta
from .objective import ObjectiveEstimate, evaluate_objective


# ---------------------------------------------------------------------------
# claims
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantClaim:
    value: float
    moment_order: float = 4.0

    def __post_init__(self):
        _check_order(self.moment_order)

    def payoff(self, WT: np.ndarray) -> np.ndarray:
        return np.full(np.shape(WT), float(self.value))


@dataclass(frozen=True)
class LinearClaim:
    """``xi = intercept + slope * W_T``."""

    slope: float = 1.0
    intercept: float = 0.0
    moment_order: float = 4.0

    def __post_init__(self):
        _check_order(self.moment_order)

    def payoff(self, WT: np.ndarray) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(WT, dtype=float)


@dataclass(frozen=True)
class BoundedSmoothClaim:
    """``xi = g(W_T)`` for a smooth map clamped to ``[-bound, bound]``."""

    func: Callable[[np.ndarray], np.ndarray]
    bound: Optional[float] = None
    name: str = "custom"
    moment_order: float = 4.0

    def __post_init__(self):
        if self.bound is None or not np.isfinite(self.bound) or self.bound <= 0:
            raise UnboundedCoefficient(f"claim {self.name!r} must declare a finite positive bound")
        _check_order(self.moment_order)

    def payoff(self, WT: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(self.func(WT), dtype=float), -self.bound, self.bound)

    @classmethod
    def tanh(cls, scale: float = 1.0, rate: float = 1.0) -> "BoundedSmoothClaim":
        return cls(lambda w: scale * np.tanh(rate * w), abs(scale), f"{scale}*tanh({rate}*W_T)")


def _check_order(k: float):
    if not k > 2:
        raise ConfigError(f"claim moment order must exceed 2, got {k}")


ClaimSpec = (ConstantClaim, LinearClaim, BoundedSmoothClaim)


@dataclass
class ClaimProcesses:
    """``lambda(t) = E[xi | F_t]`` and its representation integrand ``zeta``."""

    lam: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    exact: bool = False

    def drift_residuals(self, grid: BrownianGrid, **kw) -> np.ndarray:
        """Regression estimate of ``sup_w |E[lambda_{k+1} - lambda_k | W_k]|`` per step."""
        from .regression import conditional_expectation

        out = np.empty(grid.n_steps)
        for k in range(grid.n_steps):
            lam_k = np.broadcast_to(self.lam[k], (grid.n_paths,))
            lam_next = np.broadcast_to(self.lam[k + 1], (grid.n_paths,))
            out[k] = np.abs(conditional_expectation(lam_next - lam_k, grid.W[k], **kw)).max()
        return out


def claim_processes(claim, grid: BrownianGrid, **kw) -> ClaimProcesses:
    """Martingale ``lambda`` and integrand ``zeta`` of ``xi = g(W_T)``.

    Constant and linear claims use their exact representations; a bounded
    smooth claim is solved as a driverless BSDE.
    """
    WT = grid.W[-1]
    xi = claim.payoff(WT)
    if isinstance(claim, ConstantClaim):
        c = float(claim.value)
        return ClaimProcesses(np.full((1, 1), c), np.zeros((1, 1)), xi, True)
    if isinstance(claim, LinearClaim):
        lam = claim.intercept + claim.slope * grid.W
        return ClaimProcesses(lam, np.full((1, 1), float(claim.slope)), xi, True)
    if isinstance(claim, BoundedSmoothClaim):
        pair = solve_linear_bsde(LinearBsdeSpec(xi), grid, name="lambda", **kw)
        return ClaimProcesses(pair.Y, pair.Z, xi, False)
    raise ConfigError(f"unsupported claim type {type(claim).__name__}")


def claim_oracle(claim, T: float):
    """Gaussian quadrature values ``(E[xi], E[xi W_T] / T)`` at ``t = 0``."""
    sd = np.sqrt(T)

    def dens(w):
        return np.exp(-0.5 * (w / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))

    lim = 12.0 * sd
    mean = integrate.quad(lambda w: float(claim.payoff(np.array(w))) * dens(w), -lim, lim,
                          epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    cov = integrate.quad(lambda w: float(claim.payoff(np.array(w))) * w * dens(w), -lim, lim,
                         epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return mean, cov / T


# ---------------------------------------------------------------------------
# equilibrium
# ---------------------------------------------------------------------------


@dataclass
class HedgingEquilibrium:
    sp1: BsdePair
    sp2: BsdePair
    operator: EquilibriumOperator
    claim: ClaimProcesses
    mn: BsdePair = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    def strategy(self, state: StatePaths) -> np.ndarray:
        """``pi* = Theta* (X - lambda) + phi*`` along the given wealth paths."""
        return self.operator.control(state.values)


def solve_hedging_equilibrium(scenario, claim, grid: BrownianGrid, *,
                              mn: Optional[BsdePair] = None,
                              processes: Optional[ClaimProcesses] = None,
                              **kw) -> HedgingEquilibrium:
    """Solve the hedging system and assemble the feedback operator.

    ``phi* = -sL2 / (sigma sP1) + zeta / sigma`` and ``Theta*`` is the
    mean-variance feedback coefficient.  The returned operator carries
    ``offset = lambda``.
    """
    coeffs = as_coefficients(scenario, grid)
    if processes is None:
        processes = claim_processes(claim, grid, **kw)
    if mn is None:
        mn = solve_mn(coeffs, grid, **kw)
    sp1 = first_pair_from_mn(mn)
    P, L = sp1.Y, sp1.Z
    lam, zeta = processes.lam, processes.zeta

    def b(k):
        r, beta, sigma = coeffs.at(k)
        return -(beta / sigma + L[k] / P[k])

    def c(k):
        r, beta, sigma = coeffs.at(k)
        return P[k] * (r * _at(lam, k) + beta / sigma * _at(zeta, k))

    sp2 = solve_linear_bsde(LinearBsdeSpec(np.zeros(grid.n_paths), b=b, c=c), grid,
                            name="hP2", **kw)
    theta = mv_theta(sp1, coeffs.sigma)
    phi = np.empty(grid.shape)
    for k in range(phi.shape[0]):
        sigma = coeffs.at(k)[2]
        phi[k] = -sp2.Z[k] / (sigma * P[k]) + _at(zeta, k) / sigma
    op = EquilibriumOperator(theta, phi, "hedging", offset=lam)
    diag = {"sup_abs_theta": float(np.abs(theta).max()),
            "sup_abs_phi": float(np.abs(phi).max()),
            "phi0_mean": float(phi[0].mean())}
    return HedgingEquilibrium(sp1, sp2, op, processes, mn, diag)


def hedging_objective_reduction(state: StatePaths, xi: np.ndarray, conditioning=None,
                                **kw) -> ObjectiveEstimate:
    """Estimate of ``Var_t[xi - X(T)]``; plain sample variance when unconditioned."""
    return evaluate_objective("hedging", state.terminal, claim=xi,
                              conditioning=conditioning, **kw)


def shifted_state(state: StatePaths, processes: ClaimProcesses) -> np.ndarray:
    """``Y = X - lambda``, whose terminal value is ``X(T) - xi``."""
    return state.values - processes.lam


def hedging_closed_form_phi(scenario, claim, times) -> np.ndarray:
    """``phi*(t) = slope exp(-int_t^T r) / sigma(t)`` for a linear claim.

    Valid when ``r`` and ``sigma`` are deterministic and ``b = r`` (zero
    excess return), where ``Theta* = 0`` and the hedge reduces to a
    discounted delta.
    """
    if not isinstance(claim, LinearClaim):
        raise ConfigError("closed-form hedge needs a linear claim")
    if not scenario.deterministic:
        raise NotDeterministic("closed-form hedge needs deterministic coefficients")
    times = np.asarray(getattr(times, "times", times), dtype=float)
    beta = _time_values(scenario.b, times) - _time_values(scenario.r, times)
    if np.abs(beta).max() > 0.0:
        raise ConfigError("closed-form hedge needs b = r")
    disc = np.exp(-integral_to_horizon(scenario.r, times, scenario.T))
    return claim.slope * disc / _time_values(scenario.sigma, times)
