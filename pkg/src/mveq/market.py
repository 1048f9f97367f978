"""Market scenarios, Brownian ensembles and forward wealth dynamics.

All grid-valued arrays in this package are *time-major*: ``values[k]`` holds
the cross-section of every path at node ``t_k``, so an array of per-path,
per-node values has shape ``(n_steps + 1, n_paths)``.  Coefficients that do
not vary across paths (or in time) are kept in compact broadcastable form,
``(n_steps + 1, 1)`` or ``(1, 1)``, and expanded with zero-stride views.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import (
    ConfigError,
    FloorViolation,
    GridMismatch,
    NonFinite,
    UnboundedCoefficient,
)

ArrayLike = Union[float, np.ndarray]

# Probe values of W used to check floors/bounds before any simulation.
_PROBE_W = np.linspace(-12.0, 12.0, 4801)


# ---------------------------------------------------------------------------
# coefficient specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """A coefficient that is the same number on every path and node."""

    value: float

    deterministic = True

    @property
    def bound(self) -> float:
        return abs(float(self.value))

    def evaluate(self, times: np.ndarray, W: np.ndarray) -> np.ndarray:
        return np.full((1, 1), float(self.value))


@dataclass(frozen=True)
class TimeFunction:
    """A deterministic coefficient given by samples, linearly interpolated.

    Parameters
    ----------
    knots : array of increasing times
    values : coefficient values at ``knots``
    """

    knots: tuple
    values: tuple

    deterministic = True

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 1:
            raise ConfigError("TimeFunction needs equally long 1-d knots and values")
        if np.any(np.diff(knots) <= 0):
            raise ConfigError("TimeFunction knots must be strictly increasing")
        object.__setattr__(self, "knots", tuple(knots.tolist()))
        object.__setattr__(self, "values", tuple(values.tolist()))

    @classmethod
    def from_callable(cls, func: Callable[[np.ndarray], np.ndarray], T: float,
                      n_knots: int = 1001) -> "TimeFunction":
        knots = np.linspace(0.0, T, n_knots)
        return cls(tuple(knots), tuple(np.asarray(func(knots), dtype=float)))

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.values)))

    def evaluate(self, times: np.ndarray, W: np.ndarray) -> np.ndarray:
        return np.interp(times, self.knots, self.values)[:, None]


@dataclass(frozen=True)
class BrownianFunction:
    """A coefficient ``f(W_t)`` for a bounded scalar map ``f``.

    Values are clamped to ``[-bound, bound]``; the bound is mandatory.
    """

    func: Callable[[np.ndarray], np.ndarray]
    bound: Optional[float] = None
    name: str = "custom"

    deterministic = False

    def __post_init__(self):
        if self.bound is None or not np.isfinite(self.bound) or self.bound < 0:
            raise UnboundedCoefficient(
                f"Brownian coefficient {self.name!r} must declare a finite non-negative bound")

    def evaluate(self, times: np.ndarray, W: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.func(W), dtype=float)
        return np.clip(vals, -self.bound, self.bound)

    @classmethod
    def tanh(cls, level: float, scale: float, rate: float = 1.0,
             bound: Optional[float] = None) -> "BrownianFunction":
        """``level + scale * tanh(rate * W)``."""
        if bound is None:
            bound = abs(level) + abs(scale)
        return cls(lambda w: level + scale * np.tanh(rate * w), bound,
                   f"{level}+{scale}*tanh({rate}*W)")

    @classmethod
    def sin(cls, level: float, scale: float, rate: float = 1.0,
            bound: Optional[float] = None) -> "BrownianFunction":
        """``level + scale * sin(rate * W)``."""
        if bound is None:
            bound = abs(level) + abs(scale)
        return cls(lambda w: level + scale * np.sin(rate * w), bound,
                   f"{level}+{scale}*sin({rate}*W)")

    @classmethod
    def cos(cls, level: float, scale: float, rate: float = 1.0,
            bound: Optional[float] = None) -> "BrownianFunction":
        """``level + scale * cos(rate * W)``."""
        if bound is None:
            bound = abs(level) + abs(scale)
        return cls(lambda w: level + scale * np.cos(rate * w), bound,
                   f"{level}+{scale}*cos({rate}*W)")

    @classmethod
    def clip(cls, level: float, scale: float, limit: float,
             bound: Optional[float] = None) -> "BrownianFunction":
        """``level + scale * clip(W, -limit, limit)``."""
        if bound is None:
            bound = abs(level) + abs(scale) * limit
        return cls(lambda w: level + scale * np.clip(w, -limit, limit), bound,
                   f"{level}+{scale}*clip(W,{limit})")


CoefficientSpec = Union[Constant, TimeFunction, BrownianFunction]


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketScenario:
    """Interest rate, appreciation rate and volatility on ``[0, T]``.

    ``claim`` is an optional :class:`mveq.hedging.ClaimSpec` used by the
    hedging problem.
    """

    r: CoefficientSpec
    b: CoefficientSpec
    sigma: CoefficientSpec
    T: float = 1.0
    sigma_floor: float = 1e-4
    claim: Optional[object] = None

    @property
    def r_deterministic(self) -> bool:
        return self.r.deterministic

    @property
    def deterministic(self) -> bool:
        return self.r.deterministic and self.b.deterministic and self.sigma.deterministic


def _probe_values(spec: CoefficientSpec, T: float) -> np.ndarray:
    times = np.linspace(0.0, T, 201)
    if isinstance(spec, BrownianFunction):
        return spec.evaluate(times[:1], _PROBE_W[None, :])
    return np.broadcast_to(spec.evaluate(times, None), (times.size, 1))


def build_scenario(r: CoefficientSpec, b: CoefficientSpec, sigma: CoefficientSpec,
                   T: float = 1.0, sigma_floor: float = 1e-4, claim=None) -> MarketScenario:
    """Validate coefficient specs and return a :class:`MarketScenario`.

    Raises
    ------
    FloorViolation
        if ``sigma**2 < sigma_floor`` at any probe point.
    UnboundedCoefficient
        if a Brownian-driven coefficient has no bound.
    """
    if not T > 0:
        raise ConfigError(f"horizon T must be positive, got {T}")
    if not sigma_floor > 0:
        raise ConfigError(f"sigma_floor must be positive, got {sigma_floor}")
    for name, spec in (("r", r), ("b", b), ("sigma", sigma)):
        if not isinstance(spec, (Constant, TimeFunction, BrownianFunction)):
            raise ConfigError(f"coefficient {name} has unsupported spec {spec!r}")
        if isinstance(spec, BrownianFunction) and spec.bound is None:
            raise UnboundedCoefficient(name)
        vals = _probe_values(spec, T)
        if not np.all(np.isfinite(vals)):
            raise ConfigError(f"coefficient {name} is not finite on the probe grid")
    sig = _probe_values(sigma, T)
    if np.min(sig ** 2) < sigma_floor:
        raise FloorViolation(
            f"sigma^2 = {np.min(sig ** 2):.3g} below floor {sigma_floor:.3g}")
    return MarketScenario(r, b, sigma, float(T), float(sigma_floor), claim)


# ---------------------------------------------------------------------------
# Brownian grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BrownianGrid:
    """Seeded ensemble of Brownian paths on a uniform grid.

    ``dW`` has shape ``(n_steps, n_paths)`` and ``W`` ``(n_steps + 1, n_paths)``.
    """

    times: np.ndarray
    dW: np.ndarray
    W: np.ndarray
    seed: Optional[int] = None

    @property
    def n_steps(self) -> int:
        return self.dW.shape[0]

    @property
    def n_paths(self) -> int:
        return self.dW.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def shape(self) -> tuple:
        return (self.n_steps + 1, self.n_paths)

    def index_of(self, t: float) -> int:
        """Grid node closest to ``t``."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps:
            raise ValueError(f"time {t} outside [0, {self.T}]")
        return k

    def same_as(self, other: "BrownianGrid") -> bool:
        return (self.shape == other.shape and np.array_equal(self.times, other.times)
                and (self.dW is other.dW or np.array_equal(self.dW, other.dW)))


def simulate_brownian(n_paths: int, n_steps: int, T: float = 1.0,
                      seed: Optional[int] = None) -> BrownianGrid:
    """Draw a Brownian ensemble; the result is a pure function of the arguments."""
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be at least 1")
    if not T > 0:
        raise ValueError("T must be positive")
    dt = T / n_steps
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((n_steps, n_paths))
    dW *= np.sqrt(dt)
    W = np.empty((n_steps + 1, n_paths))
    W[0] = 0.0
    np.cumsum(dW, axis=0, out=W[1:])
    times = np.linspace(0.0, T, n_steps + 1)
    return BrownianGrid(times, dW, W, seed)


# ---------------------------------------------------------------------------
# coefficient paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientPaths:
    """Realised ``r, b, sigma`` on a grid, in compact broadcastable form.

    ``beta = b - r`` and ``theta = beta / sigma`` are derived on access.
    """

    r: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    shape: tuple
    r_deterministic: bool = True
    deterministic: bool = True

    @property
    def beta(self) -> np.ndarray:
        return self.b - self.r

    @property
    def theta(self) -> np.ndarray:
        return (self.b - self.r) / self.sigma

    def full(self, name: str) -> np.ndarray:
        """Read-only view of a coefficient expanded to the grid shape."""
        return np.broadcast_to(getattr(self, name), self.shape)

    def at(self, k: int):
        """Cross-sections ``(r, beta, sigma)`` at node ``k`` without full-size temporaries."""
        r = _at(self.r, k)
        return r, _at(self.b, k) - r, _at(self.sigma, k)


def evaluate_coefficients(scenario: MarketScenario, grid: BrownianGrid) -> CoefficientPaths:
    """Evaluate the scenario's coefficient processes on every path and node."""
    if abs(grid.T - scenario.T) > 1e-12 * max(1.0, scenario.T):
        raise GridMismatch(f"grid horizon {grid.T} differs from scenario T={scenario.T}")
    times = grid.times

    def ev(spec):
        vals = spec.evaluate(times, grid.W)
        return np.ascontiguousarray(vals, dtype=float)

    r, b, sigma = ev(scenario.r), ev(scenario.b), ev(scenario.sigma)
    if np.min(sigma ** 2) < scenario.sigma_floor:
        raise FloorViolation(
            f"realised sigma^2 = {np.min(sigma ** 2):.3g} below floor {scenario.sigma_floor:.3g}")
    return CoefficientPaths(r, b, sigma, grid.shape, scenario.r_deterministic,
                            scenario.deterministic)


# ---------------------------------------------------------------------------
# forward dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationSpec:
    """Spike perturbation ``v * 1[t, t + eps]`` added to the feedback control.

    ``v`` is ``amount`` on every path, or ``amount * clip(W_t, -clamp, clamp)``
    when ``clamp`` is given; either way it is bounded and known at time ``t``.
    """

    t: float
    eps: float
    amount: float = 1.0
    clamp: Optional[float] = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("perturbation duration eps must be positive")
        if self.t < 0:
            raise ValueError("perturbation start must be non-negative")

    @property
    def bound(self) -> float:
        return abs(self.amount) * (1.0 if self.clamp is None else self.clamp)

    def snap(self, grid: BrownianGrid) -> tuple:
        """Return ``(start_node, n_active_steps)`` on ``grid``."""
        j = grid.index_of(self.t)
        m = max(1, int(round(self.eps / grid.dt)))
        if j + m > grid.n_steps:
            raise ValueError(f"t + eps = {grid.times[j] + m * grid.dt} exceeds T = {grid.T}")
        return j, m

    def values(self, grid: BrownianGrid) -> np.ndarray:
        j, _ = self.snap(grid)
        if self.clamp is None:
            return np.full(grid.n_paths, float(self.amount))
        return self.amount * np.clip(grid.W[j], -self.clamp, self.clamp)


@dataclass
class StatePaths:
    """Simulated wealth paths and the controls that generated them."""

    values: np.ndarray
    x0: float
    control: np.ndarray = field(repr=False)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]


def _rows(arr, shape) -> np.ndarray:
    if arr is None:
        return np.zeros((1, 1))
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        if arr.shape[0] == shape[0]:
            return arr[:, None]
        raise GridMismatch(f"1-d process of length {arr.shape[0]} does not fit grid {shape}")
    np.broadcast_shapes(arr.shape, shape)
    return arr


def _at(arr: np.ndarray, k: int) -> np.ndarray:
    return arr[k] if arr.shape[0] > 1 else arr[0]


def simulate_state(coeffs: CoefficientPaths, grid: BrownianGrid, x0: float, *,
                   theta=None, phi=None, offset=None, control=None, l=None, h=None,
                   perturbation: Optional[PerturbationSpec] = None) -> StatePaths:
    """Euler-Maruyama for ``dX = [rX + beta u + l]ds + [sigma u + h]dW``.

    The control is either explicit (``control``) or feedback
    ``u = theta (X - offset) + phi`` evaluated at the left end of each step,
    plus the spike of ``perturbation`` when given.
    """
    shape = grid.shape
    if coeffs.shape != shape:
        raise GridMismatch(f"coefficients on {coeffs.shape}, grid is {shape}")
    n, P = grid.n_steps, grid.n_paths
    dt = grid.dt
    l, h = _rows(l, shape), _rows(h, shape)
    feedback = control is None
    if feedback:
        theta, phi, offset = _rows(theta, shape), _rows(phi, shape), _rows(offset, shape)
    else:
        control = np.broadcast_to(_rows(control, shape), shape)
    spike = None
    if perturbation is not None:
        j0, m = perturbation.snap(grid)
        spike = (j0, j0 + m, perturbation.values(grid))

    X = np.empty(shape)
    U = np.empty(shape)
    X[0] = x0
    for k in range(n + 1):
        x = X[k]
        if feedback:
            u = _at(theta, k) * (x - _at(offset, k)) + _at(phi, k)
        else:
            u = np.array(control[k], dtype=float)
        if spike is not None and spike[0] <= k < spike[1]:
            u = u + spike[2]
        U[k] = u
        if k == n:
            break
        r, beta, sigma = coeffs.at(k)
        drift = r * x + beta * u + _at(l, k)
        diffusion = sigma * u + _at(h, k)
        X[k + 1] = x + drift * dt + diffusion * grid.dW[k]
    if not np.all(np.isfinite(X)):
        raise NonFinite("wealth paths diverged; refine the grid or check the scenario")
    return StatePaths(X, float(x0), U)


def simulate_perturbed_pair(coeffs: CoefficientPaths, grid: BrownianGrid, operator, x0: float,
                            perturbation: PerturbationSpec, *, l=None, h=None):
    """Equilibrium state, spiked state and their difference on common noise.

    ``operator`` is anything with ``theta``, ``phi`` and ``offset`` arrays
    (see :class:`mveq.bsde.EquilibriumOperator`).  The third element is
    ``X0 - X*`` computed by subtraction, so the coupling identity is exact.
    """
    fb = dict(theta=operator.theta, phi=operator.phi, offset=operator.offset, l=l, h=h)
    star = simulate_state(coeffs, grid, x0, **fb)
    pert = simulate_state(coeffs, grid, x0, perturbation=perturbation, **fb)
    diff = StatePaths(pert.values - star.values, 0.0, pert.control - star.control)
    return star, pert, diff


def as_coefficients(source, grid: BrownianGrid) -> CoefficientPaths:
    """Accept either a scenario or already evaluated coefficients."""
    if isinstance(source, CoefficientPaths):
        if source.shape != grid.shape:
            raise GridMismatch(f"coefficients on {source.shape}, grid is {grid.shape}")
        return source
    if isinstance(source, MarketScenario):
        return evaluate_coefficients(source, grid)
    raise TypeError(f"expected MarketScenario or CoefficientPaths, got {type(source).__name__}")
