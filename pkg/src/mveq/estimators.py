"""Estimator-style wrappers around the solvers.

``fit`` solves the backward system on a Brownian ensemble (simulated from
``n_paths``, ``n_steps`` and ``seed`` unless a grid is passed in) and
``predict`` maps wealth to controls through the fitted feedback law.

>>> from mveq import Constant, build_scenario
>>> est = MeanVarianceStrategy(build_scenario(Constant(0.03), Constant(0.08), Constant(0.2)),
...                            gamma=0.5, n_paths=2000, n_steps=50)
>>> round(float(est.fit().operator_.phi[0].mean()), 3)
0.303
"""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bsde import general_equilibrium
from .errors import ConfigError
from .hedging import ClaimSpec, solve_hedging_equilibrium
from .market import (
    BrownianGrid,
    MarketScenario,
    evaluate_coefficients,
    simulate_brownian,
    simulate_state,
)
from .mean_variance import solve_mv_equilibrium
from .objective import evaluate_objective
from .openloop import METHODS, solve_openloop


class _Strategy(BaseEstimator):
    _objective = "mean-variance"

    def __init__(self, scenario=None, gamma=1.0, n_paths=20_000, n_steps=200, seed=0, x0=1.0):
        self.scenario = scenario
        self.gamma = gamma
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.seed = seed
        self.x0 = x0

    def _validate_params(self):
        if not isinstance(self.scenario, MarketScenario):
            raise ConfigError("scenario must be a MarketScenario (see build_scenario)")
        for name in ("n_paths", "n_steps"):
            v = getattr(self, name)
            if not isinstance(v, numbers.Integral) or v < (2 if name == "n_paths" else 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.seed is not None and not isinstance(self.seed, numbers.Integral):
            raise ConfigError(f"seed must be an integer or None, got {self.seed!r}")
        for name in ("gamma", "x0"):
            v = getattr(self, name)
            if not isinstance(v, numbers.Real) or not np.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")

    def _grid(self, X):
        if X is None:
            return simulate_brownian(self.n_paths, self.n_steps, self.scenario.T, seed=self.seed)
        if not isinstance(X, BrownianGrid):
            raise TypeError("fit expects a BrownianGrid or None")
        if not np.isclose(X.T, self.scenario.T):
            raise ConfigError(f"grid horizon {X.T} differs from scenario T {self.scenario.T}")
        return X

    def fit(self, X=None, y=None):
        """Solve on grid ``X`` (simulated when ``None``); ``y`` is ignored."""
        self._validate_params()
        grid = self._grid(X)
        coeffs = evaluate_coefficients(self.scenario, grid)
        self.grid_ = grid
        self.coefficients_ = coeffs
        self.solution_, self.operator_ = self._solve(coeffs, grid)
        return self

    def predict(self, X, step=None):
        """Controls for wealth ``X``.

        ``X`` is either a full ``(n_steps + 1, n_paths)`` wealth array or one
        cross-section of length ``n_paths`` at node ``step``.
        """
        check_is_fitted(self, "operator_")
        X = np.asarray(X, dtype=float)
        shape = self.grid_.shape
        op = self.operator_
        if step is None:
            if X.shape != shape:
                raise ValueError(f"X has shape {X.shape}, expected {shape} or pass step=")
            return op.control(X)
        if not 0 <= step < shape[0]:
            raise ValueError(f"step must lie in [0, {shape[0] - 1}]")
        if X.shape != (shape[1],):
            raise ValueError(f"X has shape {X.shape}, expected ({shape[1]},) at one step")

        def row(a):
            a = np.asarray(a, dtype=float)
            if a.ndim == 0:
                return a
            return a[step] if a.shape[0] > 1 else a[0]

        return row(op.theta) * (X - row(op.offset)) + row(op.phi)

    def simulate(self, x0=None):
        """Wealth paths driven by the fitted feedback on the fitting grid."""
        check_is_fitted(self, "operator_")
        op = self.operator_
        return simulate_state(self.coefficients_, self.grid_, self.x0 if x0 is None else x0,
                              theta=op.theta, phi=op.phi, offset=op.offset, **self._extra())

    def score(self, X=None, y=None):
        """Minus the time-0 objective of the fitted strategy (higher is better)."""
        state = self.simulate()
        return -evaluate_objective(self._objective, state.terminal, gamma=self.gamma,
                                   claim=self._claim_samples()).value

    def _extra(self):
        return {}

    def _claim_samples(self):
        return None


class MeanVarianceStrategy(_Strategy):
    """Closed-loop equilibrium for ``Var[X(T)] - gamma E[X(T)]``."""

    def _solve(self, coeffs, grid):
        mv = solve_mv_equilibrium(coeffs, self.gamma, grid)
        return mv, mv.operator


class GeneralStrategy(_Strategy):
    """Equilibrium for wealth with extra drift ``l`` and diffusion ``h``.

    ``l`` and ``h`` are coefficient specs (``Constant``, ``TimeFunction``,
    ``BrownianFunction``) or ``None``.
    """

    def __init__(self, scenario=None, gamma=1.0, n_paths=20_000, n_steps=200, seed=0, x0=1.0,
                 l=None, h=None):
        super().__init__(scenario, gamma, n_paths, n_steps, seed, x0)
        self.l = l
        self.h = h

    def _validate_params(self):
        super()._validate_params()
        for name in ("l", "h"):
            v = getattr(self, name)
            if v is not None and not hasattr(v, "evaluate"):
                raise ConfigError(f"{name} must be a coefficient spec or None")

    def _lh(self, grid):
        ev = [None if s is None else np.broadcast_to(s.evaluate(grid.times, grid.W), grid.shape)
              for s in (self.l, self.h)]
        return ev

    def _solve(self, coeffs, grid):
        l, h = self._lh(grid)
        return general_equilibrium(coeffs, grid, self.gamma, l=l, h=h)

    def _extra(self):
        l, h = self._lh(self.grid_)
        return {"l": l, "h": h}


class HedgingStrategy(_Strategy):
    """Equilibrium variance hedge of ``claim``; ``gamma`` is not used."""

    _objective = "hedging"

    def __init__(self, scenario=None, claim=None, n_paths=20_000, n_steps=200, seed=0, x0=1.0):
        super().__init__(scenario, 0.0, n_paths, n_steps, seed, x0)
        self.claim = claim

    def _validate_params(self):
        super()._validate_params()
        if not isinstance(self.claim, ClaimSpec):
            raise ConfigError("claim must be a ConstantClaim, LinearClaim or BoundedSmoothClaim")

    def _solve(self, coeffs, grid):
        he = solve_hedging_equilibrium(coeffs, self.claim, grid)
        return he, he.operator

    def _claim_samples(self):
        return self.solution_.claim.xi


class OpenLoopStrategy(_Strategy):
    """Open-loop equilibrium, read as a feedback law on the same grid."""

    def __init__(self, scenario=None, gamma=1.0, n_paths=20_000, n_steps=200, seed=0, x0=1.0,
                 method="shared"):
        super().__init__(scenario, gamma, n_paths, n_steps, seed, x0)
        self.method = method

    def _validate_params(self):
        super()._validate_params()
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")

    def _solve(self, coeffs, grid):
        ol = solve_openloop(coeffs, self.gamma, grid, method=self.method)
        return ol, ol.operator
