"""Monte Carlo estimates of the mean-variance and hedging objectives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InsufficientPaths
from .regression import DEFAULT_DEGREE, DEFAULT_RIDGE, Projector, polynomial_basis

KINDS = ("mean-variance", "hedging")


@dataclass
class ObjectiveEstimate:
    """Objective estimate and its standard error.

    With conditioning, ``per_path`` holds the fitted conditional objective at
    each sample and ``value`` is its average.
    """

    value: float
    se: float
    per_path: Optional[np.ndarray] = None
    per_path_se: Optional[np.ndarray] = None


def evaluate_objective(kind: str, terminal, *, gamma: float = 0.0, claim=None,
                       conditioning=None, precision: Optional[float] = None,
                       degree: int = DEFAULT_DEGREE,
                       ridge: float = DEFAULT_RIDGE) -> ObjectiveEstimate:
    """``J = Var_t[X(T)] - gamma E_t[X(T)]`` or ``Var_t[xi - X(T)]``.

    ``conditioning`` is ``None`` (time 0, plain moments) or the node-``t``
    state(s) to regress on.  Raises ``InsufficientPaths`` when the standard
    error exceeds ``precision``.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    x = np.asarray(terminal, dtype=float)
    if kind == "hedging":
        if claim is None:
            raise ValueError("hedging objective needs claim samples")
        x = np.asarray(claim, dtype=float) - x
        gamma = 0.0
    n = x.size
    if n < 2:
        raise InsufficientPaths("need at least two samples")
    if conditioning is None:
        m = x.sum() / n
        dev = x - m
        var = (dev * dev).sum() / (n - 1)
        psi = dev * dev - gamma * x
        se = float(psi.std(ddof=1) / np.sqrt(n))
        est = ObjectiveEstimate(float(var - gamma * m), se)
    else:
        basis, _ = polynomial_basis(conditioning, degree)
        proj = Projector(basis, ridge)
        mu = proj.project(x)
        sq = (x - mu) ** 2
        cvar = proj.project(sq)
        J = cvar - gamma * mu
        psi = sq - gamma * x
        resid = psi - J
        s2 = (resid * resid).sum() / max(n - basis.shape[0], 1)
        per_se = np.sqrt(s2 * proj.leverage())
        est = ObjectiveEstimate(float(J.mean()), float(psi.std(ddof=1) / np.sqrt(n)), J, per_se)
    if precision is not None and est.se > precision:
        raise InsufficientPaths(
            f"objective standard error {est.se:.3g} exceeds requested {precision:.3g}")
    return est
