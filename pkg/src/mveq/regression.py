"""Least-squares conditional expectations on polynomial bases.

Reductions are written as explicit numpy sums over a fixed ordering so the
results do not depend on BLAS threading.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import SingularRegression

DEFAULT_DEGREE = 3
DEFAULT_RIDGE = 1e-8


def _standardize(x: np.ndarray):
    mu = x.sum() / x.size
    sd = np.sqrt(((x - mu) ** 2).sum() / x.size)
    return mu, sd


def polynomial_basis(features, degree: int = DEFAULT_DEGREE, scaling=None):
    """Rows of a tensor monomial basis, shape ``(n_basis, n_samples)``.

    The first feature gets monomials up to ``degree``; every further feature
    enters linearly (interactions with the first feature's monomials).
    A feature with no spread is dropped, so at ``t = 0`` the basis reduces to
    the constant.  Returns ``(basis, scaling)``; pass ``scaling`` back in to
    evaluate the same basis at new points.
    """
    if isinstance(features, np.ndarray) and features.ndim == 1:
        features = [features]
    features = [np.asarray(f, dtype=float) for f in features]
    if scaling is None:
        scaling = [_standardize(f) for f in features]
    zs = []
    for f, (mu, sd) in zip(features, scaling):
        zs.append(None if sd <= 1e-14 * max(1.0, abs(mu)) else (f - mu) / sd)
    n = features[0].size
    rows = [np.ones(n)]
    if zs[0] is not None:
        z = zs[0]
        p = z
        for _ in range(degree):
            rows.append(p)
            p = p * z
    head = list(rows)
    for z in zs[1:]:
        if z is not None:
            rows.extend(z * r for r in head)
    return np.array(rows), scaling


class Projector:
    """Ridge-regularised least squares onto a fixed basis.

    The constant row is not penalised, so a constant target is reproduced
    exactly.
    """

    def __init__(self, basis: np.ndarray, ridge: float = DEFAULT_RIDGE):
        self.basis = basis
        d, n = basis.shape
        self.n = n
        gram = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                gram[i, j] = gram[j, i] = (basis[i] * basis[j]).sum() / n
        pen = np.full(d, ridge)
        pen[0] = 0.0
        gram[np.diag_indices(d)] += pen
        try:
            self._chol = cho_factor(gram)
        except LinAlgError as exc:
            raise SingularRegression(f"rank-deficient regression basis ({d} columns)") from exc
        if not np.all(np.isfinite(self._chol[0])):
            raise SingularRegression("non-finite Cholesky factor")

    def coef(self, y: np.ndarray) -> np.ndarray:
        rhs = np.array([(row * y).sum() for row in self.basis]) / self.n
        return cho_solve(self._chol, rhs)

    def evaluate(self, coef: np.ndarray, basis: np.ndarray = None) -> np.ndarray:
        basis = self.basis if basis is None else basis
        out = coef[0] * basis[0]
        for c, row in zip(coef[1:], basis[1:]):
            out = out + c * row
        return out

    def project(self, y: np.ndarray) -> np.ndarray:
        """Fitted conditional expectation of ``y`` at the sample points."""
        return self.evaluate(self.coef(y))

    def leverage(self) -> np.ndarray:
        """``b_i' G^{-1} b_i / n`` per sample: the variance factor of a fitted value."""
        sol = cho_solve(self._chol, self.basis)
        return (sol * self.basis).sum(axis=0) / self.n


def conditional_expectation(y: np.ndarray, features, degree: int = DEFAULT_DEGREE,
                            ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """One-shot regression estimate of ``E[y | features]`` at every sample."""
    basis, _ = polynomial_basis(features, degree)
    return Projector(basis, ridge).project(np.asarray(y, dtype=float))


class ConditionalExpectation(RegressorMixin, BaseEstimator):
    """Regression estimator of a conditional expectation.

    ``X`` has one column per conditioning variable.  The first column gets a
    polynomial basis of the given degree, the remaining ones enter linearly
    together with their interactions.

    Examples
    --------
    >>> import numpy as np
    >>> w = np.random.default_rng(0).standard_normal(1000)
    >>> ConditionalExpectation().fit(w[:, None], w ** 2).predict([[0.0]]).round(6)
    array([0.])
    """

    def __init__(self, degree: int = DEFAULT_DEGREE, ridge: float = DEFAULT_RIDGE):
        self.degree = degree
        self.ridge = ridge

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("inputs contain non-finite values")
        basis, self.scaling_ = polynomial_basis(list(X.T), self.degree)
        proj = Projector(basis, self.ridge)
        self.coef_ = proj.coef(y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        basis, _ = polynomial_basis(list(X.T), self.degree, self.scaling_)
        out = self.coef_[0] * basis[0]
        for c, row in zip(self.coef_[1:], basis[1:]):
            out = out + c * row
        return out
