"""Least-squares estimation of conditional expectations given the Brownian state."""
from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import SingularDesign

__all__ = ["PolynomialCondExp", "fit_condexp", "evaluate", "expectation"]


def expectation(samples) -> float:
    """Sample mean with a fixed (pairwise) summation order."""
    x = np.ascontiguousarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("expectation of an empty sample")
    return float(np.sum(x) / x.size)


def _as_state(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("conditioning state must be one-dimensional")
        X = X[:, 0]
    return np.ascontiguousarray(X)


class PolynomialCondExp(RegressorMixin, BaseEstimator):
    """Ridge regression on monomials of the standardized state.

    The state ``x`` is standardized to ``s = (x - mean_) / scale_`` and the
    target is regressed on ``1, s, ..., s**degree``. The ridge penalty is
    applied to the non-constant coefficients only, so the mean of the
    fitted values equals the mean of the targets. A constant state (the
    initial node of a Brownian grid) degenerates to the plain mean.

    Parameters
    ----------
    degree : int, default=4
    ridge : float, default=1e-8
        Penalty added to the diagonal of the normalized Gram matrix. On a
        failed Cholesky factorization the fit retries once with ten times
        the penalty before raising :class:`SingularDesign`.
    """

    def __init__(self, degree=4, ridge=1e-8):
        self.degree = degree
        self.ridge = ridge

    def fit(self, X, y):
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a nonnegative integer, got {self.degree}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be nonnegative, got {self.ridge}")
        x = _as_state(X)
        Y = np.asarray(y, dtype=float)
        multi = Y.ndim == 2
        Y = Y.reshape(x.size, -1)
        M = x.size

        mean = expectation(x)
        centered = x - mean
        scale = float(np.sqrt(np.sum(centered * centered) / M))
        if not scale > 1e-12 * (1.0 + abs(mean)) or self.degree == 0:
            self.mean_, self.scale_ = mean, 1.0 if scale == 0 else scale
            self.degree_ = 0
            coef = np.array([[expectation(Y[:, k]) for k in range(Y.shape[1])]])
            self.gram_ = np.ones((1, 1))
            self.rhs_ = coef.copy()
        else:
            self.mean_, self.scale_ = mean, scale
            self.degree_ = int(self.degree)
            s = centered / scale
            powers = [np.ones(M)]
            for _ in range(2 * self.degree_):
                powers.append(powers[-1] * s)
            moments = np.array([np.sum(p) / M for p in powers])
            p1 = self.degree_ + 1
            gram = np.array([[moments[j + k] for k in range(p1)] for j in range(p1)])
            rhs = np.array([
                [np.sum(powers[j] * np.ascontiguousarray(Y[:, k])) / M for k in range(Y.shape[1])]
                for j in range(p1)
            ])
            coef = self._solve(gram, rhs)
            self.gram_, self.rhs_ = gram, rhs
        self.coef_ = coef if multi else coef[:, 0]
        self.n_features_in_ = 1
        return self

    def _solve(self, gram, rhs):
        penalty = np.ones(gram.shape[0])
        penalty[0] = 0.0
        ridge = float(self.ridge)
        for attempt in (ridge, max(10.0 * ridge, 1e-12)):
            G = gram + np.diag(attempt * penalty)
            try:
                factor = cho_factor(G, lower=True, check_finite=True)
            except (LinAlgError, ValueError):
                continue
            self.ridge_ = attempt
            return cho_solve(factor, rhs)
        raise SingularDesign(f"Gram matrix not positive definite (degree={self.degree_}, ridge={ridge:g})")

    @classmethod
    def from_coefficients(cls, coefficients, mean=0.0, scale=1.0):
        coef = np.asarray(coefficients, dtype=float)
        est = cls(degree=coef.shape[0] - 1, ridge=0.0)
        est.coef_, est.mean_, est.scale_ = coef, float(mean), float(scale)
        est.degree_ = coef.shape[0] - 1
        est.n_features_in_ = 1
        return est

    def predict(self, X):
        check_is_fitted(self, "coef_")
        x = _as_state(X)
        s = (x - self.mean_) / self.scale_
        coef = self.coef_
        out = np.zeros((s.size,) + coef.shape[1:])
        for c in coef[::-1]:
            out = out * (s[:, None] if coef.ndim == 2 else s) + c
        return out


def fit_condexp(ensemble, i, targets, degree=4, ridge=1e-8) -> PolynomialCondExp:
    """Fit ``E_{t_i}[targets]`` on the ensemble state at node ``i``."""
    targets = np.asarray(targets, dtype=float)
    if targets.shape[0] != ensemble.M:
        raise ValueError("one target per path expected")
    est = PolynomialCondExp(degree=degree, ridge=ridge).fit(ensemble.state(i), targets)
    est.time_index_ = int(i)
    return est


def evaluate(est: PolynomialCondExp, state):
    scalar = np.ndim(state) == 0
    out = est.predict(np.atleast_1d(np.asarray(state, dtype=float)))
    return float(out[0]) if scalar and out.ndim == 1 else out
