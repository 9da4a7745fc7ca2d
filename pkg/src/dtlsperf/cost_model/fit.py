"""Least-squares refits of the cost coefficients.

The two estimators follow the scikit-learn protocol (``fit`` / ``predict``
/ ``get_params``) so they drop into pipelines and cross-validation. The
``fit_linear`` and ``fit_sawtooth`` helpers take plain ``(x, cycles)``
pairs and report the fit's sMAPE on the training points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .equations import SAWTOOTH_MIN_CONNECTIONS, sawtooth_shape, smape
from .params import DomainError


class DegenerateFit(ValueError):
    """The samples cannot determine the requested coefficients."""


def _column(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected one feature, got {X.shape[1]}")
        X = X[:, 0]
    return X


class LinearCostEstimator(RegressorMixin, BaseEstimator):
    """``cycles = slope * x + intercept`` by ordinary least squares.

    With ``zero_intercept`` the line is forced through the origin, which is
    the right shape for per-packet and per-byte costs.
    """

    def __init__(self, zero_intercept: bool = False):
        self.zero_intercept = zero_intercept

    def fit(self, X, y):
        X, y = check_X_y(np.reshape(X, (-1, 1)), y, dtype=float, y_numeric=True)
        x = X[:, 0]
        if self.zero_intercept:
            if not np.any(x):
                raise DegenerateFit("all x are zero")
            A = x[:, None]
        else:
            if np.unique(x).size < 2:
                raise DegenerateFit("need at least two distinct x values")
            A = np.column_stack([x, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        self.slope_ = float(coef[0])
        self.intercept_ = 0.0 if self.zero_intercept else float(coef[1])
        self.smape_ = smape(self.predict(X), y)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        return self.slope_ * _column(X) + self.intercept_


class SawtoothCostEstimator(RegressorMixin, BaseEstimator):
    """Average insert cycles per connection, ``base + saw * shape(c)``.

    ``shape`` is the occupancy term of a table that doubles its capacity;
    it is only a good description once the table is past its small-size
    transient, hence ``min_connections``.
    """

    def __init__(self, min_connections: int = SAWTOOTH_MIN_CONNECTIONS):
        self.min_connections = min_connections

    def fit(self, X, y):
        X, y = check_X_y(np.reshape(X, (-1, 1)), y, dtype=float, y_numeric=True)
        c = X[:, 0]
        if c.size < 2:
            raise DegenerateFit("need at least two samples")
        if np.any(c < self.min_connections):
            raise DomainError(f"sawtooth samples need c >= {self.min_connections}")
        g = np.array([sawtooth_shape(v) for v in c])
        if np.ptp(g) == 0:
            raise DegenerateFit("all samples sit at the same sawtooth phase")
        coef, *_ = np.linalg.lstsq(np.column_stack([np.ones_like(g), g]), y, rcond=None)
        self.base_, self.saw_ = float(coef[0]), float(coef[1])
        self.smape_ = smape(self.predict(X), y)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "base_")
        c = _column(X)
        return self.base_ + self.saw_ * np.array([sawtooth_shape(v) for v in c])


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    smape: float


@dataclass(frozen=True)
class SawtoothFit:
    base: float
    saw: float
    smape: float


def _split(samples):
    samples = list(samples)
    if not samples:
        raise DegenerateFit("no samples")
    x, y = zip(*samples)
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def fit_linear(samples, zero_intercept: bool = False) -> LinearFit:
    x, y = _split(samples)
    est = LinearCostEstimator(zero_intercept=zero_intercept).fit(x, y)
    return LinearFit(est.slope_, est.intercept_, est.smape_)


def fit_sawtooth(samples, min_connections: int = SAWTOOTH_MIN_CONNECTIONS) -> SawtoothFit:
    """Fit ``(c, average insert cycles per connection)`` pairs."""
    x, y = _split(samples)
    est = SawtoothCostEstimator(min_connections).fit(x, y)
    return SawtoothFit(est.base_, est.saw_, est.smape_)
