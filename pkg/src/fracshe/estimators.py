"""scikit-learn style wrappers for the pieces that map onto fit/transform/predict.

The simulation layer itself is functional (paths and moments depend on a
whole configuration, not on a sample matrix), so only the semigroup and the
growth-rate fits are wrapped here.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .moments import lyapunov_fit, rho_fit
from .spectral import build_basis

__all__ = ["SpectralSemigroup", "LyapunovRegressor", "RhoRegressor"]


class SpectralSemigroup(TransformerMixin, BaseEstimator):
    """Apply the killed semigroup at time ``t`` to grid functions.

    Each row of ``X`` holds the values of one function on the ``M`` basis
    nodes. ``fit`` builds the eigenbasis; ``transform`` returns ``P_t f`` on
    the same nodes.

    Examples
    --------
    >>> import numpy as np
    >>> sg = SpectralSemigroup(t=0.1, N=16, M=64).fit()
    >>> out = sg.transform(np.ones((2, 64)))
    >>> out.shape
    (2, 64)
    """

    def __init__(self, t: float = 0.1, alpha: float = 2.0, N: int = 64, M: int = 256):
        self.t = t
        self.alpha = alpha
        self.N = N
        self.M = M

    def fit(self, X=None, y=None):
        self.basis_ = build_basis(self.alpha, self.N, self.M)
        self.nodes_ = self.basis_.nodes
        self.n_features_in_ = self.M
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        if X.shape[1] != self.M:
            raise ValueError(f"expected {self.M} grid values per row, got {X.shape[1]}")
        coeffs = X @ self.basis_.analysis
        return (coeffs * self.basis_.decay(self.t)) @ self.basis_.phi.T


class LyapunovRegressor(RegressorMixin, BaseEstimator):
    """Exponential growth rate of a moment curve.

    ``X`` is a single column of times and ``y`` the moment values (or their
    logs with ``log_values=True``). ``predict`` returns the fitted curve on the
    same scale as ``y``.
    """

    def __init__(self, window=None, log_values: bool = False):
        self.window = window
        self.log_values = log_values

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y, dtype=float).ravel()
        res = lyapunov_fit(X[:, 0], y, self.window, log=self.log_values)
        self.slope_ = res.slope
        self.intercept_ = res.intercept
        self.r2_ = res.r2
        self.slope_se_ = res.slope_se
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        t = check_array(X)[:, 0]
        log_m = self.intercept_ + self.slope_ * t
        return log_m if self.log_values else np.exp(log_m)

    def score(self, X, y, sample_weight=None):
        # R^2 on the log scale, which is what the fit minimizes
        check_is_fitted(self, "slope_")
        y = np.asarray(y, dtype=float).ravel()
        log_y = y if self.log_values else np.log(y)
        resid = log_y - (self.intercept_ + self.slope_ * check_array(X)[:, 0])
        return 1.0 - np.sum(resid ** 2) / np.sum((log_y - log_y.mean()) ** 2)


class RhoRegressor(RegressorMixin, BaseEstimator):
    """Power-law exponent in ``t`` of a moment (``log_moment=True``) or of a chaos term."""

    def __init__(self, window=None, log_moment: bool = True):
        self.window = window
        self.log_moment = log_moment

    def fit(self, X, y):
        X = check_array(X)
        res = rho_fit(X[:, 0], np.asarray(y, dtype=float).ravel(), self.window, log_moment=self.log_moment)
        self.rho_ = res.rho_hat
        self.ci_ = res.ci
        self.intercept_ = res.intercept
        self.r2_ = res.r2
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "rho_")
        t = check_array(X)[:, 0]
        inner = np.exp(self.intercept_) * t ** self.rho_
        return np.exp(inner) if self.log_moment else inner
