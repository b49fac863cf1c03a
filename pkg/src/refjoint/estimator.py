"""Plug-in joint estimator from marginal summary statistics.

Given per-covariate marginal coefficients (standardized y on each
standardized column separately) and a panel correlation matrix, the joint
coefficients are recovered by solving R_hat b = beta_marginal.  The naive
covariance ignores the sampling error of the panel correlation; the
corrected covariance lives in :mod:`refjoint.varcorrect`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .exceptions import DimensionMismatch
from .linalg import CorrelationEstimate, CovariateMatrix, solve_spd

# Lower clamp for the residual-variance plug-in: 1 - b'Rb can go negative
# when the joint estimate is noisy, which would break PSD-ness downstream.
SIGMA2_MIN = 0.05


@dataclass(frozen=True)
class MarginalSummary:
    """Marginal coefficients of a standardized outcome on standardized columns."""

    beta_m: np.ndarray
    n_o: int
    ids: tuple = None

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.beta_m, dtype=float))
        if b.ndim != 1 or b.size < 1:
            raise ValueError("beta_m must be a non-empty vector")
        if not np.all(np.isfinite(b)):
            raise ValueError("beta_m contains non-finite entries")
        if self.n_o < 1:
            raise ValueError("n_o must be positive")
        if self.ids is not None and len(self.ids) != b.size:
            raise DimensionMismatch("ids length does not match beta_m")
        object.__setattr__(self, "beta_m", b)
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def p(self) -> int:
        return self.beta_m.size


@dataclass(frozen=True)
class JointEstimate:
    """Joint coefficients with a covariance estimate and its method tag."""

    beta_mc: np.ndarray
    sigma_mc: np.ndarray
    sigma2: float
    method: str  # naive | var_corrected_gaussian | var_corrected_empirical | var_corrected_mle
    n_o: int
    n_r: int
    ids: tuple = None

    def __post_init__(self):
        b = np.asarray(self.beta_mc, dtype=float)
        s = np.asarray(self.sigma_mc, dtype=float)
        if s.shape != (b.size, b.size):
            raise DimensionMismatch("sigma_mc shape does not match beta_mc")
        object.__setattr__(self, "beta_mc", b)
        object.__setattr__(self, "sigma_mc", 0.5 * (s + s.T))
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def p(self) -> int:
        return self.beta_mc.size


def marginal_assoc(x: CovariateMatrix, y: np.ndarray, ids=None) -> MarginalSummary:
    """Per-column marginal coefficients X'y/n for standardized x and y."""
    if not x.standardized:
        raise ValueError("marginal_assoc requires a standardized covariate matrix")
    y = np.asarray(y, dtype=float)
    if y.shape != (x.n,):
        raise DimensionMismatch(f"y has length {y.shape}, expected ({x.n},)")
    return MarginalSummary(x.values.T @ y / x.n, n_o=x.n, ids=ids)


def joint_from_marginal(summary: MarginalSummary, r_ref: CorrelationEstimate) -> np.ndarray:
    """Solve R_hat b = beta_marginal; equals OLS when the panel is the original data."""
    if r_ref.p != summary.p:
        raise DimensionMismatch(
            f"summary has p={summary.p} but panel correlation has p={r_ref.p}"
        )
    return solve_spd(r_ref.matrix, summary.beta_m)


def naive_cov(r_ref: CorrelationEstimate, sigma2: float, n_o: int) -> np.ndarray:
    """(sigma2 / n_o) R_hat^{-1}: the covariance that ignores panel uncertainty."""
    inv = solve_spd(r_ref.matrix, np.eye(r_ref.p))
    cov = (sigma2 / n_o) * inv
    return 0.5 * (cov + cov.T)


def sigma2_hat(beta: np.ndarray, r: CorrelationEstimate, sigma2_min: float = SIGMA2_MIN) -> float:
    """Residual-variance plug-in 1 - b'Rb, clamped to [sigma2_min, 1]."""
    beta = np.asarray(beta, dtype=float)
    raw = 1.0 - float(beta @ r.matrix @ beta)
    return float(min(max(raw, sigma2_min), 1.0))


def threshold_beta(
    beta_mc: np.ndarray,
    r_ref: CorrelationEstimate,
    sigma2: float,
    n_o: int,
    alpha: float = 0.05,
) -> np.ndarray:
    """Zero the entries whose naive z-statistic is below the two-sided cutoff.

    The statistic is sqrt(n_o)/sigma * d(R)^{-1/2} beta; d(R) = I for
    standardized panels but is carried for generality.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    beta_mc = np.asarray(beta_mc, dtype=float)
    scale = 1.0 / np.sqrt(np.diag(r_ref.matrix))
    t_star = np.sqrt(n_o) / np.sqrt(sigma2) * scale * beta_mc
    cutoff = norm.ppf(1.0 - alpha / 2.0)
    out = beta_mc.copy()
    out[np.abs(t_star) < cutoff] = 0.0
    return out
