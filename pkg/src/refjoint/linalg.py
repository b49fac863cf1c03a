"""Dense matrix machinery: standardization, correlation, vec-calculus helpers
and guarded symmetric positive-definite solves.

Conventions used throughout the package:

* Standardization and correlation use the divisor-n convention, so that for a
  standardized matrix X the sample correlation is exactly X'X / n.  This
  differs from the more common n-1 convention at O(1/n) and matters for the
  exact algebraic identities the estimators rely on.
* ``vec`` stacks matrix columns (column-major / Fortran order).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConstantColumn, RidgeWarning, SingularMatrix

# Dense p^2 x p^2 matrices appear downstream; keep p bounded by default.
MAX_P = 200

# Relative eigenvalue thresholds for the near-singular solve policy.
RIDGE_REL_TOL = 1e-8
SINGULAR_REL_TOL = 1e-12
RIDGE_DELTA = 1e-6


@dataclass(frozen=True)
class CovariateMatrix:
    """An n x p covariate matrix with its preprocessing state.

    ``standardized`` implies columns have mean 0 and divisor-n sd 1;
    ``centered`` implies mean 0 only.
    """

    values: np.ndarray
    standardized: bool = False
    centered: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("covariate matrix must be 2-dimensional")
        n, p = v.shape
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CorrelationEstimate:
    """A p x p sample correlation matrix together with its provenance."""

    matrix: np.ndarray
    n_panel: int
    source: str = "reference"  # "reference" or "original"
    labels: tuple = field(default=None, compare=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("correlation matrix must be square")
        if self.n_panel < 1:
            raise ValueError("n_panel must be positive")
        if self.source not in ("reference", "original"):
            raise ValueError(f"unknown source {self.source!r}")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValueError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-12):
            raise ValueError("correlation matrix does not have a unit diagonal")
        object.__setattr__(self, "matrix", m)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


def standardize(values: np.ndarray, labels=None) -> CovariateMatrix:
    """Center columns and scale them to divisor-n standard deviation 1."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("expected a 2-dimensional array")
    n = v.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations")
    mean = v.mean(axis=0)
    centered = v - mean
    sd = np.sqrt(np.mean(centered**2, axis=0))
    for j, s in enumerate(sd):
        if s <= 0.0:
            label = labels[j] if labels is not None else None
            raise ConstantColumn(j, label)
    return CovariateMatrix(centered / sd, standardized=True, centered=True)


def center(values: np.ndarray) -> CovariateMatrix:
    """Center columns without rescaling."""
    v = np.asarray(values, dtype=float)
    return CovariateMatrix(v - v.mean(axis=0), standardized=False, centered=True)


def correlation(x: CovariateMatrix, source: str = "reference") -> CorrelationEstimate:
    """Sample correlation X'X/n of a standardized covariate matrix."""
    if not x.standardized:
        raise ValueError("correlation requires a standardized covariate matrix")
    m = x.values.T @ x.values / x.n
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    return CorrelationEstimate(m, n_panel=x.n, source=source)


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray, p: int) -> np.ndarray:
    return np.asarray(v).reshape((p, p), order="F")


def commutation_matrix(p: int) -> np.ndarray:
    """The p^2 x p^2 matrix K with K vec(A) = vec(A') for every p x p A."""
    k = np.zeros((p * p, p * p))
    for i in range(p):
        for j in range(p):
            # vec index of (i, j) is i + p*j; of (j, i) is j + p*i
            k[j + p * i, i + p * j] = 1.0
    return k


def symmetrizer(p: int) -> np.ndarray:
    """M_s = (I + K)/2; projects vec(A) onto vec((A + A')/2)."""
    return 0.5 * (np.eye(p * p) + commutation_matrix(p))


def diag_selector(p: int) -> np.ndarray:
    """Lambda = sum_i (e_i e_i' (x) e_i e_i'); keeps diagonal vec coordinates."""
    lam = np.zeros((p * p, p * p))
    for i in range(p):
        lam[i + p * i, i + p * i] = 1.0
    return lam


def _duplicate_pair(m: np.ndarray):
    """Find an off-diagonal entry of a unit-diagonal matrix at +/-1, if any."""
    p = m.shape[0]
    if not np.allclose(np.diag(m), 1.0, atol=1e-8):
        return None
    for i in range(p):
        for j in range(i + 1, p):
            if abs(abs(m[i, j]) - 1.0) < 1e-10:
                return (i, j)
    return None


def solve_spd(m: np.ndarray, rhs: np.ndarray, ridge_delta: float = RIDGE_DELTA):
    """Solve m x = rhs for symmetric positive-definite m.

    Near-singular policy: if the smallest eigenvalue falls below
    ``RIDGE_REL_TOL`` times the largest, a ridge ``ridge_delta * I`` is added
    and a :class:`RidgeWarning` is emitted; below ``SINGULAR_REL_TOL``
    relative, a :class:`SingularMatrix` error is raised instead.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(m, m.T, atol=1e-10 * max(1.0, np.abs(m).max())):
        raise ValueError("matrix must be symmetric")
    eigvals = np.linalg.eigvalsh(m)
    lo, hi = eigvals[0], eigvals[-1]
    if hi <= 0.0 or lo <= SINGULAR_REL_TOL * hi:
        pair = _duplicate_pair(m)
        detail = f"; columns {pair[0]} and {pair[1]} are duplicated" if pair else ""
        raise SingularMatrix(
            f"matrix is singular to working precision "
            f"(smallest eigenvalue {lo:.3e}, largest {hi:.3e}){detail}",
            smallest_eigenvalue=lo,
            duplicate_pair=pair,
        )
    if lo < RIDGE_REL_TOL * hi:
        warnings.warn(
            f"near-singular matrix (smallest eigenvalue {lo:.3e}); "
            f"adding ridge {ridge_delta:g} * I",
            RidgeWarning,
            stacklevel=2,
        )
        m = m + ridge_delta * np.eye(m.shape[0])
    try:
        c = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded above
        raise SingularMatrix(str(exc), smallest_eigenvalue=lo) from exc
    rhs = np.asarray(rhs, dtype=float)
    y = np.linalg.solve(c, rhs)
    return np.linalg.solve(c.T, y)


def inverse_spd(m: np.ndarray, ridge_delta: float = RIDGE_DELTA) -> np.ndarray:
    """Inverse through the guarded SPD solve."""
    return solve_spd(m, np.eye(np.asarray(m).shape[0]), ridge_delta=ridge_delta)
