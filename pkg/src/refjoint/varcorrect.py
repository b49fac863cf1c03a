"""Corrected covariance of the plug-in joint estimator.

The extra variance caused by replacing the original design by a reference
panel is driven by the sampling variance of the vectorized panel correlation
matrix (V_R).  V_R is obtained from the variance of the vectorized
covariance matrix (V_Sigma) via the delta-method Jacobian of the
covariance-to-correlation map, and then assembled into

    sigma2/n_o * R^{-1}  +  (n_o + n_r)/(n_o * n_r) * (b' (x) R^{-1}) V_R (b (x) R^{-1})

Notes on conventions:

* The leading term is sigma2 * R^{-1} / n_o.  With b = 0 this reduces exactly
  to the naive covariance, which is the correct degenerate case; the
  alternative (n_r/n_o) scaling sometimes quoted is dimensionally
  inconsistent with the asymptotic statement and is not used.
* The Jacobian of the covariance-to-correlation map is evaluated at unit
  variances, which is exact for standardized panels.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exceptions import TooFewObservations
from .linalg import (
    MAX_P,
    CorrelationEstimate,
    CovariateMatrix,
    diag_selector,
    solve_spd,
    symmetrizer,
)

# Observation block size for the fourth-moment reduction.  Blocks are summed
# in index order so the result is bit-stable across thread counts.
BLOCK_SIZE = 512

_PSD_TOL = 1e-8


def _repair_psd(m: np.ndarray, tol: float = _PSD_TOL) -> np.ndarray:
    """Truncate tiny negative eigenvalues; reject genuinely indefinite input."""
    m = 0.5 * (m + m.T)
    eigvals = np.linalg.eigvalsh(m)
    scale = max(1.0, float(eigvals[-1]))
    if eigvals[0] >= 0.0:
        return m
    if eigvals[0] < -tol * scale:
        raise ValueError(
            f"matrix is indefinite (smallest eigenvalue {eigvals[0]:.3e}); "
            "this indicates a bug upstream, not roundoff"
        )
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class VSigma:
    """Variance of the vectorized sample covariance matrix (p^2 x p^2)."""

    matrix: np.ndarray
    method: str  # "gaussian" or "empirical"
    n_used: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("VSigma matrix must be square")
        object.__setattr__(self, "matrix", _repair_psd(m))

    @property
    def p(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))


@dataclass(frozen=True)
class VR:
    """Variance of the vectorized sample correlation matrix (p^2 x p^2)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("VR matrix must be square")
        object.__setattr__(self, "matrix", 0.5 * (m + m.T))

    @property
    def p(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))


def vsigma_gaussian(sigma_hat: np.ndarray, n_used: int = 0) -> VSigma:
    """Closed form 2 M_s (Sigma (x) Sigma), valid for Gaussian covariates."""
    s = np.asarray(sigma_hat, dtype=float)
    p = s.shape[0]
    if p > MAX_P:
        raise ValueError(f"p={p} exceeds the dense-storage cap {MAX_P}")
    kk = np.kron(s, s)
    m = 2.0 * symmetrizer(p) @ kk
    return VSigma(m, method="gaussian", n_used=n_used)


def _block_gram(x: np.ndarray, vec_sigma: np.ndarray, start: int, stop: int) -> np.ndarray:
    xb = x[start:stop]
    m, p = xb.shape
    outer = np.einsum("bi,bj->bij", xb, xb).reshape(m, p * p)
    d = outer - vec_sigma
    return d.T @ d


def vsigma_empirical(x_centered: CovariateMatrix, n_threads: int = 1) -> VSigma:
    """Fourth-moment estimator: average outer product of per-observation
    covariance contributions around the sample covariance.

    O(n p^4); parallelized over fixed-size observation blocks whose partial
    sums are combined in index order, so output is identical for any
    ``n_threads``.
    """
    if not x_centered.centered:
        raise ValueError("vsigma_empirical requires a centered covariate matrix")
    x = x_centered.values
    n, p = x.shape
    if p > MAX_P:
        raise ValueError(f"p={p} exceeds the dense-storage cap {MAX_P}")
    if n < p + 1:
        warnings.warn(
            f"only {n} observations for p={p}; the fourth-moment estimate "
            "will be unstable",
            TooFewObservations,
            stacklevel=2,
        )
    sigma = x.T @ x / n
    vec_sigma = sigma.reshape(-1)  # per-observation matrices are symmetric
    bounds = [(s, min(s + BLOCK_SIZE, n)) for s in range(0, n, BLOCK_SIZE)]
    if n_threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            grams = list(pool.map(lambda b: _block_gram(x, vec_sigma, *b), bounds))
    else:
        grams = [_block_gram(x, vec_sigma, *b) for b in bounds]
    total = np.zeros((p * p, p * p))
    for g in grams:  # fixed order: deterministic reduction
        total += g
    return VSigma(total / n, method="empirical", n_used=n)


def correlation_jacobian(r: np.ndarray) -> np.ndarray:
    """Delta-method Jacobian of the covariance-to-correlation map at unit
    variances: Psi = I - 1/2 [(I (x) R) + (R (x) I)] Lambda."""
    r = np.asarray(r, dtype=float)
    p = r.shape[0]
    eye = np.eye(p)
    lam = diag_selector(p)
    return np.eye(p * p) - 0.5 * (np.kron(eye, r) + np.kron(r, eye)) @ lam


def vr_from_vsigma(vsig: VSigma, r: CorrelationEstimate) -> VR:
    """Push V_Sigma through the correlation Jacobian: V_R = Psi V_Sigma Psi'."""
    p = r.p
    if vsig.matrix.shape != (p * p, p * p):
        raise ValueError("VSigma dimension does not match the correlation matrix")
    psi = correlation_jacobian(r.matrix)
    out = psi @ vsig.matrix @ psi.T
    # Diagonal entries of a correlation matrix are constant; zero their
    # coordinates exactly rather than leaving roundoff.
    diag_idx = np.arange(p) * (p + 1)
    out[diag_idx, :] = 0.0
    out[:, diag_idx] = 0.0
    return VR(out)


def kron_contract(vr: VR, beta: np.ndarray, r_inv: np.ndarray) -> np.ndarray:
    """(beta' (x) R^{-1}) V_R (beta (x) R^{-1}) without forming Kronecker factors."""
    p = beta.size
    v4 = vr.matrix.reshape((p, p, p, p), order="F")
    mid = np.einsum("ijkl,j,l->ik", v4, beta, beta)
    return r_inv @ mid @ r_inv.T


def sigma_mc(
    beta: np.ndarray,
    r_ref: CorrelationEstimate,
    vr: VR,
    sigma2: float,
    n_o: int,
    n_r: int,
) -> np.ndarray:
    """Corrected covariance of the plug-in joint estimator."""
    beta = np.asarray(beta, dtype=float)
    if beta.size != r_ref.p:
        raise ValueError("beta dimension does not match the correlation matrix")
    r_inv = solve_spd(r_ref.matrix, np.eye(r_ref.p))
    naive = (sigma2 / n_o) * r_inv
    scale = (n_o + n_r) / (n_o * n_r)
    correction = scale * kron_contract(vr, beta, r_inv)
    out = naive + correction
    return 0.5 * (out + out.T)
