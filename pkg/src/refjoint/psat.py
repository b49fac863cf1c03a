"""Conditional inference after an aggregate selection event.

A region enters the analysis only if an aggregate statistic of the joint
coefficients clears a threshold (either the squared tag coordinate of the
implied marginal vector, or a linear contrast).  Valid per-coefficient
p-values then come from the normal distribution truncated to the values of
the tested linear combination that are consistent with selection, and the
coefficients fed into the covariance correction are debiased by a
selection-penalized maximum-likelihood step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp
from scipy.stats import norm

from .estimator import (
    JointEstimate,
    MarginalSummary,
    joint_from_marginal,
    naive_cov,
    sigma2_hat,
    threshold_beta,
)
from .exceptions import (
    DegenerateDirection,
    EmptyRegion,
    NumericalUnderflow,
)
from .inference import TestReport, bh_adjust
from .linalg import CorrelationEstimate, CovariateMatrix, correlation
from .varcorrect import sigma_mc, vr_from_vsigma, vsigma_empirical, vsigma_gaussian


@dataclass(frozen=True)
class SelectionEvent:
    """Aggregate selection rule with threshold t > 0 (strict inequality).

    ``quadratic_tag``: S = (e*' R_hat b)^2, the squared marginal coefficient
    of the tag coordinate.  ``linear``: S = a' b for a fixed contrast a.
    """

    kind: str  # "quadratic_tag" or "linear"
    threshold: float
    tag_index: int = None
    contrast: np.ndarray = None

    def __post_init__(self):
        if self.kind == "quadratic_tag":
            if self.tag_index is None or self.contrast is not None:
                raise ValueError("quadratic_tag events take tag_index only")
            if self.threshold <= 0:
                raise ValueError("quadratic threshold must be positive")
        elif self.kind == "linear":
            if self.contrast is None or self.tag_index is not None:
                raise ValueError("linear events take a contrast only")
            object.__setattr__(
                self, "contrast", np.asarray(self.contrast, dtype=float)
            )
        else:
            raise ValueError(f"unknown selection kind {self.kind!r}")


@dataclass(frozen=True)
class TruncationRegion:
    """Disjoint, sorted open intervals over the real line."""

    intervals: tuple

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if not a < b:
                raise ValueError(f"degenerate interval ({a}, {b})")
        for (_, b1), (a2, _) in zip(ivs, ivs[1:]):
            if b1 > a2:
                raise ValueError("intervals must be disjoint and sorted")
        object.__setattr__(self, "intervals", ivs)

    @property
    def is_full_line(self) -> bool:
        return self.intervals == ((-np.inf, np.inf),)

    def contains(self, u: float, tol: float = 1e-9) -> bool:
        pad = tol * max(1.0, abs(u))
        return any(a - pad < u < b + pad for a, b in self.intervals)


@dataclass(frozen=True)
class ConditionalEstimate:
    beta_tilde: np.ndarray
    converged: bool
    neg_log_lik: float


@dataclass(frozen=True)
class PsatOptions:
    cov_method: str = "empirical"  # empirical | gaussian | naive
    use_conditional_mle: bool = True
    threshold: bool = True
    threshold_alpha: float = 0.05
    sigma2_policy: str = "estimate"  # estimate | one
    n_threads: int = 1


@dataclass(frozen=True)
class PsatResult:
    selected: bool
    stat: float
    threshold: float
    report: TestReport = None
    beta_mc: np.ndarray = None
    beta_tilde: np.ndarray = None
    sigma2: float = None
    mle_converged: bool = None
    extras: dict = field(default_factory=dict, compare=False)


def _event_direction(event: SelectionEvent, r_ref: CorrelationEstimate) -> np.ndarray:
    """Vector k such that the statistic depends on b only through k'b."""
    if event.kind == "quadratic_tag":
        if r_ref is None:
            raise ValueError("quadratic_tag events need the panel correlation")
        return r_ref.matrix[event.tag_index].copy()
    return event.contrast


def selection_stat(
    beta_mc: np.ndarray, r_ref: CorrelationEstimate, event: SelectionEvent
) -> float:
    beta_mc = np.asarray(beta_mc, dtype=float)
    k = _event_direction(event, r_ref)
    s = float(k @ beta_mc)
    return s * s if event.kind == "quadratic_tag" else s


def decompose(beta_mc: np.ndarray, sigma: np.ndarray, eta: np.ndarray):
    """Split b into the tested scalar u = eta'b and the part W uncorrelated
    with it: c = Sigma eta / (eta' Sigma eta), W = b - c u."""
    beta_mc = np.asarray(beta_mc, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    eta = np.asarray(eta, dtype=float)
    denom = float(eta @ sigma @ eta)
    if denom <= 0.0:
        raise DegenerateDirection(f"eta' Sigma eta = {denom} is not positive")
    c = sigma @ eta / denom
    u = float(eta @ beta_mc)
    w = beta_mc - c * u
    return u, w, c


def truncation_region(
    w: np.ndarray,
    c: np.ndarray,
    r_ref: CorrelationEstimate,
    event: SelectionEvent,
    u_obs: float = None,
) -> TruncationRegion:
    """Values of u for which W + c u satisfies the selection event."""
    k = _event_direction(event, r_ref)
    a = float(k @ np.asarray(w, dtype=float))
    b = float(k @ np.asarray(c, dtype=float))
    t = event.threshold
    if event.kind == "quadratic_tag":
        # (a + b u)^2 > t
        if b == 0.0:
            if a * a > t:
                region = TruncationRegion(((-np.inf, np.inf),))
            else:
                raise EmptyRegion(
                    "selection cannot hold for any value of the tested combination"
                )
        else:
            roots = sorted(((-np.sqrt(t) - a) / b, (np.sqrt(t) - a) / b))
            region = TruncationRegion(((-np.inf, roots[0]), (roots[1], np.inf)))
    else:
        # a + b u > t
        if b == 0.0:
            if a > t:
                region = TruncationRegion(((-np.inf, np.inf),))
            else:
                raise EmptyRegion(
                    "selection cannot hold for any value of the tested combination"
                )
        elif b > 0.0:
            region = TruncationRegion((((t - a) / b, np.inf),))
        else:
            region = TruncationRegion(((-np.inf, (t - a) / b),))
    if u_obs is not None and not region.contains(u_obs):
        raise EmptyRegion(
            f"observed statistic {u_obs} lies outside the truncation region "
            f"{region.intervals}; inputs are inconsistent"
        )
    return region


def _log_interval_mass(lo: float, hi: float, mu: float, sd: float) -> float:
    """log P(lo < N(mu, sd^2) < hi) with tail-safe arithmetic."""
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    if a >= b:
        return -np.inf
    if a == -np.inf and b == np.inf:
        return 0.0
    if b <= 0.0:
        la, lb = norm.logcdf(a), norm.logcdf(b)
        if la == -np.inf:
            return lb
        diff = la - lb
        return lb + np.log1p(-np.exp(diff)) if diff < 0 else -np.inf
    if a >= 0.0:
        la, lb = norm.logsf(a), norm.logsf(b)
        if lb == -np.inf:
            return la
        diff = lb - la
        return la + np.log1p(-np.exp(diff)) if diff < 0 else -np.inf
    mass = norm.cdf(b) - norm.cdf(a)
    return np.log(mass) if mass > 0 else -np.inf


def tn_pvalue(
    u_obs: float, mu0: float, var: float, region: TruncationRegion
) -> float:
    """Two-sided p-value of u_obs under N(mu0, var) truncated to ``region``:
    2 min(F, 1 - F) with the truncated CDF F computed on the log scale."""
    if var <= 0.0:
        raise ValueError("variance must be positive")
    if not region.contains(u_obs):
        raise EmptyRegion(f"observed statistic {u_obs} is not inside the region")
    sd = np.sqrt(var)
    log_lower = []  # mass of region intersected with (-inf, u]
    log_upper = []  # mass of region intersected with [u, inf)
    log_total = []
    for a, b in region.intervals:
        log_total.append(_log_interval_mass(a, b, mu0, sd))
        if u_obs > a:
            log_lower.append(_log_interval_mass(a, min(b, u_obs), mu0, sd))
        if u_obs < b:
            log_upper.append(_log_interval_mass(max(a, u_obs), b, mu0, sd))
    log_den = logsumexp(log_total) if log_total else -np.inf
    if log_den == -np.inf:
        raise NumericalUnderflow(
            "truncation-region probability underflows even on the log scale"
        )
    log_f = (logsumexp(log_lower) if log_lower else -np.inf) - log_den
    log_s = (logsumexp(log_upper) if log_upper else -np.inf) - log_den
    p = 2.0 * np.exp(min(log_f, log_s))
    return float(min(p, 1.0))


def _log_selection_prob_and_dm(m: float, s: float, event: SelectionEvent):
    """log P(S > t) for k'b_hat ~ N(m, s^2), and its derivative in m."""
    if event.kind == "quadratic_tag":
        rt = np.sqrt(event.threshold)
        z1 = (-rt - m) / s
        z2 = (rt - m) / s
        log_p = logsumexp([norm.logcdf(z1), norm.logsf(z2)])
        dlog = (
            np.exp(norm.logpdf(z2) - log_p) - np.exp(norm.logpdf(z1) - log_p)
        ) / s
        return log_p, dlog
    z = (event.threshold - m) / s
    log_p = norm.logsf(z)
    dlog = np.exp(norm.logpdf(z) - log_p) / s
    return log_p, dlog


def selection_prob(
    beta: np.ndarray,
    sigma: np.ndarray,
    event: SelectionEvent,
    r_ref: CorrelationEstimate = None,
) -> float:
    """P(S > t) when the estimator is N(beta, sigma); closed form."""
    k = _event_direction(event, r_ref)
    m = float(k @ np.asarray(beta, dtype=float))
    s = float(np.sqrt(k @ sigma @ k))
    log_p, _ = _log_selection_prob_and_dm(m, s, event)
    return float(np.exp(log_p))


def conditional_mle(
    beta_mc: np.ndarray,
    sigma_naive: np.ndarray,
    event: SelectionEvent,
    r_ref: CorrelationEstimate = None,
    gtol: float = 1e-8,
    max_iter: int = 500,
) -> ConditionalEstimate:
    """Maximize the selection-penalized Gaussian likelihood
    l(beta) - log P(S > t | beta), starting from the plug-in estimate."""
    beta_mc = np.asarray(beta_mc, dtype=float)
    sigma_naive = np.asarray(sigma_naive, dtype=float)
    k = _event_direction(event, r_ref)
    s = float(np.sqrt(k @ sigma_naive @ k))
    # optimize in the whitened parameterization beta = beta_mc + C g so the
    # quadratic term is 1/2 g'g and the gradient tolerance is scale-free
    chol = np.linalg.cholesky(sigma_naive)
    ck = chol.T @ k
    m0 = float(k @ beta_mc)

    def objective(g):
        quad = 0.5 * float(g @ g)
        log_p, dlog = _log_selection_prob_and_dm(m0 + float(ck @ g), s, event)
        return quad + log_p, g + dlog * ck

    res = minimize(
        objective,
        np.zeros(beta_mc.size),
        jac=True,
        method="BFGS",
        options={"gtol": gtol, "maxiter": max_iter},
    )
    grad_norm = float(np.max(np.abs(res.jac)))
    converged = bool(res.success) or grad_norm <= 10 * gtol
    if not converged:
        warnings.warn(
            f"conditional MLE did not converge (|grad| = {grad_norm:.3e}); "
            "returning the last iterate",
            stacklevel=2,
        )
    return ConditionalEstimate(
        beta_tilde=beta_mc + chol @ res.x,
        converged=converged,
        neg_log_lik=float(res.fun),
    )


def psat_pipeline(
    summary: MarginalSummary,
    panel: CovariateMatrix,
    event: SelectionEvent,
    alpha: float = 0.05,
    options: PsatOptions = PsatOptions(),
) -> PsatResult:
    """Full conditional analysis of one region.

    Returns a non-selected result (cheaply, before any fourth-moment work)
    when the aggregate statistic does not clear the threshold.
    """
    if not panel.standardized:
        raise ValueError("the panel must be standardized")
    r_ref = correlation(panel, source="reference")
    n_o, n_r = summary.n_o, panel.n
    beta_mc = joint_from_marginal(summary, r_ref)
    stat = selection_stat(beta_mc, r_ref, event)
    if stat <= event.threshold:
        return PsatResult(selected=False, stat=stat, threshold=event.threshold)

    def est_sigma2(beta):
        if options.sigma2_policy == "one":
            return 1.0
        return sigma2_hat(beta, r_ref)

    sigma2_0 = est_sigma2(beta_mc)
    cov_naive = naive_cov(r_ref, sigma2_0, n_o)
    if options.use_conditional_mle:
        cond = conditional_mle(beta_mc, cov_naive, event, r_ref=r_ref)
        beta_tilde, converged = cond.beta_tilde, cond.converged
    else:
        beta_tilde, converged = beta_mc, True
    sigma2 = est_sigma2(beta_tilde)

    if options.cov_method == "naive":
        cov = naive_cov(r_ref, sigma2, n_o)
    else:
        beta_cov = beta_tilde
        if options.threshold:
            beta_cov = threshold_beta(
                beta_tilde, r_ref, sigma2, n_o, alpha=options.threshold_alpha
            )
        if options.cov_method == "gaussian":
            vsig = vsigma_gaussian(r_ref.matrix, n_used=n_r)
        elif options.cov_method == "empirical":
            vsig = vsigma_empirical(panel, n_threads=options.n_threads)
        else:
            raise ValueError(f"unknown covariance method {options.cov_method!r}")
        vr = vr_from_vsigma(vsig, r_ref)
        cov = sigma_mc(beta_cov, r_ref, vr, sigma2, n_o, n_r)

    p = summary.p
    pvals = np.empty(p)
    for i in range(p):
        eta = np.zeros(p)
        eta[i] = 1.0
        u, w, c = decompose(beta_mc, cov, eta)
        region = truncation_region(w, c, r_ref, event, u_obs=u)
        pvals[i] = tn_pvalue(u, 0.0, cov[i, i], region)
    adjusted, rejected = bh_adjust(pvals, alpha)
    ids = summary.ids if summary.ids is not None else tuple(str(i) for i in range(p))
    se = np.sqrt(np.diag(cov))
    report = TestReport(
        ids=ids,
        beta=beta_mc,
        se=se,
        z=beta_mc / se,
        pvalue=pvals,
        p_adjusted=adjusted,
        rejected=rejected,
        method=f"psat_{options.cov_method}"
        + ("_mle" if options.use_conditional_mle else ""),
        alpha=alpha,
    )
    return PsatResult(
        selected=True,
        stat=stat,
        threshold=event.threshold,
        report=report,
        beta_mc=beta_mc,
        beta_tilde=beta_tilde,
        sigma2=sigma2,
        mle_converged=converged,
    )
