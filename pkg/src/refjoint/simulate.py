"""Desk-scale reproduction of the simulation studies: AR(1) covariates,
genotype-mimicking covariates, phenotypes at fixed heritability, and scenario
loops comparing the inference methods with and without tag-based selection."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import toeplitz
from scipy.stats import norm

from .estimator import (
    marginal_assoc,
    naive_cov,
    sigma2_hat,
    threshold_beta,
)
from .exceptions import SelectionNeverOccurred, ZeroSignal
from .inference import bh_adjust, fdp_tpp
from .linalg import CorrelationEstimate, CovariateMatrix, correlation, solve_spd, standardize
from .psat import (
    SelectionEvent,
    conditional_mle,
    decompose,
    tn_pvalue,
    truncation_region,
)
from .varcorrect import sigma_mc, vr_from_vsigma, vsigma_empirical, vsigma_gaussian

KNOWN_METHODS = ("full", "naive", "vc_gaussian", "vc_empirical", "vc_mle")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation cell.  ``causal_set`` and ``tag_index`` are 1-based, as
    in the common s* = {1, 20} notation."""

    p: int
    rho: float
    n_o: int
    n_r: int
    h: float
    causal_set: tuple
    reps: int
    seed: int
    beta_value: float = 1.0
    covariate_kind: str = "gaussian"  # gaussian | genotype
    tag_index: int = None
    threshold_rule: tuple = None  # None | ("z", alpha_sel, n_tests) | ("raw", t)
    methods: tuple = ("naive", "vc_empirical")
    alpha: float = 0.05
    threshold_alpha: float = None  # cutoff for zeroing small coefficients in the covariance
    resample_cap: int = 100_000
    n_threads: int = 1

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must be in (-1, 1)")
        if not 0.0 < self.h < 1.0:
            raise ValueError("h must be in (0, 1)")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        causal = tuple(sorted(int(i) for i in self.causal_set))
        if causal and not all(1 <= i <= self.p for i in causal):
            raise ValueError("causal_set must be within 1..p")
        object.__setattr__(self, "causal_set", causal)
        if self.covariate_kind not in ("gaussian", "genotype"):
            raise ValueError(f"unknown covariate kind {self.covariate_kind!r}")
        unknown = set(self.methods) - set(KNOWN_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.threshold_alpha is None:
            object.__setattr__(self, "threshold_alpha", self.alpha)
        if self.tag_index is not None and not 1 <= self.tag_index <= self.p:
            raise ValueError("tag_index must be within 1..p")

    @property
    def selection_active(self) -> bool:
        return self.tag_index is not None and self.threshold_rule is not None

    def beta(self) -> np.ndarray:
        b = np.zeros(self.p)
        for i in self.causal_set:
            b[i - 1] = self.beta_value
        return b


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    measures: dict  # method -> {measure -> value}
    selection_rate: float = None
    reps_done: int = 0
    reps_failed: int = 0

    def rows(self, scenario: str = "scenario"):
        """Long-format (scenario, method, measure, estimate, se) tuples."""
        out = []
        for method, vals in self.measures.items():
            for measure in sorted(vals):
                if measure.endswith("_se"):
                    continue
                out.append(
                    (scenario, method, measure, vals[measure], vals.get(measure + "_se"))
                )
        return out


def ar1_sigma(p: int, rho: float) -> np.ndarray:
    """Toeplitz power covariance rho^|i-j|."""
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must be in (-1, 1)")
    return toeplitz(rho ** np.arange(p))


def sample_gaussian(n: int, sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. rows with covariance sigma (Cholesky transform)."""
    chol = np.linalg.cholesky(sigma)
    return rng.standard_normal((n, sigma.shape[0])) @ chol.T


def maf_sample(rng: np.random.Generator) -> float:
    """Minor allele frequency: Beta(1,2)/2 with a floor at 0.05."""
    return max(rng.beta(1.0, 2.0) / 2.0, 0.05)


def genotype_transform(w: np.ndarray, q: float) -> np.ndarray:
    """Map latent Gaussian values to 0/1/2 dosages with MAF q:
    cutpoints at the (1 - 2q/3) and (1 - q/3) standard-normal quantiles."""
    lo = norm.ppf(1.0 - 2.0 * q / 3.0)
    hi = norm.ppf(1.0 - q / 3.0)
    w = np.asarray(w)
    return (w > lo).astype(np.int8) + (w >= hi).astype(np.int8)


def phenotype(
    x: CovariateMatrix, beta: np.ndarray, h: float, rng: np.random.Generator
) -> np.ndarray:
    """Outcome X beta + eps with noise variance set so the realized sample
    signal fraction equals h, then standardized."""
    beta = np.asarray(beta, dtype=float)
    if not x.standardized:
        raise ValueError("phenotype requires a standardized covariate matrix")
    signal = x.values @ beta
    if np.any(beta != 0.0):
        r_hat = x.values.T @ x.values / x.n
        explained = float(beta @ r_hat @ beta)
        if explained <= 0.0:
            raise ZeroSignal("beta' R beta is zero but h > 0 was requested")
        sd_eps = math.sqrt(explained * (1.0 - h) / h)
    else:
        sd_eps = 1.0
    y = signal + sd_eps * rng.standard_normal(x.n)
    y = y - y.mean()
    return y / math.sqrt(np.mean(y**2))


def _draw_covariates(cfg: ScenarioConfig, chol: np.ndarray, rng: np.random.Generator):
    """One (X_o, X_r) pair, standardized, from the configured generator."""
    p = cfg.p
    if cfg.covariate_kind == "gaussian":
        raw = rng.standard_normal((cfg.n_o + cfg.n_r, p)) @ chol.T
    else:
        latent = rng.standard_normal((cfg.n_o + cfg.n_r, p)) @ chol.T
        raw = np.empty_like(latent)
        for j in range(p):
            col = genotype_transform(latent[:, j], maf_sample(rng)).astype(float)
            while col.std() == 0.0:  # re-draw a column with no minor alleles
                fresh = rng.standard_normal(cfg.n_o + cfg.n_r)
                col = genotype_transform(fresh, maf_sample(rng)).astype(float)
            raw[:, j] = col
    x_o = standardize(raw[: cfg.n_o])
    x_r = standardize(raw[cfg.n_o :])
    return x_o, x_r


def marginal_threshold(cfg: ScenarioConfig) -> float:
    """Absolute cutoff on the tag marginal coefficient implied by the rule."""
    kind = cfg.threshold_rule[0]
    if kind == "z":
        _, alpha_sel, n_tests = cfg.threshold_rule
        return norm.ppf(1.0 - alpha_sel / (2.0 * n_tests)) / math.sqrt(cfg.n_o)
    if kind == "raw":
        return math.sqrt(cfg.threshold_rule[1])
    raise ValueError(f"unknown threshold rule {cfg.threshold_rule!r}")


def _conditional_pvalues(beta_hat, cov, r, event):
    p = beta_hat.size
    pvals = np.empty(p)
    for i in range(p):
        eta = np.zeros(p)
        eta[i] = 1.0
        u, w, c = decompose(beta_hat, cov, eta)
        region = truncation_region(w, c, r, event, u_obs=u)
        pvals[i] = tn_pvalue(u, 0.0, cov[i, i], region)
    return pvals


def _wald_pvalues(beta_hat, cov):
    z = beta_hat / np.sqrt(np.diag(cov))
    return 2.0 * norm.sf(np.abs(z))


def _corrected_cov(beta_for_cov, x_r, r_r, sigma2, cfg, gaussian: bool):
    if gaussian:
        vsig = vsigma_gaussian(r_r.matrix, n_used=cfg.n_r)
    else:
        vsig = vsigma_empirical(x_r)
    vr = vr_from_vsigma(vsig, r_r)
    return sigma_mc(beta_for_cov, r_r, vr, sigma2, cfg.n_o, cfg.n_r)


def _run_rep(cfg: ScenarioConfig, chol: np.ndarray, beta_true: np.ndarray, seed_seq):
    """One repetition.  Returns (per-method (fdp, tpp), first_draw_selected)
    or None when the resample cap is hit."""
    rng = np.random.default_rng(seed_seq)
    x_o, x_r = _draw_covariates(cfg, chol, rng)
    causal0 = {i - 1 for i in cfg.causal_set}

    first_selected = None
    event = None
    if cfg.selection_active:
        tag0 = cfg.tag_index - 1
        thr = marginal_threshold(cfg)
        event = SelectionEvent("quadratic_tag", threshold=thr * thr, tag_index=tag0)
        signal = x_o.values @ beta_true
        if np.any(beta_true != 0.0):
            r_hat = x_o.values.T @ x_o.values / x_o.n
            explained = float(beta_true @ r_hat @ beta_true)
            sd_eps = math.sqrt(explained * (1.0 - cfg.h) / cfg.h)
        else:
            sd_eps = 1.0
        y = None
        for attempt in range(cfg.resample_cap):
            cand = signal + sd_eps * rng.standard_normal(cfg.n_o)
            cand = cand - cand.mean()
            cand = cand / math.sqrt(np.mean(cand**2))
            beta_m_tag = float(x_o.values[:, tag0] @ cand / cfg.n_o)
            selected = abs(beta_m_tag) > thr
            if attempt == 0:
                first_selected = selected
            if selected:
                y = cand
                break
        if y is None:
            return None
    else:
        y = phenotype(x_o, beta_true, cfg.h, rng)

    summary = marginal_assoc(x_o, y)
    r_o = correlation(x_o, source="original")
    r_r = correlation(x_r, source="reference")
    beta_mc = solve_spd(r_r.matrix, summary.beta_m)
    sigma2_mc = sigma2_hat(beta_mc, r_r)

    out = {}
    for method in cfg.methods:
        if method == "full":
            beta_hat = solve_spd(r_o.matrix, summary.beta_m)
            s2 = sigma2_hat(beta_hat, r_o)
            cov = naive_cov(r_o, s2, cfg.n_o)
            if event is not None:
                pvals = _conditional_pvalues(beta_hat, cov, r_o, event)
            else:
                pvals = _wald_pvalues(beta_hat, cov)
        elif method == "naive":
            cov = naive_cov(r_r, sigma2_mc, cfg.n_o)
            # with selection active this is the non-adjusted comparison arm
            pvals = _wald_pvalues(beta_mc, cov)
        elif method in ("vc_gaussian", "vc_empirical"):
            beta_cov = threshold_beta(
                beta_mc, r_r, sigma2_mc, cfg.n_o, alpha=cfg.threshold_alpha
            )
            cov = _corrected_cov(
                beta_cov, x_r, r_r, sigma2_mc, cfg, gaussian=(method == "vc_gaussian")
            )
            if event is not None:
                pvals = _conditional_pvalues(beta_mc, cov, r_r, event)
            else:
                pvals = _wald_pvalues(beta_mc, cov)
        elif method == "vc_mle":
            if event is None:
                raise ValueError("vc_mle requires an active selection rule")
            cov0 = naive_cov(r_r, sigma2_mc, cfg.n_o)
            cond = conditional_mle(beta_mc, cov0, event, r_ref=r_r)
            s2 = sigma2_hat(cond.beta_tilde, r_r)
            beta_cov = threshold_beta(
                cond.beta_tilde, r_r, s2, cfg.n_o, alpha=cfg.threshold_alpha
            )
            cov = _corrected_cov(beta_cov, x_r, r_r, s2, cfg, gaussian=False)
            pvals = _conditional_pvalues(beta_mc, cov, r_r, event)
        else:  # pragma: no cover
            raise ValueError(method)
        _, rejected = bh_adjust(pvals, cfg.alpha)
        out[method] = fdp_tpp({i for i in range(cfg.p) if rejected[i]}, causal0)
    return out, first_selected


def _mean_se(values):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else float("nan")
    return mean, se


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Run all repetitions of a cell and aggregate FDR/power estimates.

    Deterministic for a fixed seed and any thread count: every repetition
    draws from its own seed substream and results are combined by index.
    """
    sigma = ar1_sigma(cfg.p, cfg.rho)
    chol = np.linalg.cholesky(sigma)
    beta_true = cfg.beta()
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.reps)

    if cfg.n_threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_threads) as pool:
            raw = list(
                pool.map(lambda s: _run_rep(cfg, chol, beta_true, s), children)
            )
    else:
        raw = [_run_rep(cfg, chol, beta_true, s) for s in children]

    failed = sum(1 for r in raw if r is None)
    if failed > 0.05 * cfg.reps:
        raise SelectionNeverOccurred(
            f"selection failed within the resample cap in {failed}/{cfg.reps} "
            "repetitions"
        )
    done = [r for r in raw if r is not None]

    measures = {}
    for method in cfg.methods:
        fdps = [r[0][method][0] for r in done]
        tpps = [r[0][method][1] for r in done]
        fdr, fdr_se = _mean_se(fdps)
        power, power_se = _mean_se(tpps)
        vals = {"fdr": fdr, "fdr_se": fdr_se, "power": power, "power_se": power_se}
        if cfg.selection_active:
            # conditional power is over selected analyses (all completed reps);
            # unconditional counts first-draw non-selections as zero detections
            uncond = [
                tpp if first else 0.0
                for (per_method, first), tpp in zip(done, tpps)
            ]
            vals["power_conditional"] = power
            vals["power_conditional_se"] = power_se
            vals["power_unconditional"], vals["power_unconditional_se"] = _mean_se(
                uncond
            )
        measures[method] = vals

    selection_rate = None
    if cfg.selection_active:
        selection_rate, _ = _mean_se([1.0 if r[1] else 0.0 for r in done])
    return ScenarioResult(
        config=cfg,
        measures=measures,
        selection_rate=selection_rate,
        reps_done=len(done),
        reps_failed=failed,
    )
