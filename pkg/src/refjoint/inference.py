"""Per-coefficient Wald tests, Benjamini-Hochberg adjustment and the
false/true discovery proportions used to score simulations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .estimator import JointEstimate
from .exceptions import NonPositiveVariance


@dataclass(frozen=True)
class TestReport:
    ids: tuple
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    pvalue: np.ndarray
    p_adjusted: np.ndarray
    rejected: np.ndarray
    method: str
    alpha: float
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def p(self) -> int:
        return len(self.ids)

    @property
    def rejected_set(self) -> set:
        return {i for i in range(self.p) if self.rejected[i]}


def wald_tests(est: JointEstimate, alpha: float = 0.05, ids=None) -> TestReport:
    """Two-sided normal tests of each coefficient, BH-adjusted at ``alpha``."""
    var = np.diag(est.sigma_mc)
    for i, v in enumerate(var):
        if v <= 0.0:
            raise NonPositiveVariance(i, v)
    se = np.sqrt(var)
    z = est.beta_mc / se
    pvals = 2.0 * norm.sf(np.abs(z))
    adjusted, rejected = bh_adjust(pvals, alpha)
    if ids is None:
        ids = est.ids if est.ids is not None else tuple(str(i) for i in range(est.p))
    return TestReport(
        ids=tuple(ids),
        beta=est.beta_mc,
        se=se,
        z=z,
        pvalue=pvals,
        p_adjusted=adjusted,
        rejected=rejected,
        method=est.method,
        alpha=alpha,
    )


def bh_adjust(pvalues: np.ndarray, q: float):
    """Step-up BH adjusted p-values and the rejection indicator at level q."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    # enforce monotonicity from the largest rank down
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    ranked = np.minimum(ranked, 1.0)
    adjusted = np.empty(m)
    adjusted[order] = ranked
    rejected = adjusted <= q
    return adjusted, rejected


def fdp_tpp(rejected, causal):
    """False discovery proportion and true positive proportion.

    FDP of an empty rejection set is 0 by convention.
    """
    rejected = set(rejected)
    causal = set(causal)
    if rejected:
        fdp = len(rejected - causal) / len(rejected)
    else:
        fdp = 0.0
    tpp = len(rejected & causal) / len(causal) if causal else 0.0
    return fdp, tpp
