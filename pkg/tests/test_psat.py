import numpy as np
import pytest
from scipy.stats import norm

from refjoint.estimator import MarginalSummary, marginal_assoc
from refjoint.exceptions import DegenerateDirection, EmptyRegion
from refjoint.linalg import CorrelationEstimate, standardize
from refjoint.psat import (
    PsatOptions,
    SelectionEvent,
    TruncationRegion,
    conditional_mle,
    decompose,
    psat_pipeline,
    selection_prob,
    selection_stat,
    tn_pvalue,
    truncation_region,
)


def _corr(matrix, n=1000):
    return CorrelationEstimate(np.asarray(matrix, dtype=float), n_panel=n)


def _ar1(p, rho):
    return rho ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))


class TestSelectionEvent:
    def test_quadratic_needs_tag(self):
        with pytest.raises(ValueError):
            SelectionEvent("quadratic_tag", threshold=1.0)

    def test_quadratic_needs_positive_threshold(self):
        with pytest.raises(ValueError):
            SelectionEvent("quadratic_tag", threshold=0.0, tag_index=0)

    def test_linear_needs_contrast(self):
        with pytest.raises(ValueError):
            SelectionEvent("linear", threshold=1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SelectionEvent("cubic", threshold=1.0, tag_index=0)


class TestSelectionStat:
    def test_identity_panel_quadratic(self):
        event = SelectionEvent("quadratic_tag", threshold=0.01, tag_index=1)
        got = selection_stat(np.array([0.5, -0.3, 0.1]), _corr(np.eye(3)), event)
        assert got == pytest.approx(0.09, abs=1e-14)

    def test_correlated_panel_uses_implied_marginal(self):
        # the statistic is (R[tag] . b)^2, the squared tag-coordinate of R b
        r = _ar1(3, 0.5)
        b = np.array([1.0, 0.0, -1.0])
        event = SelectionEvent("quadratic_tag", threshold=0.01, tag_index=0)
        expected = float(r[0] @ b) ** 2
        assert selection_stat(b, _corr(r), event) == pytest.approx(expected, abs=1e-14)

    def test_linear(self):
        event = SelectionEvent("linear", threshold=0.0, contrast=[1.0, -1.0])
        assert selection_stat(np.array([0.7, 0.2]), None, event) == pytest.approx(0.5)


class TestDecompose:
    def test_reconstruction_and_orthogonality(self):
        rng = np.random.default_rng(50)
        sigma = _ar1(4, 0.6) * 0.02
        b = rng.standard_normal(4)
        eta = np.zeros(4)
        eta[2] = 1.0
        u, w, c = decompose(b, sigma, eta)
        assert u == pytest.approx(b[2], abs=1e-14)
        np.testing.assert_allclose(w + c * u, b, atol=1e-12)
        # the residual part has zero covariance with the tested combination
        assert eta @ w == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(
            (np.eye(4) - np.outer(c, eta)) @ sigma @ eta, np.zeros(4), atol=1e-12
        )

    def test_c_normalization(self):
        sigma = np.diag([4.0, 1.0])
        _, _, c = decompose(np.array([1.0, 1.0]), sigma, np.array([1.0, 0.0]))
        np.testing.assert_allclose(c, [1.0, 0.0], atol=1e-14)

    def test_degenerate_direction(self):
        sigma = np.diag([1.0, 0.0])
        with pytest.raises(DegenerateDirection):
            decompose(np.zeros(2), sigma, np.array([0.0, 1.0]))


class TestTruncationRegion:
    def test_two_sided_quadratic(self):
        # (0 + u)^2 > 4  <=>  u < -2 or u > 2
        event = SelectionEvent("quadratic_tag", threshold=4.0, tag_index=0)
        region = truncation_region(np.zeros(1), np.ones(1), _corr(np.eye(1)), event)
        assert region.intervals == ((-np.inf, -2.0), (2.0, np.inf))

    def test_shifted_quadratic(self):
        # (1 + 2u)^2 > 9  <=>  u < -2 or u > 1
        event = SelectionEvent("quadratic_tag", threshold=9.0, tag_index=0)
        region = truncation_region(
            np.array([1.0]), np.array([2.0]), _corr(np.eye(1)), event
        )
        assert region.intervals == ((-np.inf, -2.0), (1.0, np.inf))

    def test_linear_half_lines(self):
        event = SelectionEvent("linear", threshold=1.0, contrast=[1.0, 0.0])
        up = truncation_region(np.zeros(2), np.array([2.0, 0.0]), None, event)
        assert up.intervals == ((0.5, np.inf),)
        down = truncation_region(np.zeros(2), np.array([-2.0, 0.0]), None, event)
        assert down.intervals == ((-np.inf, -0.5),)

    def test_insensitive_direction_full_line(self):
        # c orthogonal to the event direction: selection holds for every u
        event = SelectionEvent("quadratic_tag", threshold=4.0, tag_index=0)
        region = truncation_region(
            np.array([3.0, 0.0]), np.array([0.0, 1.0]), _corr(np.eye(2)), event
        )
        assert region.is_full_line

    def test_insensitive_direction_empty(self):
        event = SelectionEvent("quadratic_tag", threshold=4.0, tag_index=0)
        with pytest.raises(EmptyRegion):
            truncation_region(
                np.array([1.0, 0.0]), np.array([0.0, 1.0]), _corr(np.eye(2)), event
            )

    def test_observed_point_must_lie_inside(self):
        event = SelectionEvent("quadratic_tag", threshold=4.0, tag_index=0)
        with pytest.raises(EmptyRegion):
            truncation_region(
                np.zeros(1), np.ones(1), _corr(np.eye(1)), event, u_obs=0.0
            )

    def test_grid_oracle(self):
        # membership in the region must agree with directly evaluating the
        # selection statistic at W + c u on a random grid
        rng = np.random.default_rng(51)
        for _ in range(50):
            p = int(rng.integers(2, 6))
            r = _ar1(p, float(rng.uniform(-0.8, 0.8)))
            if rng.random() < 0.5:
                event = SelectionEvent(
                    "quadratic_tag",
                    threshold=float(rng.uniform(0.01, 2.0)),
                    tag_index=int(rng.integers(p)),
                )
            else:
                event = SelectionEvent(
                    "linear",
                    threshold=float(rng.uniform(-1.0, 1.0)),
                    contrast=rng.standard_normal(p),
                )
            w = rng.standard_normal(p)
            c = rng.standard_normal(p)
            try:
                region = truncation_region(w, c, _corr(r), event)
            except EmptyRegion:
                region = None
            for u in rng.uniform(-20.0, 20.0, size=100):
                stat = selection_stat(w + c * u, _corr(r), event)
                inside = stat > event.threshold
                got = region.contains(u, tol=1e-12) if region is not None else False
                assert got == inside, (event.kind, u, stat)

    def test_region_validation(self):
        with pytest.raises(ValueError):
            TruncationRegion(((1.0, 1.0),))
        with pytest.raises(ValueError):
            TruncationRegion(((0.0, 2.0), (1.0, 3.0)))


class TestTnPvalue:
    def test_full_line_equals_wald(self):
        region = TruncationRegion(((-np.inf, np.inf),))
        for u in (0.0, 1.3, -2.4):
            expected = 2.0 * norm.sf(abs(u))
            assert tn_pvalue(u, 0.0, 1.0, region) == pytest.approx(expected, rel=1e-10)

    def test_symmetric_region_boundary_point(self):
        # just inside the right branch of a symmetric two-sided region the
        # truncated CDF is 1/2, so the two-sided p-value is ~1
        region = TruncationRegion(((-np.inf, -2.0), (2.0, np.inf)))
        assert tn_pvalue(2.0 + 1e-9, 0.0, 1.0, region) == pytest.approx(1.0, abs=1e-6)

    def test_numeric_integration_oracle(self):
        from scipy.integrate import quad

        rng = np.random.default_rng(52)
        region = TruncationRegion(((-4.0, -1.0), (0.5, 3.0)))
        for _ in range(10):
            mu = float(rng.uniform(-1.0, 1.0))
            sd = float(rng.uniform(0.5, 2.0))
            u = float(rng.uniform(0.6, 2.9))
            total = sum(
                quad(lambda x: norm.pdf(x, mu, sd), a, b)[0]
                for a, b in region.intervals
            )
            lower = quad(lambda x: norm.pdf(x, mu, sd), -4.0, -1.0)[0]
            lower += quad(lambda x: norm.pdf(x, mu, sd), 0.5, u)[0]
            f = lower / total
            expected = min(1.0, 2.0 * min(f, 1.0 - f))
            got = tn_pvalue(u, mu, sd * sd, region)
            assert got == pytest.approx(expected, abs=1e-8)

    def test_deep_tail_does_not_underflow(self):
        # both the observation and the region live 40 sds out; naive cdf
        # arithmetic would return 0/0
        region = TruncationRegion(((40.0, np.inf),))
        got = tn_pvalue(41.0, 0.0, 1.0, region)
        assert 0.0 < got <= 1.0

    def test_point_outside_region_rejected(self):
        region = TruncationRegion(((2.0, np.inf),))
        with pytest.raises(EmptyRegion):
            tn_pvalue(0.0, 0.0, 1.0, region)

    def test_uniform_under_null_small(self):
        # quick distributional check: conditional p-values of the truncated
        # normal are U(0,1) under the null (full KS run lives in acceptance)
        rng = np.random.default_rng(53)
        region = TruncationRegion(((-np.inf, -1.0), (1.0, np.inf)))
        pvals = []
        while len(pvals) < 300:
            u = rng.standard_normal()
            if region.contains(u, tol=0.0):
                pvals.append(tn_pvalue(u, 0.0, 1.0, region))
        from scipy.stats import kstest

        assert kstest(pvals, "uniform").pvalue > 0.001


class TestSelectionProb:
    def test_centered_quadratic_matches_two_sided_tail(self):
        # m = 0, threshold (1.959964 s)^2 -> probability alpha = 0.05
        s = 0.3
        t = (norm.ppf(0.975) * s) ** 2
        event = SelectionEvent("quadratic_tag", threshold=t, tag_index=0)
        got = selection_prob(
            np.zeros(1), np.array([[s * s]]), event, r_ref=_corr(np.eye(1))
        )
        assert got == pytest.approx(0.05, abs=1e-10)

    def test_linear_is_normal_tail(self):
        event = SelectionEvent("linear", threshold=1.0, contrast=[1.0, 0.0])
        got = selection_prob(np.array([0.5, 9.9]), 0.04 * np.eye(2), event)
        assert got == pytest.approx(norm.sf((1.0 - 0.5) / 0.2), rel=1e-10)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(54)
        for _ in range(5):
            p = int(rng.integers(2, 5))
            r = _ar1(p, float(rng.uniform(0.0, 0.8)))
            a = rng.standard_normal((p, p))
            sigma = 0.01 * (a @ a.T + p * np.eye(p))
            beta = 0.2 * rng.standard_normal(p)
            event = SelectionEvent(
                "quadratic_tag",
                threshold=float(rng.uniform(0.005, 0.05)),
                tag_index=int(rng.integers(p)),
            )
            draws = rng.multivariate_normal(beta, sigma, size=100_000)
            k = r[event.tag_index]
            mc = float(np.mean((draws @ k) ** 2 > event.threshold))
            got = selection_prob(beta, sigma, event, r_ref=_corr(r))
            assert got == pytest.approx(mc, abs=0.006)


class TestConditionalMle:
    def test_non_binding_selection_leaves_estimate(self):
        # selection probability ~1: the penalty is flat, so the conditional
        # estimate stays at the plug-in value
        event = SelectionEvent("quadratic_tag", threshold=1e-12, tag_index=0)
        beta = np.array([0.5, -0.2])
        out = conditional_mle(beta, 0.01 * np.eye(2), event, r_ref=_corr(np.eye(2)))
        assert out.converged
        np.testing.assert_allclose(out.beta_tilde, beta, atol=1e-6)

    def test_binding_selection_shrinks_toward_threshold(self):
        # the penalty pushes the implied marginal coefficient toward the
        # selection boundary from above
        event = SelectionEvent("quadratic_tag", threshold=0.0225, tag_index=0)
        beta = np.array([0.2])
        out = conditional_mle(beta, np.array([[0.01]]), event, r_ref=_corr(np.eye(1)))
        assert out.converged
        assert 0.0 < out.beta_tilde[0] < beta[0]

    def test_grid_search_oracle_1d(self):
        event = SelectionEvent("quadratic_tag", threshold=0.0225, tag_index=0)
        beta = np.array([0.2])
        var = 0.01
        out = conditional_mle(beta, np.array([[var]]), event, r_ref=_corr(np.eye(1)))

        def neg_log_lik(b):
            quad = 0.5 * (b - 0.2) ** 2 / var
            s = np.sqrt(var)
            log_p = np.logaddexp(
                norm.logcdf((-0.15 - b) / s), norm.logsf((0.15 - b) / s)
            )
            return quad + log_p

        grid = np.linspace(-0.5, 0.5, 200_001)
        best = grid[np.argmin(neg_log_lik(grid))]
        assert out.beta_tilde[0] == pytest.approx(best, abs=1e-4)

    def test_multivariate_moves_only_along_penalized_direction(self):
        # the penalty depends on beta only through k'beta, so the update is
        # proportional to Sigma k
        event = SelectionEvent("quadratic_tag", threshold=0.01, tag_index=0)
        r = _ar1(3, 0.5)
        sigma = 0.005 * _ar1(3, 0.3)
        beta = np.array([0.3, 0.1, -0.2])
        out = conditional_mle(beta, sigma, event, r_ref=_corr(r))
        step = out.beta_tilde - beta
        direction = sigma @ r[0]
        cross = np.cross(
            step / np.linalg.norm(step), direction / np.linalg.norm(direction)
        )
        assert np.linalg.norm(cross) == pytest.approx(0.0, abs=1e-5)


class TestPsatPipeline:
    @staticmethod
    def _dataset(seed=60, p=4, n_o=4000, n_r=400, rho=0.6, beta=None):
        rng = np.random.default_rng(seed)
        chol = np.linalg.cholesky(_ar1(p, rho))
        x_o = standardize(rng.standard_normal((n_o, p)) @ chol.T)
        x_r = standardize(rng.standard_normal((n_r, p)) @ chol.T)
        if beta is None:
            beta = np.zeros(p)
            beta[0] = 0.3
        y = x_o.values @ beta + rng.standard_normal(n_o)
        y = (y - y.mean()) / np.sqrt(np.mean((y - y.mean()) ** 2))
        return marginal_assoc(x_o, y), x_r

    def test_not_selected_short_circuits(self):
        summary, panel = self._dataset()
        event = SelectionEvent("quadratic_tag", threshold=100.0, tag_index=0)
        result = psat_pipeline(summary, panel, event)
        assert not result.selected
        assert result.report is None
        assert result.stat <= result.threshold

    def test_selected_report_shape(self):
        summary, panel = self._dataset()
        event = SelectionEvent("quadratic_tag", threshold=1e-6, tag_index=0)
        result = psat_pipeline(summary, panel, event)
        assert result.selected
        rep = result.report
        assert rep.method == "psat_empirical_mle"
        assert rep.pvalue.shape == (4,)
        assert np.all((rep.pvalue >= 0) & (rep.pvalue <= 1))
        assert np.all((rep.p_adjusted >= rep.pvalue - 1e-12))
        assert result.mle_converged

    def test_deterministic(self):
        summary, panel = self._dataset()
        event = SelectionEvent("quadratic_tag", threshold=1e-4, tag_index=0)
        r1 = psat_pipeline(summary, panel, event)
        r2 = psat_pipeline(summary, panel, event)
        np.testing.assert_array_equal(r1.report.pvalue, r2.report.pvalue)
        np.testing.assert_array_equal(r1.beta_tilde, r2.beta_tilde)

    def test_options_change_method_tag(self):
        summary, panel = self._dataset()
        event = SelectionEvent("quadratic_tag", threshold=1e-6, tag_index=0)
        opts = PsatOptions(cov_method="gaussian", use_conditional_mle=False)
        result = psat_pipeline(summary, panel, event, options=opts)
        assert result.report.method == "psat_gaussian"
        np.testing.assert_array_equal(result.beta_tilde, result.beta_mc)

    def test_sigma2_policy_one(self):
        summary, panel = self._dataset()
        event = SelectionEvent("quadratic_tag", threshold=1e-6, tag_index=0)
        result = psat_pipeline(
            summary, panel, event, options=PsatOptions(sigma2_policy="one")
        )
        assert result.sigma2 == 1.0

    def test_mle_debiasing_reduces_tag_marginal(self):
        # under a binding selection event the conditional estimate moves the
        # implied tag marginal toward the boundary
        summary, panel = self._dataset(beta=np.array([0.06, 0.0, 0.0, 0.0]))
        from refjoint.linalg import correlation

        r = correlation(panel)
        event = SelectionEvent(
            "quadratic_tag",
            threshold=0.8 * selection_stat(
                np.linalg.solve(r.matrix, summary.beta_m), r, SelectionEvent(
                    "quadratic_tag", threshold=1.0, tag_index=0
                )
            ),
            tag_index=0,
        )
        result = psat_pipeline(summary, panel, event)
        assert result.selected
        tag_mc = abs(float(r.matrix[0] @ result.beta_mc))
        tag_tilde = abs(float(r.matrix[0] @ result.beta_tilde))
        assert tag_tilde < tag_mc
