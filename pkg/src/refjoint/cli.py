"""Command-line surface: ``estimate``, ``psat`` and ``simulate``.

Every flag can also be supplied through an environment variable named
``REFJOINT_<FLAG>`` (dashes become underscores); explicit flags win.

Exit codes: 0 success, 2 region not selected (``psat`` only), 1 error.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
import warnings

import numpy as np

from . import __version__
from .estimator import (
    joint_from_marginal,
    naive_cov,
    sigma2_hat,
    threshold_beta,
)
from .exceptions import RefjointError, RidgeWarning
from .inference import bh_adjust
from .io_files import (
    read_panel,
    read_summary,
    write_long_tsv,
    write_manifest,
    write_report_tsv,
)
from .linalg import correlation
from .psat import PsatOptions, SelectionEvent, psat_pipeline
from .simulate import ScenarioConfig, marginal_threshold, run_scenario
from .varcorrect import sigma_mc, vr_from_vsigma, vsigma_empirical, vsigma_gaussian

ENV_PREFIX = "REFJOINT_"


def _env_default(flag: str, fallback=None):
    return os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"), fallback)


def _add_common(parser):
    parser.add_argument("--summary", default=_env_default("summary"), required=False)
    parser.add_argument("--panel", default=_env_default("panel"), required=False)
    parser.add_argument(
        "--method",
        choices=["naive", "gaussian", "empirical"],
        default=_env_default("method", "empirical"),
    )
    parser.add_argument("--alpha", type=float, default=float(_env_default("alpha", 0.05)))
    parser.add_argument(
        "--sigma2",
        choices=["estimate", "one"],
        default=_env_default("sigma2", "estimate"),
    )
    parser.add_argument(
        "--threshold-alpha",
        type=float,
        default=float(_env_default("threshold-alpha", 0.05)),
    )
    parser.add_argument("--seed", type=int, default=int(_env_default("seed", 0)))
    parser.add_argument("--threads", type=int, default=int(_env_default("threads", 1)))
    parser.add_argument("--out", default=_env_default("out", "refjoint_out"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="refjoint",
        description="Joint regression inference from marginal summary "
        "statistics and a reference panel.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="joint estimates and corrected tests")
    _add_common(est)

    psat = sub.add_parser("psat", help="selection-adjusted analysis of one region")
    _add_common(psat)
    psat.add_argument(
        "--select",
        default=_env_default("select"),
        help="selection rule, e.g. tag=rs123,t=0.0004 (raw threshold on the "
        "squared tag marginal coefficient) or tag=rs123,t=z:0.05:20000",
    )
    psat.add_argument("--no-mle", action="store_true", help="skip the conditional MLE")
    psat.add_argument(
        "--no-threshold",
        action="store_true",
        help="do not zero small coefficients before the covariance correction",
    )

    sim = sub.add_parser("simulate", help="run simulation scenario cells")
    sim.add_argument("--config", default=_env_default("config"), required=False)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--threads", type=int, default=int(_env_default("threads", 1)))
    sim.add_argument("--out", default=_env_default("out", "refjoint_sim.tsv"))
    return parser


def _load_inputs(args):
    if not args.summary or not args.panel:
        raise RefjointError("--summary and --panel are required")
    summary = read_summary(args.summary)
    panel, _ = read_panel(args.panel, ids=summary.ids)
    return summary, panel


def _corrected_cov(args, summary, panel, r_ref, beta_mc, sigma2, ridge_log):
    beta_cov = threshold_beta(
        beta_mc, r_ref, sigma2, summary.n_o, alpha=args.threshold_alpha
    )
    if args.method == "gaussian":
        vsig = vsigma_gaussian(r_ref.matrix, n_used=panel.n)
    else:
        vsig = vsigma_empirical(panel, n_threads=args.threads)
    vr = vr_from_vsigma(vsig, r_ref)
    return sigma_mc(beta_cov, r_ref, vr, sigma2, summary.n_o, panel.n)


def _manifest(args, summary, panel, sigma2, ridge_log, **extra):
    out = {
        "version": __version__,
        "command": args.command,
        "summary": args.summary,
        "panel": args.panel,
        "method": args.method,
        "alpha": args.alpha,
        "sigma2_policy": args.sigma2,
        "sigma2": sigma2,
        "threshold_alpha": args.threshold_alpha,
        "seed": args.seed,
        "threads": args.threads,
        "n_o": summary.n_o,
        "n_r": panel.n,
        "p": summary.p,
        "ridge_warnings": ridge_log,
    }
    out.update(extra)
    return out


def _wald_p(beta, cov):
    from scipy.stats import norm

    return 2.0 * norm.sf(np.abs(beta / np.sqrt(np.diag(cov))))


def cmd_estimate(args) -> int:
    summary, panel = _load_inputs(args)
    ridge_log = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RidgeWarning)
        r_ref = correlation(panel, source="reference")
        beta_mc = joint_from_marginal(summary, r_ref)
        sigma2 = 1.0 if args.sigma2 == "one" else sigma2_hat(beta_mc, r_ref)
        cov_naive = naive_cov(r_ref, sigma2, summary.n_o)
        if args.method == "naive":
            cov = cov_naive
        else:
            cov = _corrected_cov(args, summary, panel, r_ref, beta_mc, sigma2, ridge_log)
        ridge_log.extend(str(w.message) for w in caught if w.category is RidgeWarning)
    p_naive = _wald_p(beta_mc, cov_naive)
    p_corr = _wald_p(beta_mc, cov)
    adjusted, rejected = bh_adjust(p_corr, args.alpha)
    write_report_tsv(
        args.out + ".report.tsv",
        {
            "id": list(summary.ids),
            "beta_mc": [float(b) for b in beta_mc],
            "se_naive": [float(s) for s in np.sqrt(np.diag(cov_naive))],
            "se_corrected": [float(s) for s in np.sqrt(np.diag(cov))],
            "p_naive": [float(v) for v in p_naive],
            "p_corrected": [float(v) for v in p_corr],
            "p_adjusted": [float(v) for v in adjusted],
            "rejected": [bool(r) for r in rejected],
        },
    )
    write_manifest(
        args.out + ".manifest.json",
        _manifest(args, summary, panel, sigma2, ridge_log),
    )
    return 0


def parse_select(spec: str, ids, n_o: int) -> SelectionEvent:
    """Parse ``tag=<id>,t=<rule>`` into a quadratic tag event."""
    if not spec:
        raise RefjointError("psat requires --select tag=<id>,t=<rule>")
    parts = dict(kv.split("=", 1) for kv in spec.split(","))
    if "tag" not in parts or "t" not in parts:
        raise RefjointError("--select needs both tag= and t=")
    tag = parts["tag"]
    if tag in ids:
        tag_index = ids.index(tag)
    else:
        try:
            tag_index = int(tag)
        except ValueError:
            raise RefjointError(f"unknown tag id {tag!r}") from None
        if not 0 <= tag_index < len(ids):
            raise RefjointError(f"tag index {tag_index} out of range")
    rule = parts["t"]
    if rule.startswith("z:"):
        _, alpha_sel, n_tests = rule.split(":")
        from scipy.stats import norm

        cut = norm.ppf(1.0 - float(alpha_sel) / (2.0 * int(n_tests))) / np.sqrt(n_o)
        threshold = float(cut * cut)
    else:
        threshold = float(rule)
    return SelectionEvent("quadratic_tag", threshold=threshold, tag_index=tag_index)


def cmd_psat(args) -> int:
    summary, panel = _load_inputs(args)
    ids = list(summary.ids)
    event = parse_select(args.select, ids, summary.n_o)
    options = PsatOptions(
        cov_method=args.method,
        use_conditional_mle=not args.no_mle,
        threshold=not args.no_threshold,
        threshold_alpha=args.threshold_alpha,
        sigma2_policy=args.sigma2,
        n_threads=args.threads,
    )
    ridge_log = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RidgeWarning)
        result = psat_pipeline(summary, panel, event, alpha=args.alpha, options=options)
        ridge_log.extend(str(w.message) for w in caught if w.category is RidgeWarning)
    extra = {
        "selected": result.selected,
        "selection_stat": result.stat,
        "selection_threshold": result.threshold,
    }
    if not result.selected:
        write_manifest(
            args.out + ".manifest.json",
            _manifest(args, summary, panel, None, ridge_log, **extra),
        )
        write_report_tsv(
            args.out + ".report.tsv",
            {"id": ids, "selected": [False] * len(ids)},
        )
        print("region not selected: aggregate statistic "
              f"{result.stat:.6g} <= threshold {result.threshold:.6g}", file=sys.stderr)
        return 2
    rep = result.report
    write_report_tsv(
        args.out + ".report.tsv",
        {
            "id": ids,
            "beta_mc": [float(b) for b in result.beta_mc],
            "beta_tilde": [float(b) for b in result.beta_tilde],
            "se": [float(s) for s in rep.se],
            "p_conditional": [float(v) for v in rep.pvalue],
            "p_adjusted": [float(v) for v in rep.p_adjusted],
            "rejected": [bool(r) for r in rep.rejected],
        },
    )
    extra["mle_converged"] = result.mle_converged
    write_manifest(
        args.out + ".manifest.json",
        _manifest(args, summary, panel, result.sigma2, ridge_log, **extra),
    )
    return 0


# ---------------------------------------------------------------------------
# simulate


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_scenario_file(path):
    """Flat key = value scenario file; comma lists on the grid keys
    (rho, n_o, n_r, h) expand to the Cartesian product of cells."""
    raw = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise RefjointError(f"bad scenario line: {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key] = value

    grid_keys = ("rho", "n_o", "n_r", "h")
    grids = {}
    for key in grid_keys:
        if key in raw:
            grids[key] = [_parse_scalar(v) for v in raw[key].split(",")]

    def base_config(**grid_point):
        kwargs = dict(
            p=int(raw["p"]),
            causal_set=tuple(int(v) for v in raw.get("causal", "").split(",") if v),
            reps=int(raw.get("reps", 1000)),
            seed=int(raw.get("seed", 0)),
            beta_value=float(raw.get("beta_value", 1.0)),
            covariate_kind=raw.get("covariate", "gaussian"),
            methods=tuple(
                m.strip() for m in raw.get("methods", "naive,vc_empirical").split(",")
            ),
            alpha=float(raw.get("alpha", 0.05)),
            resample_cap=int(raw.get("resample_cap", 100_000)),
        )
        if "threshold_alpha" in raw:
            kwargs["threshold_alpha"] = float(raw["threshold_alpha"])
        if "tag" in raw:
            kwargs["tag_index"] = int(raw["tag"])
        if "threshold" in raw:
            rule = raw["threshold"]
            if rule.startswith("z:"):
                _, a_sel, n_tests = rule.split(":")
                kwargs["threshold_rule"] = ("z", float(a_sel), int(n_tests))
            else:
                kwargs["threshold_rule"] = ("raw", float(rule))
        kwargs.update(grid_point)
        return ScenarioConfig(**kwargs)

    keys = list(grids)
    configs = []
    for combo in itertools.product(*(grids[k] for k in keys)) if keys else [()]:
        configs.append(base_config(**dict(zip(keys, combo))))
    return configs


def _scenario_label(cfg: ScenarioConfig) -> str:
    parts = [
        f"p={cfg.p}",
        f"rho={cfg.rho:g}",
        f"n_o={cfg.n_o}",
        f"n_r={cfg.n_r}",
        f"h={cfg.h:g}",
        f"kind={cfg.covariate_kind}",
    ]
    if cfg.selection_active:
        parts.append(f"tag={cfg.tag_index}")
    return ",".join(parts)


def cmd_simulate(args) -> int:
    if not args.config:
        raise RefjointError("simulate requires --config")
    configs = read_scenario_file(args.config)
    rows = []
    for cfg in configs:
        if args.seed is not None:
            cfg = ScenarioConfig(**{**cfg.__dict__, "seed": args.seed})
        if args.threads != cfg.n_threads:
            cfg = ScenarioConfig(**{**cfg.__dict__, "n_threads": args.threads})
        result = run_scenario(cfg)
        label = _scenario_label(cfg)
        rows.extend(result.rows(label))
        if result.selection_rate is not None:
            rows.append((label, "all", "selection_rate", result.selection_rate, None))
    write_long_tsv(args.out, rows)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        if args.command == "psat":
            return cmd_psat(args)
        return cmd_simulate(args)
    except RefjointError as exc:
        print(f"refjoint: ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
