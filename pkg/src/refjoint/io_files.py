"""TSV ingestion and report emission.

Input formats:

* summary: header ``id<TAB>beta<TAB>n``; one covariate per row; ``n`` must be
  identical on every row; lines starting with ``#`` are comments.
* panel: header row of covariate ids; one observation per row; numeric
  entries (dosages 0/1/2 or continuous).  Columns are aligned to the summary
  by id, never by position.

All floating-point output is written with 17 significant digits so reports
are bit-reproducible.
"""

from __future__ import annotations

import json

import numpy as np

from .estimator import MarginalSummary
from .exceptions import IdMismatch, InconsistentN, ParseError
from .linalg import CovariateMatrix, standardize

FLOAT_FMT = "%.17g"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % x
    return str(x)


def _data_lines(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.rstrip("\n")
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, stripped


def read_summary(path) -> MarginalSummary:
    """Parse a marginal-summary TSV; row order defines coordinate order."""
    rows = []
    header = None
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if header is None:
            if [f.strip().lower() for f in fields] != ["id", "beta", "n"]:
                raise ParseError(path, lineno, "expected header 'id\\tbeta\\tn'")
            header = fields
            continue
        if len(fields) != 3:
            raise ParseError(path, lineno, f"expected 3 fields, got {len(fields)}")
        try:
            rows.append((fields[0], float(fields[1]), int(fields[2])))
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from exc
    if header is None or not rows:
        raise ParseError(path, 0, "no data rows")
    ns = {r[2] for r in rows}
    if len(ns) != 1:
        raise InconsistentN(f"rows carry differing n values: {sorted(ns)}")
    ids = tuple(r[0] for r in rows)
    if len(set(ids)) != len(ids):
        raise ParseError(path, 0, "duplicate ids in summary")
    return MarginalSummary(
        beta_m=np.array([r[1] for r in rows]), n_o=rows[0][2], ids=ids
    )


def write_summary(path, summary: MarginalSummary) -> None:
    ids = summary.ids or tuple(str(i) for i in range(summary.p))
    with open(path, "w") as fh:
        fh.write("id\tbeta\tn\n")
        for i, b in zip(ids, summary.beta_m):
            fh.write(f"{i}\t{_fmt(float(b))}\t{summary.n_o}\n")


def read_panel(path, ids=None):
    """Parse a panel TSV; returns (standardized CovariateMatrix, column ids).

    When ``ids`` is given, columns are reordered to match it; missing or
    extra ids raise :class:`IdMismatch`.
    """
    header = None
    rows = []
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if header is None:
            header = [f.strip() for f in fields]
            if len(set(header)) != len(header):
                raise ParseError(path, lineno, "duplicate column ids in panel")
            continue
        if len(fields) != len(header):
            raise ParseError(
                path, lineno, f"expected {len(header)} fields, got {len(fields)}"
            )
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from exc
    if header is None or not rows:
        raise ParseError(path, 0, "no data rows")
    values = np.asarray(rows)
    if ids is not None:
        missing = [i for i in ids if i not in header]
        extra = [i for i in header if i not in ids]
        if missing or extra:
            raise IdMismatch(missing=missing, extra=extra)
        values = values[:, [header.index(i) for i in ids]]
        header = list(ids)
    return standardize(values, labels=header), tuple(header)


def write_panel(path, values: np.ndarray, ids) -> None:
    values = np.asarray(values)
    with open(path, "w") as fh:
        fh.write("\t".join(ids) + "\n")
        for row in values:
            fh.write("\t".join(_fmt(float(v)) for v in row) + "\n")


def write_report_tsv(path, columns: dict) -> None:
    """Write a column-dict report; all columns must share a length."""
    names = list(columns)
    length = len(next(iter(columns.values())))
    with open(path, "w") as fh:
        fh.write("\t".join(names) + "\n")
        for i in range(length):
            fh.write("\t".join(_fmt(columns[name][i]) for name in names) + "\n")


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def write_long_tsv(path, rows) -> None:
    """(scenario, method, measure, estimate, se) rows."""
    with open(path, "w") as fh:
        fh.write("scenario\tmethod\tmeasure\testimate\tse\n")
        for scenario, method, measure, est, se in rows:
            se_txt = _fmt(se) if se is not None and se == se else "NA"
            fh.write(f"{scenario}\t{method}\t{measure}\t{_fmt(est)}\t{se_txt}\n")
