"""Calibration measurements over decoded records.

Records pair each sample's gold output with one decode result per strategy
plus the log-probability of the empty string. Everything here is a pure
function of the records.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Iterable, NamedTuple, Sequence

from .corpus import DataError, ResourceClass, classify_resource
from .search import DecodeResult, SearchStats

EXACT = "exact"
SEARCH_ERROR_TOL = 1e-9

RECORDS_MAGIC = "# mitd records v1"
RECORD_COLUMNS = ("sample_id", "strategy", "gold", "y_hat", "score", "seconds", "nodes",
                  "empty_logprob", "status")
REPORT_COLUMNS = ("strategy", "resource_class", "n_datasets", "n_samples", "n_failed", "accuracy",
                  "search_error_rate", "mean_logprob", "n_neg_inf", "mean_empty_logprob",
                  "empty_optimum_rate", "mean_seconds")
TIMING_COLUMNS = ("mean_seconds",)


@dataclass
class PredictionRecord:
    sample_id: str
    gold: Sequence
    results: dict[str, DecodeResult]
    empty_log_prob: float
    failures: dict[str, str] = field(default_factory=dict)


@dataclass
class RecordSet:
    """Records of one dataset (language), with optional training-set size."""

    records: list[PredictionRecord]
    strategies: list[str]
    dataset: str = ""
    train_size: int | None = None

    @property
    def resource_class(self) -> ResourceClass | None:
        return None if self.train_size is None else classify_resource(self.train_size)


class ProbabilitySummary(NamedTuple):
    mean_log_prob: float
    mean_empty_log_prob: float
    n_neg_inf: int


def _require(records):
    if not records:
        raise ValueError("no records")


def exact_match_accuracy(records: Sequence[PredictionRecord], strategy: str) -> float:
    """Fraction of records whose output equals gold; failed decodes count as wrong."""
    _require(records)
    hits = sum(1 for r in records if strategy in r.results and tuple(r.results[strategy].y_star) == tuple(r.gold))
    return hits / len(records)


def search_error_rate(records: Sequence[PredictionRecord], strategy: str,
                      tolerance: float = SEARCH_ERROR_TOL, exact: str = EXACT) -> float:
    """Fraction of records where the exact optimum beats ``strategy`` by more than ``tolerance``."""
    _require(records)
    errors = 0
    for r in records:
        if exact not in r.results:
            raise ValueError(f"record {r.sample_id} has no {exact!r} result")
        if strategy not in r.results:
            raise ValueError(f"record {r.sample_id} has no {strategy!r} result")
        gap = r.results[exact].score - r.results[strategy].score
        if gap > tolerance:
            errors += 1
    return errors / len(records)


def empty_optimum_rate(records: Sequence[PredictionRecord], exact: str = EXACT) -> float:
    _require(records)
    for r in records:
        if exact not in r.results:
            raise ValueError(f"record {r.sample_id} has no {exact!r} result")
    return sum(1 for r in records if len(r.results[exact].y_star) == 0) / len(records)


def _finite_mean(values: Iterable[float]) -> tuple[float, int]:
    values = list(values)
    finite = [v for v in values if v != -math.inf]
    return (fmean(finite) if finite else math.nan), len(values) - len(finite)


def probability_summary(records: Sequence[PredictionRecord], strategy: str) -> ProbabilitySummary:
    """Mean log-probability of the chosen outputs and of the empty string.

    -inf scores are left out of the means; ``n_neg_inf`` counts them for
    both quantities together.
    """
    _require(records)
    chosen, n1 = _finite_mean(r.results[strategy].score for r in records if strategy in r.results)
    empty, n2 = _finite_mean(r.empty_log_prob for r in records)
    return ProbabilitySummary(chosen, empty, n1 + n2)


def size_vs_empty_curve(runs: Sequence[tuple[int, Sequence[PredictionRecord]]]) -> list[tuple[int, float]]:
    """One (train size, mean empty-string log-prob) point per distinct size, sorted by size.

    Runs sharing a size (e.g. different seeds) are averaged run by run.
    """
    by_size: dict[int, list[float]] = {}
    for size, records in runs:
        by_size.setdefault(size, []).append(_finite_mean(r.empty_log_prob for r in records)[0])
    if len(by_size) < 2:
        raise ValueError("need runs at two or more distinct training sizes")
    return [(size, fmean(by_size[size])) for size in sorted(by_size)]


def timing_summary(records: Sequence[PredictionRecord], strategy: str) -> float:
    _require(records)
    return fmean(r.results[strategy].stats.seconds for r in records if strategy in r.results)


# -- records files -----------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def dumps_records(rs: RecordSet) -> str:
    buf = io.StringIO()
    buf.write(RECORDS_MAGIC + "\n")
    meta = [f"dataset={rs.dataset}"]
    if rs.train_size is not None:
        meta.append(f"train_size={rs.train_size}")
    buf.write("# " + "\t".join(meta) + "\n")
    w = csv.writer(buf, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, escapechar="\\")
    w.writerow(RECORD_COLUMNS)
    for r in rs.records:
        gold = "".join(r.gold)
        for s in rs.strategies:
            if s in r.results:
                d = r.results[s]
                w.writerow([r.sample_id, s, gold, "".join(d.y_star), _fmt(d.score), _fmt(d.stats.seconds),
                            d.stats.nodes_expanded, _fmt(r.empty_log_prob), "ok"])
            else:
                w.writerow([r.sample_id, s, gold, "", "nan", "nan", 0, _fmt(r.empty_log_prob),
                            "failed:" + r.failures.get(s, "unknown")])
    return buf.getvalue()


def write_records(path: str | Path, rs: RecordSet) -> None:
    Path(path).write_text(dumps_records(rs), encoding="utf-8")


def loads_records(text: str, path: str = "<records>") -> RecordSet:
    lines = text.splitlines()
    if not lines or lines[0] != RECORDS_MAGIC:
        raise DataError("not a records file (missing header)", 1, path)
    dataset, train_size = "", None
    body = []
    for i, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            for item in line[1:].strip().split("\t"):
                k, _, v = item.partition("=")
                if k == "dataset":
                    dataset = v
                elif k == "train_size" and v:
                    train_size = int(v)
        else:
            body.append((i, line))
    if not body:
        raise DataError("records file has no column header", None, path)
    header_line, header = body[0]
    if tuple(header.split("\t")) != RECORD_COLUMNS:
        raise DataError("unexpected column header", header_line, path)
    by_id: dict[str, PredictionRecord] = {}
    strategies: list[str] = []
    reader = csv.reader([line for _, line in body[1:]], delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\")
    for (lineno, _), row in zip(body[1:], reader):
        if len(row) != len(RECORD_COLUMNS):
            raise DataError(f"expected {len(RECORD_COLUMNS)} fields, got {len(row)}", lineno, path)
        sid, strategy, gold, y_hat, score, seconds, nodes, empty, status = row
        rec = by_id.get(sid)
        if rec is None:
            rec = by_id[sid] = PredictionRecord(sid, gold, {}, float(empty))
        if strategy not in strategies:
            strategies.append(strategy)
        if strategy in rec.results or strategy in rec.failures:
            raise DataError(f"duplicate row for sample {sid!r}, strategy {strategy!r}", lineno, path)
        if status == "ok":
            rec.results[strategy] = DecodeResult(y_hat, float(score), SearchStats(int(nodes), 0, float(seconds)))
        else:
            rec.failures[strategy] = status.partition(":")[2]
    records = list(by_id.values())
    if not records:
        raise DataError("records file is empty", None, path)
    for r in records:
        missing = [s for s in strategies if s not in r.results and s not in r.failures]
        if missing:
            raise DataError(f"sample {r.sample_id!r} lacks rows for {', '.join(missing)}; "
                            "strategies cover mismatched sample sets", None, path)
    return RecordSet(records, strategies, dataset, train_size)


def read_records(path: str | Path) -> RecordSet:
    path = Path(path)
    return loads_records(path.read_text(encoding="utf-8"), str(path))


# -- reports -----------------------------------------------------------------

def _dataset_metrics(rs: RecordSet, strategy: str) -> dict:
    recs = rs.records
    ok = [r for r in recs if strategy in r.results]
    m = {"n_samples": len(recs), "n_failed": len(recs) - len(ok),
         "accuracy": exact_match_accuracy(recs, strategy)}
    both = [r for r in ok if EXACT in r.results]
    m["search_error_rate"] = search_error_rate(both, strategy) if EXACT in rs.strategies and both else None
    if ok:
        summary = probability_summary(ok, strategy)
        m["mean_logprob"], m["n_neg_inf"] = summary.mean_log_prob, summary.n_neg_inf
        m["mean_seconds"] = timing_summary(ok, strategy)
    else:
        m["mean_logprob"], m["n_neg_inf"], m["mean_seconds"] = None, 0, None
    m["mean_empty_logprob"] = _finite_mean(r.empty_log_prob for r in recs)[0]
    m["empty_optimum_rate"] = empty_optimum_rate(ok) if strategy == EXACT and ok else None
    return m


def _macro(values):
    values = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return fmean(values) if values else None


def build_report(sets: Sequence[RecordSet]) -> list[dict]:
    """Rows keyed by (strategy, resource class), macro-averaged over datasets.

    Class ``all`` covers every dataset; per-class rows appear for datasets
    whose training size is known.
    """
    if not sets:
        raise ValueError("no record sets")
    strategies: list[str] = []
    for rs in sets:
        strategies += [s for s in rs.strategies if s not in strategies]
    groups = [("all", list(sets))]
    for cls in ResourceClass:
        members = [rs for rs in sets if rs.resource_class is cls]
        if members:
            groups.append((cls.value, members))
    rows = []
    for strategy in strategies:
        for label, members in groups:
            members = [rs for rs in members if strategy in rs.strategies]
            if not members:
                continue
            per = [_dataset_metrics(rs, strategy) for rs in members]
            row = {"strategy": strategy, "resource_class": label, "n_datasets": len(members),
                   "n_samples": sum(p["n_samples"] for p in per), "n_failed": sum(p["n_failed"] for p in per),
                   "n_neg_inf": sum(p["n_neg_inf"] for p in per)}
            for col in ("accuracy", "search_error_rate", "mean_logprob", "mean_empty_logprob",
                        "empty_optimum_rate", "mean_seconds"):
                row[col] = _macro(p[col] for p in per)
            rows.append(row)
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_report_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def render_report_text(rows: Sequence[dict]) -> str:
    """Aligned plain-text table: rates as percentages, log-probs to 3 decimals."""
    header = ["strategy", "class", "n", "acc%", "search_err%", "logprob", "empty_lp", "empty_opt%", "sec"]

    def pct(v):
        return "-" if v is None else f"{100 * v:.2f}"

    def num(v, nd=3):
        return "-" if v is None else f"{v:.{nd}f}"

    table = [header] + [[r["strategy"], r["resource_class"], str(r["n_samples"]), pct(r["accuracy"]),
                         pct(r["search_error_rate"]), num(r["mean_logprob"]), num(r["mean_empty_logprob"]),
                         pct(r["empty_optimum_rate"]), num(r["mean_seconds"], 4)] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip()
             for row in table]
    return "\n".join(lines) + "\n"
