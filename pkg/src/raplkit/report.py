"""Turn experiment records into the overhead-analysis report.

For every benchmark and metric (wall-clock duration plus energy per domain)
the report carries: per-tool descriptive statistics, median overhead versus
the ``none`` baseline, per-tool normality tests, a Kruskal-Wallis omnibus
test across tools, and a pairwise post hoc matrix pairing each adjusted
p-value with an effect size and its magnitude label.

Emitted as one table CSV and one pairwise-matrix CSV per (benchmark, metric),
plus a single ``report.json`` holding every number at full precision.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .orchestrator import BASELINE_TOOL_ID, RunRecord
from .stats import (
    DegenerateSampleError,
    DescriptiveStats,
    DunnResult,
    OverheadRow,
    TestResult,
    classify_delta,
    cliffs_delta,
    describe,
    dunn_posthoc,
    kruskal_wallis,
    overhead,
    shapiro_wilk,
)

log = logging.getLogger(__name__)

__all__ = [
    "MetricReport",
    "BenchmarkReport",
    "ReportBundle",
    "analyze_records",
    "write_report",
    "TABLE_ROWS",
]

#: Row labels of the per-benchmark summary table, in emission order.
TABLE_ROWS = ("mean", "std", "min", "50%", "max", "delta_t", "pct_delta")

DURATION_METRIC = "duration_s"


@dataclass(frozen=True)
class MetricReport:
    """All analyses of one metric within one benchmark."""

    metric: str
    tools: tuple[str, ...]  # column order; baseline first when present
    baseline: str | None
    describe: dict[str, DescriptiveStats]
    overhead: dict[str, OverheadRow]  # keyed by non-baseline tool id
    shapiro: dict[str, TestResult | None]  # None when n < 3 or degenerate
    kruskal: TestResult | None  # None with fewer than two tools
    dunn: DunnResult | None
    cliffs: dict[str, dict[str, float]]  # cliffs[a][b], antisymmetric
    magnitude: dict[str, dict[str, str]]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "tools": list(self.tools),
            "baseline": self.baseline,
            "describe": {t: s.to_dict() for t, s in self.describe.items()},
            "overhead": {
                t: {
                    "baseline_median": o.baseline_median,
                    "tool_median": o.tool_median,
                    "delta_t": o.delta_t,
                    "pct_delta": o.pct_delta,
                }
                for t, o in self.overhead.items()
            },
            "shapiro": {
                t: (None if r is None else {"statistic": r.statistic, "p_value": r.p_value})
                for t, r in self.shapiro.items()
            },
            "kruskal": (
                None
                if self.kruskal is None
                else {"statistic": self.kruskal.statistic, "p_value": self.kruskal.p_value}
            ),
            "dunn": (
                None
                if self.dunn is None
                else {
                    "labels": list(self.dunn.labels),
                    "z": [list(row) for row in self.dunn.z],
                    "p_raw": [list(row) for row in self.dunn.p_raw],
                    "p_adjusted": [list(row) for row in self.dunn.p_adjusted],
                    "n_comparisons": self.dunn.n_comparisons,
                }
            ),
            "cliffs": self.cliffs,
            "magnitude": self.magnitude,
        }


@dataclass(frozen=True)
class BenchmarkReport:
    benchmark: str
    n_records: int
    n_flagged: int
    metrics: dict[str, MetricReport]

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "n_records": self.n_records,
            "n_flagged": self.n_flagged,
            "metrics": {m: r.to_dict() for m, r in self.metrics.items()},
        }


@dataclass(frozen=True)
class ReportBundle:
    baseline: str
    benchmarks: dict[str, BenchmarkReport]

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "benchmarks": {b: r.to_dict() for b, r in self.benchmarks.items()},
        }


def _metric_value(record: RunRecord, metric: str) -> float | None:
    if metric == DURATION_METRIC:
        return record.duration_s
    if metric.startswith("energy_j:"):
        return record.energy_j.get(metric.split(":", 1)[1])
    raise ValueError(f"unknown metric {metric!r}")


def _metrics_present(records: Sequence[RunRecord]) -> list[str]:
    metrics = [DURATION_METRIC]
    domains: list[str] = []
    for r in records:
        for d in r.energy_j:
            if d not in domains:
                domains.append(d)
    metrics.extend(f"energy_j:{d}" for d in domains)
    return metrics


def _ordered_tools(records: Sequence[RunRecord], baseline: str) -> list[str]:
    seen: list[str] = []
    for r in records:
        if r.tool not in seen:
            seen.append(r.tool)
    if baseline in seen:
        seen.remove(baseline)
        seen.insert(0, baseline)
    return seen


def _analyze_metric(
    metric: str,
    tools: Sequence[str],
    groups: dict[str, list[float]],
    baseline: str,
) -> MetricReport:
    present = [t for t in tools if groups.get(t)]
    desc = {t: describe(groups[t]) for t in present}

    shapiro: dict[str, TestResult | None] = {}
    for t in present:
        try:
            shapiro[t] = shapiro_wilk(groups[t])
        except (DegenerateSampleError, ValueError):
            shapiro[t] = None

    over: dict[str, OverheadRow] = {}
    if baseline in desc:
        base_median = desc[baseline].median
        for t in present:
            if t != baseline and base_median > 0:
                over[t] = overhead(base_median, desc[t].median)

    kruskal: TestResult | None = None
    dunn: DunnResult | None = None
    if len(present) >= 2:
        labelled = [(t, groups[t]) for t in present]
        kruskal = kruskal_wallis(labelled)
        dunn = dunn_posthoc(labelled)

    cliffs: dict[str, dict[str, float]] = {}
    magnitude: dict[str, dict[str, str]] = {}
    for a in present:
        cliffs[a] = {}
        magnitude[a] = {}
        for b in present:
            d = 0.0 if a == b else cliffs_delta(groups[a], groups[b])
            cliffs[a][b] = d
            magnitude[a][b] = classify_delta(d)

    return MetricReport(
        metric=metric,
        tools=tuple(present),
        baseline=baseline if baseline in desc else None,
        describe=desc,
        overhead=over,
        shapiro=shapiro,
        kruskal=kruskal,
        dunn=dunn,
        cliffs=cliffs,
        magnitude=magnitude,
    )


def analyze_records(
    records: Sequence[RunRecord],
    baseline: str = BASELINE_TOOL_ID,
    metrics: Sequence[str] | None = None,
) -> ReportBundle:
    """Analyze experiment records, grouped per benchmark then per tool.

    Flagged records (``ok == False``) are excluded from all statistics and
    counted in ``n_flagged``.  Tool columns keep first-appearance order with
    the baseline pulled to the front.
    """
    if not records:
        raise ValueError("no records to analyze")
    bench_order: list[str] = []
    for r in records:
        if r.benchmark not in bench_order:
            bench_order.append(r.benchmark)

    reports: dict[str, BenchmarkReport] = {}
    for bench in bench_order:
        bench_records = [r for r in records if r.benchmark == bench]
        ok_records = [r for r in bench_records if r.ok]
        tools = _ordered_tools(ok_records, baseline)
        metric_names = list(metrics) if metrics is not None else _metrics_present(ok_records)
        metric_reports: dict[str, MetricReport] = {}
        for metric in metric_names:
            groups: dict[str, list[float]] = {t: [] for t in tools}
            for r in ok_records:
                v = _metric_value(r, metric)
                if v is not None:
                    groups[r.tool].append(v)
            if any(groups.values()):
                metric_reports[metric] = _analyze_metric(metric, tools, groups, baseline)
        reports[bench] = BenchmarkReport(
            benchmark=bench,
            n_records=len(bench_records),
            n_flagged=len(bench_records) - len(ok_records),
            metrics=metric_reports,
        )
    return ReportBundle(baseline=baseline, benchmarks=reports)


def _metric_slug(metric: str) -> str:
    return metric.replace(":", "_")


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_table_csv(path: Path, report: MetricReport) -> None:
    """Summary table: one column per tool; rows mean/std/min/50%/max plus
    median overhead rows (blank in the baseline column)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stat", *report.tools])
        rows: dict[str, list[str]] = {name: [] for name in TABLE_ROWS}
        for tool in report.tools:
            d = report.describe[tool]
            rows["mean"].append(_fmt(d.mean))
            rows["std"].append(_fmt(d.std))
            rows["min"].append(_fmt(d.min))
            rows["50%"].append(_fmt(d.median))
            rows["max"].append(_fmt(d.max))
            o = report.overhead.get(tool)
            rows["delta_t"].append("" if o is None else _fmt(o.delta_t))
            rows["pct_delta"].append("" if o is None else _fmt(o.pct_delta))
        for name in TABLE_ROWS:
            writer.writerow([name, *rows[name]])


def _write_dunn_csv(path: Path, report: MetricReport) -> None:
    """Pairwise matrix: each cell is ``p (delta, magnitude)`` with the
    Bonferroni-adjusted p-value, the effect size and its label."""
    dunn = report.dunn
    if dunn is None:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tool", *dunn.labels])
        for i, a in enumerate(dunn.labels):
            cells = []
            for j, b in enumerate(dunn.labels):
                p = dunn.p_adjusted[i][j]
                d = report.cliffs[a][b]
                cells.append(f"{p:.3f} ({d:+.3f}, {report.magnitude[a][b]})")
            writer.writerow([a, *cells])


def write_report(bundle: ReportBundle, out_dir: str | Path) -> list[Path]:
    """Write every table/matrix CSV plus ``report.json``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for bench, bench_report in bundle.benchmarks.items():
        for metric, metric_report in bench_report.metrics.items():
            slug = _metric_slug(metric)
            table_path = out_dir / f"{bench}__{slug}__table.csv"
            _write_table_csv(table_path, metric_report)
            written.append(table_path)
            if metric_report.dunn is not None:
                dunn_path = out_dir / f"{bench}__{slug}__pairwise.csv"
                _write_dunn_csv(dunn_path, metric_report)
                written.append(dunn_path)
    json_path = out_dir / "report.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(bundle.to_dict(), fh, indent=2, sort_keys=False)
        fh.write("\n")
    written.append(json_path)
    log.info("report: wrote %d files to %s", len(written), out_dir)
    return written
