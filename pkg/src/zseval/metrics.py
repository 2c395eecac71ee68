"""Accuracy metrics, delta tables, cross-dataset averages, and report emission.

Accuracies are kept at full precision internally; rounding to one decimal
happens only when a report is rendered. Refused and unparseable samples are
excluded from accuracy denominators and their counts travel with every row.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .ensemble import Prediction

INCLUDED_STATUSES = ("ok", "partial")

METHOD_ORDER = ("baseline", "handcrafted", "gpt", "combined", "vlm")


class MetricsError(Exception):
    pass


class EmptyDenominator(MetricsError):
    pass


class DatasetMismatch(MetricsError):
    pass


@dataclass(frozen=True)
class SampleResult:
    hashed_id: str
    label_index: int
    prediction: Prediction | None
    status: str = "ok"


@dataclass(frozen=True)
class RunResult:
    """Per-sample outcomes of one method on one dataset."""

    dataset: str
    method_label: str
    per_sample: tuple[SampleResult, ...]

    def __post_init__(self):
        ids = [s.hashed_id for s in self.per_sample]
        if len(set(ids)) != len(ids):
            raise ValueError("per-sample IDs must be unique")

    @property
    def included(self) -> tuple[SampleResult, ...]:
        return tuple(s for s in self.per_sample if s.status in INCLUDED_STATUSES)

    @property
    def excluded_refused(self) -> int:
        return sum(1 for s in self.per_sample if s.status == "refused")

    @property
    def excluded_unparseable(self) -> int:
        return sum(1 for s in self.per_sample if s.status == "unparseable")


def topk_accuracy(result: RunResult, k: int) -> float:
    """Percentage of included samples whose label appears in the first k ranks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    included = result.included
    if not included:
        raise EmptyDenominator(f"no included samples for {result.dataset}/{result.method_label}")
    hits = sum(
        1
        for s in included
        if s.prediction is not None and s.label_index in s.prediction.ranked[:k]
    )
    return 100.0 * hits / len(included)


@dataclass(frozen=True)
class DatasetScores:
    """Top-1/top-5 for one method on one dataset, with exclusion counts."""

    dataset: str
    method: str
    top1: float
    top5: float
    excluded_refused: int = 0
    excluded_unparseable: int = 0

    @classmethod
    def from_run(cls, run: RunResult) -> "DatasetScores":
        return cls(
            dataset=run.dataset,
            method=run.method_label,
            top1=topk_accuracy(run, 1),
            top5=topk_accuracy(run, 5),
            excluded_refused=run.excluded_refused,
            excluded_unparseable=run.excluded_unparseable,
        )


@dataclass(frozen=True)
class DeltaRow:
    dataset: str
    top1_baseline: float
    top1_variant: float

    @property
    def delta(self) -> float:
        return self.top1_variant - self.top1_baseline


def delta_table(baseline: RunResult, variant: RunResult) -> DeltaRow:
    if baseline.dataset != variant.dataset:
        raise DatasetMismatch(f"{baseline.dataset!r} vs {variant.dataset!r}")
    return DeltaRow(baseline.dataset, topk_accuracy(baseline, 1), topk_accuracy(variant, 1))


def average_over_datasets(rows: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Unweighted arithmetic means of per-dataset (top1, top5) pairs."""
    if not rows:
        raise ValueError("cannot average zero datasets")
    n = len(rows)
    return (sum(r[0] for r in rows) / n, sum(r[1] for r in rows) / n)


def per_class_accuracy(result: RunResult) -> dict[int, float]:
    """Top-1 accuracy per class; classes with no included samples are absent."""
    totals: dict[int, int] = {}
    hits: dict[int, int] = {}
    for s in result.included:
        totals[s.label_index] = totals.get(s.label_index, 0) + 1
        if s.prediction is not None and s.prediction.ranked[:1] == (s.label_index,):
            hits[s.label_index] = hits.get(s.label_index, 0) + 1
    return {
        label: 100.0 * hits.get(label, 0) / count for label, count in sorted(totals.items())
    }


def ablation_table(results_by_count: Mapping[int, RunResult]) -> list[tuple[int, float]]:
    """(sentence_count, top1) rows sorted ascending; one dataset only."""
    datasets = {run.dataset for run in results_by_count.values()}
    if len(datasets) > 1:
        raise DatasetMismatch(f"ablation mixes datasets: {sorted(datasets)}")
    return [
        (count, topk_accuracy(results_by_count[count], 1))
        for count in sorted(results_by_count)
    ]


@dataclass(frozen=True)
class ResultTable:
    """Per-dataset rows for a list of methods; the first method is the baseline."""

    methods: tuple[str, ...]
    rows: tuple[tuple[DatasetScores, ...], ...]

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.methods):
                raise DatasetMismatch("every row needs one entry per method")
            datasets = {scores.dataset for scores in row}
            if len(datasets) != 1:
                raise DatasetMismatch(f"row mixes datasets: {sorted(datasets)}")
            for scores, method in zip(row, self.methods):
                if scores.method != method:
                    raise DatasetMismatch(
                        f"expected method {method!r}, got {scores.method!r}"
                    )

    def deltas(self, method: str) -> list[float]:
        """Top-1 difference of `method` against the first (baseline) method."""
        col = self.methods.index(method)
        return [row[col].top1 - row[0].top1 for row in self.rows]

    def average_row(self) -> dict[str, tuple[float, float]]:
        return {
            method: average_over_datasets(
                [(row[col].top1, row[col].top5) for row in self.rows]
            )
            for col, method in enumerate(self.methods)
        }


def build_result_table(runs_per_dataset: Sequence[Sequence[RunResult]]) -> ResultTable:
    """Assemble a table from runs grouped by dataset (same method order per group)."""
    if not runs_per_dataset:
        raise ValueError("no runs given")
    methods = tuple(run.method_label for run in runs_per_dataset[0])
    rows = []
    for group in runs_per_dataset:
        if tuple(run.method_label for run in group) != methods:
            raise DatasetMismatch("method order differs between datasets")
        rows.append(tuple(DatasetScores.from_run(run) for run in group))
    return ResultTable(methods, tuple(rows))


def _fmt(value: float) -> str:
    return f"{value:.1f}"


def _fmt_delta(value: float) -> str:
    return f"{value:+.1f}"


def render_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["dataset", "method", "top1", "top5", "delta", "excluded_refused", "excluded_unparseable"]
    )
    for row in table.rows:
        for col, scores in enumerate(row):
            delta = "" if col == 0 else _fmt_delta(scores.top1 - row[0].top1)
            writer.writerow(
                [
                    scores.dataset,
                    scores.method,
                    _fmt(scores.top1),
                    _fmt(scores.top5),
                    delta,
                    scores.excluded_refused,
                    scores.excluded_unparseable,
                ]
            )
    averages = table.average_row()
    base_avg = averages[table.methods[0]]
    for col, method in enumerate(table.methods):
        top1, top5 = averages[method]
        delta = "" if col == 0 else _fmt_delta(top1 - base_avg[0])
        writer.writerow(["average", method, _fmt(top1), _fmt(top5), delta, "", ""])
    return buf.getvalue()


def render_markdown(table: ResultTable) -> str:
    headers = ["Dataset", f"{table.methods[0]} (Top-1 / Top-5)"]
    for method in table.methods[1:]:
        headers.extend([f"{method} (Top-1 / Top-5)", f"Top-1 Δ ({method})"])
    lines = [
        "| " + " | ".join(headers) + " |",
        "|" + "|".join("---" for _ in headers) + "|",
    ]
    for row in table.rows:
        cells = [row[0].dataset, f"{_fmt(row[0].top1)} / {_fmt(row[0].top5)}"]
        for col in range(1, len(row)):
            cells.append(f"{_fmt(row[col].top1)} / {_fmt(row[col].top5)}")
            cells.append(_fmt_delta(row[col].top1 - row[0].top1))
        lines.append("| " + " | ".join(cells) + " |")
    averages = table.average_row()
    base_avg = averages[table.methods[0]]
    label = f"**Average over {len(table.rows)} datasets**"
    cells = [label, f"{_fmt(base_avg[0])} / {_fmt(base_avg[1])}"]
    for method in table.methods[1:]:
        top1, top5 = averages[method]
        cells.append(f"{_fmt(top1)} / {_fmt(top5)}")
        cells.append(_fmt_delta(top1 - base_avg[0]))
    lines.append("| " + " | ".join(cells) + " |")

    lines.append("")
    lines.append("## Exclusions")
    lines.append("| Dataset | Method | Refused | Unparseable |")
    lines.append("|---|---|---|---|")
    for row in table.rows:
        for scores in row:
            lines.append(
                f"| {scores.dataset} | {scores.method} | "
                f"{scores.excluded_refused} | {scores.excluded_unparseable} |"
            )
    return "\n".join(lines) + "\n"


def emit_report(table: ResultTable, fmt: str, path: str | Path) -> Path:
    """Write a csv or markdown report; returns the written path."""
    if fmt == "csv":
        text = render_csv(table)
    elif fmt == "markdown":
        text = render_markdown(table)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise MetricsError(f"cannot write report {path}: {exc}") from exc
    return path
