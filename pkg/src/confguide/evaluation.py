"""Confusion counts, precision/recall/F1 reports, and configuration comparison.

Metrics are reported in percent. Zero-denominator conventions: precision is 0
when tp+fp = 0 (and the class is listed as undefined), recall is 0 when
tp+fn = 0, and F1 is 0 whenever precision + recall = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, EmptyInput
from .ingestion import LabelMatrix


@dataclass(frozen=True)
class ClassCounts:
    """Per-class 2x2 confusion counts over n cases."""

    class_names: tuple[str, ...]
    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]
    tn: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0] if self.class_names else 0


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricReport:
    """Per-class and aggregate metrics for one (config, reviewer) run.

    Macro values are unweighted means of the per-class values; micro values
    come from pooling counts across classes. ``empirical_fnr`` is a rate in
    [0, 1]; everything else is a percent in [0, 100].
    """

    config: str
    reviewer_id: str
    per_class: dict[str, ClassMetrics]
    macro: ClassMetrics
    micro: ClassMetrics
    empirical_fnr: float
    undefined_precision: tuple[str, ...] = field(default=())
    n_cases: int = 0


def decisions_to_matrix(records, labels: LabelMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Stack DecisionRecords into a matrix aligned with the labels it covers.

    Every record's case must exist in the label matrix; metrics are computed
    over exactly the decided cases, so partially reviewed splits evaluate on
    what has been reviewed so far.
    """
    if not records:
        raise EmptyInput("no decision records")
    index = {cid: i for i, cid in enumerate(labels.case_ids)}
    rows, truth_rows = [], []
    seen = set()
    for rec in records:
        if rec.case_id not in index:
            raise AlignmentError(f"decision for unknown case {rec.case_id!r}")
        if rec.case_id in seen:
            raise AlignmentError(f"duplicate decision for case {rec.case_id!r}")
        seen.add(rec.case_id)
        if len(rec.decisions) != labels.k:
            raise AlignmentError(
                f"decision vector for {rec.case_id!r} has {len(rec.decisions)} "
                f"entries, labels have {labels.k} classes"
            )
        rows.append(rec.decisions)
        truth_rows.append(labels.values[index[rec.case_id]])
    return np.array(rows, dtype=np.int64), np.array(truth_rows, dtype=np.int64)


def count_confusion(
    decisions: np.ndarray, truth: np.ndarray, class_names: tuple[str, ...]
) -> ClassCounts:
    """Standard per-class tp/fp/fn/tn over aligned decision and truth matrices."""
    decisions = np.asarray(decisions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if decisions.shape != truth.shape:
        raise AlignmentError(
            f"decisions shape {decisions.shape} != labels shape {truth.shape}"
        )
    if decisions.shape[1] != len(class_names):
        raise AlignmentError("class count does not match class names")
    tp = ((decisions == 1) & (truth == 1)).sum(axis=0)
    fp = ((decisions == 1) & (truth == 0)).sum(axis=0)
    fn = ((decisions == 0) & (truth == 1)).sum(axis=0)
    tn = ((decisions == 0) & (truth == 0)).sum(axis=0)
    return ClassCounts(
        class_names=tuple(class_names),
        tp=tuple(int(v) for v in tp),
        fp=tuple(int(v) for v in fp),
        fn=tuple(int(v) for v in fn),
        tn=tuple(int(v) for v in tn),
    )


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def compute_metrics(
    counts: ClassCounts,
    config: str = "",
    reviewer_id: str = "",
    empirical_fnr: float = 0.0,
) -> MetricReport:
    """Per-class, macro, and micro precision/recall/F1 from confusion counts."""
    per_class: dict[str, ClassMetrics] = {}
    undefined = []
    for i, name in enumerate(counts.class_names):
        p, r, f1 = _prf(counts.tp[i], counts.fp[i], counts.fn[i])
        if counts.tp[i] + counts.fp[i] == 0:
            undefined.append(name)
        per_class[name] = ClassMetrics(p * 100.0, r * 100.0, f1 * 100.0)

    k = len(counts.class_names)
    macro = ClassMetrics(
        sum(m.precision for m in per_class.values()) / k,
        sum(m.recall for m in per_class.values()) / k,
        sum(m.f1 for m in per_class.values()) / k,
    )
    p, r, f1 = _prf(sum(counts.tp), sum(counts.fp), sum(counts.fn))
    micro = ClassMetrics(p * 100.0, r * 100.0, f1 * 100.0)
    return MetricReport(
        config=config,
        reviewer_id=reviewer_id,
        per_class=per_class,
        macro=macro,
        micro=micro,
        empirical_fnr=empirical_fnr,
        undefined_precision=tuple(undefined),
        n_cases=counts.n,
    )


def empirical_fnr_report(decisions: np.ndarray, truth: np.ndarray) -> float:
    """Mean per-case FNR of the decision vectors against the truth."""
    decisions = np.asarray(decisions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if decisions.shape != truth.shape:
        raise AlignmentError("decisions and labels must share shape")
    missed = ((truth == 1) & (decisions == 0)).sum(axis=1)
    denom = np.maximum(1, truth.sum(axis=1))
    rates = missed / denom
    return float(rates.sum() / len(rates)) if len(rates) else 0.0


@dataclass(frozen=True)
class DeltaCell:
    points: float  # absolute percentage-point difference
    relative: float | None  # percent change vs baseline, None when baseline is 0


@dataclass(frozen=True)
class ComparisonTable:
    """Table-ready comparison of metric reports, deltas vs the first report."""

    reports: tuple[MetricReport, ...]
    deltas: dict[str, dict[str, DeltaCell]]  # report name -> metric -> delta


_AGG_METRICS = (
    ("macro_precision", lambda r: r.macro.precision),
    ("macro_recall", lambda r: r.macro.recall),
    ("macro_f1", lambda r: r.macro.f1),
    ("micro_precision", lambda r: r.micro.precision),
    ("micro_recall", lambda r: r.micro.recall),
    ("micro_f1", lambda r: r.micro.f1),
)


def report_name(report: MetricReport) -> str:
    return f"{report.config}/{report.reviewer_id}" if report.reviewer_id else report.config


def compare_configs(reports: list[MetricReport]) -> ComparisonTable:
    """Line up reports for the overall and per-class tables.

    With two or more reports, each later report gets per-metric deltas against
    the first: absolute percentage points and relative percent, labeled apart
    because a 14.71-point F1 gap is not a 14.71% relative change.
    """
    if not reports:
        raise EmptyInput("no metric reports to compare")
    deltas: dict[str, dict[str, DeltaCell]] = {}
    base = reports[0]
    for rep in reports[1:]:
        cells = {}
        for metric, get in _AGG_METRICS:
            d = get(rep) - get(base)
            rel = (d / get(base) * 100.0) if get(base) else None
            cells[metric] = DeltaCell(points=d, relative=rel)
        deltas[report_name(rep)] = cells
    return ComparisonTable(reports=tuple(reports), deltas=deltas)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def render_markdown(table: ComparisonTable, class_names: tuple[str, ...] | None = None) -> str:
    """Overall table plus per-class tables, best value per column bolded."""
    reports = table.reports
    lines = ["## Overall", ""]
    header = "| Config | Reviewer | Macro Pr | Macro Rec | Macro F1 | Micro Pr | Micro Rec | Micro F1 | FNR |"
    lines.append(header)
    lines.append("|" + "---|" * 9)
    best = {
        metric: max(get(r) for r in reports) for metric, get in _AGG_METRICS
    }
    for rep in reports:
        cells = [rep.config, rep.reviewer_id or "-"]
        for metric, get in _AGG_METRICS:
            v = get(rep)
            text = _fmt(v)
            if len(reports) > 1 and v == best[metric]:
                text = f"**{text}**"
            cells.append(text)
        cells.append(f"{rep.empirical_fnr:.4f}")
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")

    if table.deltas:
        lines += ["## Deltas vs " + report_name(reports[0]), ""]
        lines.append("| Config | Metric | Points | Relative |")
        lines.append("|---|---|---|---|")
        for name, cells in table.deltas.items():
            for metric, cell in cells.items():
                rel = f"{cell.relative:+.2f}%" if cell.relative is not None else "n/a"
                lines.append(f"| {name} | {metric} | {cell.points:+.2f} | {rel} |")
        lines.append("")

    names = class_names or tuple(reports[0].per_class)
    lines += ["## Per class", ""]
    head = ["| Class |"]
    for rep in reports:
        head.append(f" {report_name(rep)} Pr | Rec | F1 |")
    lines.append("".join(head))
    lines.append("|" + "---|" * (1 + 3 * len(reports)))
    for name in names:
        best_f1 = max(rep.per_class[name].f1 for rep in reports)
        row = [f"| {name} |"]
        for rep in reports:
            m = rep.per_class[name]
            f1_text = _fmt(m.f1)
            if len(reports) > 1 and m.f1 == best_f1:
                f1_text = f"**{f1_text}**"
            row.append(f" {_fmt(m.precision)} | {_fmt(m.recall)} | {f1_text} |")
        lines.append("".join(row))
    lines.append("")

    undefined = sorted({name for rep in reports for name in rep.undefined_precision})
    if undefined:
        lines.append(
            "Precision undefined (no positive predictions), reported as 0.00: "
            + ", ".join(undefined)
        )
        lines.append("")
    return "\n".join(lines)


def report_to_dict(report: MetricReport) -> dict:
    return {
        "config": report.config,
        "reviewer_id": report.reviewer_id,
        "n_cases": report.n_cases,
        "per_class": {
            name: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
            for name, m in report.per_class.items()
        },
        "macro": {
            "precision": report.macro.precision,
            "recall": report.macro.recall,
            "f1": report.macro.f1,
        },
        "micro": {
            "precision": report.micro.precision,
            "recall": report.micro.recall,
            "f1": report.micro.f1,
        },
        "empirical_fnr": report.empirical_fnr,
        "undefined_precision": list(report.undefined_precision),
    }
