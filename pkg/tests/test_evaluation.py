"""Confusion counts, precision/recall/F1 aggregation, and report rendering."""

import math

import numpy as np
import pytest

from confguide.decision import CONFIG_CRC, decide_direct
from confguide.errors import AlignmentError, EmptyInput
from confguide.evaluation import (
    ClassCounts,
    ClassMetrics,
    MetricReport,
    compare_configs,
    compute_metrics,
    count_confusion,
    decisions_to_matrix,
    empirical_fnr_report,
    render_markdown,
    report_name,
    report_to_dict,
)
from confguide.ingestion import DEFAULT_CLASS_NAMES
from confguide.riskcontrol import PredictionSet
from tests.conftest import make_matrices

# Held-out class prevalence for the 500-case benchmark split.
POSITIVES_500 = {
    "Atelectasis": 153,
    "Cardiomegaly": 151,
    "Consolidation": 29,
    "Edema": 78,
    "Enlarged Cardiomediastinum": 253,
    "Fracture": 5,
    "Lung Lesion": 8,
    "Lung Opacity": 264,
    "No Finding": 62,
    "Pleural Effusion": 104,
    "Pleural Other": 4,
    "Pneumonia": 11,
    "Pneumothorax": 9,
    "Support Devices": 261,
}


def prevalence_matrix():
    """500 x 14 labels whose column sums match the benchmark prevalence."""
    n = 500
    labels = np.zeros((n, len(DEFAULT_CLASS_NAMES)), dtype=np.int64)
    for j, name in enumerate(DEFAULT_CLASS_NAMES):
        labels[: POSITIVES_500[name], j] = 1
    return labels


class TestCountConfusion:
    def test_perfect_decisions(self):
        truth = np.array([[1, 0, 1], [0, 1, 0]])
        counts = count_confusion(truth, truth, ("A", "B", "C"))
        assert counts.fp == (0, 0, 0)
        assert counts.fn == (0, 0, 0)
        assert counts.tp == (1, 1, 1)
        assert counts.tn == (1, 1, 1)
        assert counts.n == 2

    def test_all_zero_decisions_fn_equals_prevalence(self):
        labels = prevalence_matrix()
        decisions = np.zeros_like(labels)
        counts = count_confusion(decisions, labels, DEFAULT_CLASS_NAMES)
        assert counts.tp == (0,) * 14
        assert counts.fp == (0,) * 14
        assert counts.fn == tuple(POSITIVES_500[n] for n in DEFAULT_CLASS_NAMES)
        assert counts.tn == tuple(500 - POSITIVES_500[n] for n in DEFAULT_CLASS_NAMES)
        assert sum(counts.fn) == 1392

    def test_complement_decisions(self):
        truth = np.array([[1, 0], [0, 1], [1, 1]])
        counts = count_confusion(1 - truth, truth, ("A", "B"))
        assert counts.tp == (0, 0)
        assert counts.tn == (0, 0)
        assert counts.fp == (1, 1)
        assert counts.fn == (2, 2)

    def test_shape_mismatch(self):
        with pytest.raises(AlignmentError):
            count_confusion(np.zeros((2, 3)), np.zeros((2, 2)), ("A", "B"))

    def test_name_count_mismatch(self):
        with pytest.raises(AlignmentError):
            count_confusion(np.zeros((2, 3)), np.zeros((2, 3)), ("A", "B"))


def brute_metrics(tp, fp, fn):
    """Independent precision/recall/F1 on the 0-1 scale."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


class TestComputeMetrics:
    def test_fifty_percent_micro_example(self):
        # class A: tp=1 fp=1 fn=0; class B: tp=0 fp=0 fn=1
        decisions = np.array([[1, 0], [1, 0]])
        truth = np.array([[1, 1], [0, 0]])
        report = compute_metrics(count_confusion(decisions, truth, ("A", "B")))
        assert report.micro.precision == 50.0
        assert report.micro.recall == 50.0
        assert report.micro.f1 == 50.0

    def test_perfect_decisions_are_100(self):
        truth = np.array([[1, 0, 1], [0, 1, 1]])
        report = compute_metrics(count_confusion(truth, truth, ("A", "B", "C")))
        assert report.micro.f1 == 100.0
        assert report.macro.f1 == 100.0
        assert all(m.f1 == 100.0 for m in report.per_class.values())
        assert report.undefined_precision == ()

    def test_no_positive_predictions_flagged_undefined(self):
        decisions = np.zeros((4, 2), dtype=np.int64)
        truth = np.array([[1, 0], [1, 0], [0, 0], [0, 0]])
        report = compute_metrics(count_confusion(decisions, truth, ("A", "B")))
        assert report.per_class["A"].precision == 0.0
        assert report.per_class["A"].recall == 0.0
        assert report.per_class["A"].f1 == 0.0
        assert report.undefined_precision == ("A", "B")

    def test_all_zero_decision_rows_zero_out_every_aggregate(self):
        labels = prevalence_matrix()
        decisions = np.zeros_like(labels)
        report = compute_metrics(count_confusion(decisions, labels, DEFAULT_CLASS_NAMES))
        assert report.micro.precision == 0.0
        assert report.micro.recall == 0.0
        assert report.micro.f1 == 0.0
        assert report.macro.f1 == 0.0
        assert all(
            (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
            for m in report.per_class.values()
        )

    def test_macro_is_unweighted_mean(self):
        decisions = np.array([[1, 1], [1, 0], [0, 0]])
        truth = np.array([[1, 0], [1, 1], [0, 1]])
        counts = count_confusion(decisions, truth, ("A", "B"))
        report = compute_metrics(counts)
        per = [brute_metrics(counts.tp[i], counts.fp[i], counts.fn[i]) for i in range(2)]
        assert report.macro.precision == pytest.approx(
            100.0 * (per[0][0] + per[1][0]) / 2, abs=1e-12
        )
        assert report.macro.f1 == pytest.approx(
            100.0 * (per[0][2] + per[1][2]) / 2, abs=1e-12
        )

    def test_micro_pools_counts(self):
        rng = np.random.default_rng(9)
        decisions = rng.integers(0, 2, size=(40, 5))
        truth = rng.integers(0, 2, size=(40, 5))
        counts = count_confusion(decisions, truth, tuple("ABCDE"))
        report = compute_metrics(counts)
        p, r, f1 = brute_metrics(sum(counts.tp), sum(counts.fp), sum(counts.fn))
        assert report.micro.precision == pytest.approx(100.0 * p, abs=1e-12)
        assert report.micro.recall == pytest.approx(100.0 * r, abs=1e-12)
        assert report.micro.f1 == pytest.approx(100.0 * f1, abs=1e-12)

    def test_carries_identity_and_fnr(self):
        truth = np.array([[1, 0]])
        report = compute_metrics(
            count_confusion(truth, truth, ("A", "B")),
            config="crc",
            reviewer_id="r1",
            empirical_fnr=0.125,
        )
        assert report.config == "crc"
        assert report.reviewer_id == "r1"
        assert report.empirical_fnr == 0.125
        assert report.n_cases == 1


class TestEmpiricalFnrReport:
    def test_perfect_decisions_zero(self):
        truth = np.array([[1, 0, 1], [0, 1, 0]])
        assert empirical_fnr_report(truth, truth) == 0.0

    def test_all_zero_decisions_against_positives_is_one(self):
        truth = np.array([[1, 0], [1, 1], [0, 1]])
        decisions = np.zeros_like(truth)
        assert empirical_fnr_report(decisions, truth) == 1.0

    def test_half_missed(self):
        truth = np.array([[1, 1]])
        decisions = np.array([[1, 0]])
        assert empirical_fnr_report(decisions, truth) == 0.5

    def test_no_positive_cases_clamp_to_zero(self):
        truth = np.zeros((3, 2), dtype=np.int64)
        decisions = np.zeros_like(truth)
        assert empirical_fnr_report(decisions, truth) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(AlignmentError):
            empirical_fnr_report(np.zeros((1, 2)), np.zeros((1, 3)))


class TestDecisionsToMatrix:
    def make_records_and_labels(self):
        _, labels = make_matrices(
            [[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]],
            [[1, 0], [0, 1], [1, 1]],
            case_ids=("a", "b", "c"),
        )
        records = [
            decide_direct(PredictionSet("b", frozenset({1}), 0.5), k=2),
            decide_direct(PredictionSet("a", frozenset({0}), 0.5), k=2),
        ]
        return records, labels

    def test_aligns_truth_to_record_order(self):
        records, labels = self.make_records_and_labels()
        decisions, truth = decisions_to_matrix(records, labels)
        assert decisions.tolist() == [[0, 1], [1, 0]]
        assert truth.tolist() == [[0, 1], [1, 0]]

    def test_unknown_case_rejected(self):
        records, labels = self.make_records_and_labels()
        records.append(decide_direct(PredictionSet("zz", frozenset(), 0.5), k=2))
        with pytest.raises(AlignmentError):
            decisions_to_matrix(records, labels)

    def test_duplicate_case_rejected(self):
        records, labels = self.make_records_and_labels()
        records.append(records[0])
        with pytest.raises(AlignmentError):
            decisions_to_matrix(records, labels)

    def test_wrong_width_rejected(self):
        records, labels = self.make_records_and_labels()
        records.append(decide_direct(PredictionSet("c", frozenset({0}), 0.5), k=3))
        with pytest.raises(AlignmentError):
            decisions_to_matrix(records, labels)

    def test_empty_records_rejected(self):
        _, labels = self.make_records_and_labels()
        with pytest.raises(EmptyInput):
            decisions_to_matrix([], labels)


def report_with_micro_f1(config, f1):
    metric = ClassMetrics(precision=f1, recall=f1, f1=f1)
    return MetricReport(
        config=config,
        reviewer_id="",
        per_class={"A": metric},
        macro=metric,
        micro=metric,
        empirical_fnr=0.0,
        undefined_precision=(),
        n_cases=500,
    )


class TestCompareConfigs:
    def test_single_report_no_deltas(self):
        table = compare_configs([report_with_micro_f1("standard", 40.0)])
        assert table.deltas == {}

    def test_deltas_measured_against_first(self):
        base = report_with_micro_f1("standard", 36.05)
        other = report_with_micro_f1("confguide", 50.76)
        table = compare_configs([base, other])
        cell = table.deltas["confguide"]["micro_f1"]
        assert cell.points == pytest.approx(14.71, abs=1e-9)
        assert cell.relative == pytest.approx(100.0 * 14.71 / 36.05, abs=1e-6)

    def test_zero_baseline_relative_is_none(self):
        base = report_with_micro_f1("standard", 0.0)
        other = report_with_micro_f1("crc", 10.0)
        table = compare_configs([base, other])
        assert table.deltas["crc"]["micro_f1"].relative is None

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            compare_configs([])


class TestRenderMarkdown:
    def test_published_gap_renders_as_points(self):
        base = report_with_micro_f1("standard", 36.05)
        other = report_with_micro_f1("confguide", 50.76)
        text = render_markdown(compare_configs([base, other]))
        assert "+14.71" in text

    def test_best_value_bolded(self):
        base = report_with_micro_f1("standard", 36.05)
        other = report_with_micro_f1("confguide", 50.76)
        text = render_markdown(compare_configs([base, other]))
        assert "**50.76**" in text
        assert "**36.05**" not in text

    def test_single_report_not_bolded(self):
        text = render_markdown(compare_configs([report_with_micro_f1("crc", 42.0)]))
        assert "**" not in text

    def test_undefined_precision_note(self):
        decisions = np.zeros((2, 2), dtype=np.int64)
        truth = np.array([[1, 0], [0, 0]])
        report = compute_metrics(count_confusion(decisions, truth, ("A", "B")), config="crc")
        text = render_markdown(compare_configs([report]))
        assert "Precision undefined" in text
        assert "A, B" in text

    def test_sections_present(self):
        text = render_markdown(compare_configs([report_with_micro_f1("crc", 42.0)]))
        assert "## Overall" in text
        assert "## Per class" in text


class TestReportSerialization:
    def test_report_to_dict_round_values(self):
        truth = np.array([[1, 0], [0, 1]])
        report = compute_metrics(
            count_confusion(truth, truth, ("A", "B")), config="crc", empirical_fnr=0.25
        )
        data = report_to_dict(report)
        assert data["config"] == "crc"
        assert data["micro"]["f1"] == 100.0
        assert data["per_class"]["A"]["precision"] == 100.0
        assert data["empirical_fnr"] == 0.25
        assert data["n_cases"] == 2

    def test_report_name(self):
        assert report_name(report_with_micro_f1("crc", 1.0)) == "crc"
        r = compute_metrics(
            count_confusion(np.array([[1]]), np.array([[1]]), ("A",)),
            config="confguide",
            reviewer_id="gpt",
        )
        assert report_name(r) == "confguide/gpt"
