"""Prediction sets, false-negative-rate loss, and risk-controlled calibration.

A score row and a conservativeness parameter ``lam`` in [0, 1] induce the
prediction set {k : score_k >= 1 - lam}: larger ``lam`` lowers the threshold
and grows the set. Calibration picks the smallest grid ``lam`` whose adjusted
empirical risk (sum of per-case losses plus one, over n + 1) stays at or
below the target ``alpha``; under exchangeability this caps the expected
test-time loss at ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EmptyDataset, EmptyGrid, RangeError
from .ingestion import LabelMatrix, ScoreMatrix

# Membership comparison for tie scores. Inclusive (>=) makes lam = 1.0 return
# the full label set, which the "grow the set until safe" semantics require;
# it differs from strict (>) only when a score ties 1 - lam exactly.
INCLUSIVE_THRESHOLD = True

# 1001 equally spaced candidate thresholds; 1e-3 resolution is finer than
# typical score precision.
DEFAULT_LAMBDA_GRID_SIZE = 1001

# Grid-axis chunk size used when materializing per-case loss curves, to keep
# the n x K x chunk broadcast bounded in memory.
_GRID_CHUNK = 256

LossFn = Callable[["PredictionSet", np.ndarray], float]


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly ascending candidate lambdas in [0, 1], ending at 1.0."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise EmptyGrid("lambda grid is empty")
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise RangeError("lambda grid values must lie in [0, 1]")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise RangeError("lambda grid must be strictly ascending")
        if vals[-1] != 1.0:
            raise RangeError("lambda grid must end at 1.0")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


def default_lambda_grid() -> LambdaGrid:
    n = DEFAULT_LAMBDA_GRID_SIZE
    return LambdaGrid(tuple(i / (n - 1) for i in range(n)))


@dataclass(frozen=True)
class PredictionSet:
    """Class indices whose scores reached the threshold 1 - lambda_used."""

    case_id: str
    members: frozenset[int]
    lambda_used: float

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated lambda_hat plus the full adjusted-risk curve over the grid.

    ``vacuous`` marks the fallback case: no grid point satisfied the bound,
    so lambda_hat is the most conservative grid value (1.0).
    """

    lambda_hat: float
    alpha: float
    risk_curve: tuple[tuple[float, float], ...]
    n_calibration: int
    vacuous: bool


def _included(scores: np.ndarray, lam: float) -> np.ndarray:
    thresh = 1.0 - lam
    return scores >= thresh if INCLUSIVE_THRESHOLD else scores > thresh


def prediction_set(score_row: np.ndarray, lam: float, case_id: str = "") -> PredictionSet:
    """Build the prediction set {k : score_k >= 1 - lam} for one score row."""
    if not 0.0 <= lam <= 1.0:
        raise RangeError(f"lambda {lam} outside [0, 1]")
    row = np.asarray(score_row, dtype=float)
    members = frozenset(int(i) for i in np.flatnonzero(_included(row, lam)))
    return PredictionSet(case_id=case_id, members=members, lambda_used=float(lam))


def fnr_loss(pred_set: PredictionSet, truth: np.ndarray) -> float:
    """Fraction of truly present classes missing from the set.

    The denominator is clamped to 1, so an all-negative truth vector scores 0.
    """
    truth = np.asarray(truth)
    positives = int(truth.sum())
    missed = sum(1 for k in np.flatnonzero(truth == 1) if int(k) not in pred_set.members)
    return missed / max(1, positives)


def _fnr_loss_rows(scores: np.ndarray, labels: np.ndarray, lam: float) -> np.ndarray:
    """Vectorized per-case FNR at a single lambda; exact small rationals."""
    missed = ((labels == 1) & ~_included(scores, lam)).sum(axis=1)
    denom = np.maximum(1, labels.sum(axis=1))
    return missed / denom


def _fnr_loss_curve(scores: np.ndarray, labels: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """Per-case FNR for every grid lambda, shape (n, len(lambdas))."""
    n = scores.shape[0]
    out = np.empty((n, len(lambdas)), dtype=float)
    denom = np.maximum(1, labels.sum(axis=1))[:, None]
    positive = (labels == 1)[:, :, None]
    for start in range(0, len(lambdas), _GRID_CHUNK):
        lam = lambdas[start : start + _GRID_CHUNK]
        thresh = 1.0 - lam
        if INCLUSIVE_THRESHOLD:
            out_of_set = scores[:, :, None] < thresh[None, None, :]
        else:
            out_of_set = scores[:, :, None] <= thresh[None, None, :]
        missed = (positive & out_of_set).sum(axis=1)
        out[:, start : start + lam.size] = missed / denom
    return out


def _mean(values) -> float:
    # fsum: exact, order-independent reduction, so vectorized and per-case
    # enumeration paths agree bit for bit.
    values = list(values)
    return math.fsum(values) / len(values)


def _per_case_losses(
    scores: ScoreMatrix, labels: LabelMatrix, lam: float, loss: LossFn
) -> list[float]:
    if loss is fnr_loss:
        return _fnr_loss_rows(scores.values, labels.values, lam).tolist()
    return [
        loss(prediction_set(scores.values[i], lam, scores.case_ids[i]), labels.values[i])
        for i in range(scores.n)
    ]


def empirical_risk(
    scores: ScoreMatrix, labels: LabelMatrix, lam: float, loss: LossFn = fnr_loss
) -> float:
    """Mean per-case loss over the dataset at a fixed lambda."""
    if not 0.0 <= lam <= 1.0:
        raise RangeError(f"lambda {lam} outside [0, 1]")
    if scores.n == 0:
        raise EmptyDataset("empirical risk needs at least one case")
    return _mean(_per_case_losses(scores, labels, lam, loss))


def adjusted_risk_curve(
    scores: ScoreMatrix,
    labels: LabelMatrix,
    grid: LambdaGrid,
    loss: LossFn = fnr_loss,
) -> list[tuple[float, float]]:
    """(lambda, (sum of losses + 1) / (n + 1)) for every grid lambda."""
    if scores.n == 0:
        raise EmptyDataset("calibration needs at least one case")
    n = scores.n
    if loss is fnr_loss:
        loss_matrix = _fnr_loss_curve(scores.values, labels.values, np.asarray(grid.values))
        curve = []
        for j, lam in enumerate(grid.values):
            total = math.fsum(loss_matrix[:, j].tolist())
            curve.append((lam, (total + 1.0) / (n + 1.0)))
        return curve
    curve = []
    for lam in grid.values:
        total = math.fsum(_per_case_losses(scores, labels, lam, loss))
        curve.append((lam, (total + 1.0) / (n + 1.0)))
    return curve


def calibrate_lambda(
    cal_scores: ScoreMatrix,
    cal_labels: LabelMatrix,
    alpha: float,
    grid: LambdaGrid | None = None,
    loss: LossFn = fnr_loss,
) -> CalibrationResult:
    """Pick the smallest grid lambda whose adjusted empirical risk is <= alpha.

    The adjustment adds one worst-case loss to the numerator and one case to
    the denominator, which is what buys the distribution-free test-time bound.
    When even lambda = 1.0 misses the target (alpha below the 1/(n+1) floor),
    the result falls back to lambda_hat = 1.0 and is flagged vacuous.
    """
    if not 0.0 <= alpha <= 1.0:
        raise RangeError(f"alpha {alpha} outside [0, 1]")
    if grid is None:
        grid = default_lambda_grid()
    curve = adjusted_risk_curve(cal_scores, cal_labels, grid, loss)
    lambda_hat, vacuous = grid.values[-1], True
    for lam, adjusted in curve:
        if adjusted <= alpha:
            lambda_hat, vacuous = lam, False
            break
    return CalibrationResult(
        lambda_hat=lambda_hat,
        alpha=float(alpha),
        risk_curve=tuple(curve),
        n_calibration=cal_scores.n,
        vacuous=vacuous,
    )


@dataclass(frozen=True)
class MonotonicityViolation:
    case_id: str
    lambda_lo: float
    lambda_hi: float
    loss_lo: float
    loss_hi: float


@dataclass(frozen=True)
class MonotonicityReport:
    violations: tuple[MonotonicityViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_monotone(
    loss: LossFn,
    scores: ScoreMatrix,
    labels: LabelMatrix,
    grid: LambdaGrid,
) -> MonotonicityReport:
    """Check that per-case loss never increases along the lambda grid.

    An empty report certifies the calibration precondition on this data; any
    adjacent grid pair where a case's loss rises is listed.
    """
    violations = []
    for i in range(scores.n):
        cid = scores.case_ids[i]
        prev_lam, prev_loss = None, None
        for lam in grid.values:
            cur = loss(prediction_set(scores.values[i], lam, cid), labels.values[i])
            if prev_loss is not None and cur > prev_loss:
                violations.append(
                    MonotonicityViolation(cid, prev_lam, lam, prev_loss, cur)
                )
            prev_lam, prev_loss = lam, cur
    return MonotonicityReport(tuple(violations))
