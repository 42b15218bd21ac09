"""Alpha sweeps, risk-curve plateaus, and the operating-point selection rule."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptyGrid, EmptyInput
from .ingestion import LabelMatrix, ScoreMatrix
from .riskcontrol import (
    LambdaGrid,
    LossFn,
    _included,
    adjusted_risk_curve,
    default_lambda_grid,
    empirical_risk,
    fnr_loss,
)

# Default sweep grid {0.05, 0.10, ..., 0.95}; each point the correctly
# rounded value of i/20 so boundary comparisons against (m+1)/(n+1) are exact.
DEFAULT_ALPHA_GRID = tuple(i / 20 for i in range(1, 20))


@dataclass(frozen=True)
class OperatingPoint:
    """One sweep point: target alpha, its lambda_hat, and what that costs."""

    alpha: float
    lambda_hat: float
    empirical_risk: float  # raw mean loss on calibration data at lambda_hat
    avg_set_size: float


@dataclass(frozen=True)
class Plateau:
    """Maximal run of consecutive alpha grid points sharing one lambda_hat."""

    alpha_lo: float
    alpha_hi: float
    length: int
    risk: float
    avg_set_size: float


def sweep_alpha(
    cal_scores: ScoreMatrix,
    cal_labels: LabelMatrix,
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID,
    lambda_grid: LambdaGrid | None = None,
    loss: LossFn = fnr_loss,
) -> list[OperatingPoint]:
    """Calibrate at every alpha and record risk and average set size.

    The adjusted-risk curve does not depend on alpha, so it is computed once
    and each sweep point just reads off its smallest qualifying lambda;
    results are identical to calibrating per alpha.
    """
    if not alpha_grid:
        raise EmptyGrid("alpha grid is empty")
    if any(b <= a for a, b in zip(alpha_grid, alpha_grid[1:])):
        raise EmptyGrid("alpha grid must be strictly ascending")
    if lambda_grid is None:
        lambda_grid = default_lambda_grid()
    curve = adjusted_risk_curve(cal_scores, cal_labels, lambda_grid, loss)
    n = cal_scores.n

    points = []
    cache: dict[float, tuple[float, float]] = {}
    for alpha in alpha_grid:
        lambda_hat = lambda_grid.values[-1]
        for lam, adjusted in curve:
            if adjusted <= alpha:
                lambda_hat = lam
                break
        if lambda_hat not in cache:
            risk = empirical_risk(cal_scores, cal_labels, lambda_hat, loss)
            sizes = _included(cal_scores.values, lambda_hat).sum(axis=1)
            cache[lambda_hat] = (risk, float(sizes.sum() / n))
        risk, avg_size = cache[lambda_hat]
        points.append(OperatingPoint(float(alpha), lambda_hat, risk, avg_size))
    return points


def detect_plateaus(points: list[OperatingPoint]) -> list[Plateau]:
    """Run-length group the sweep by identical lambda_hat, covering the grid."""
    plateaus: list[Plateau] = []
    run: list[OperatingPoint] = []
    for pt in points:
        if run and pt.lambda_hat != run[-1].lambda_hat:
            plateaus.append(_close_run(run))
            run = []
        run.append(pt)
    if run:
        plateaus.append(_close_run(run))
    return plateaus


def _close_run(run: list[OperatingPoint]) -> Plateau:
    return Plateau(
        alpha_lo=run[0].alpha,
        alpha_hi=run[-1].alpha,
        length=len(run),
        risk=run[0].empirical_risk,
        avg_set_size=run[0].avg_set_size,
    )


def select_alpha(plateaus: list[Plateau]) -> float:
    """Pick alpha* = lower end of the longest plateau.

    Longer plateaus mean the calibrated threshold is stable under
    perturbations of alpha. Ties go to the lower-risk plateau, then to the
    lower alpha, so selection is deterministic.
    """
    if not plateaus:
        raise EmptyInput("no plateaus to select from")
    best = min(plateaus, key=lambda p: (-p.length, p.risk, p.alpha_lo))
    return best.alpha_lo
