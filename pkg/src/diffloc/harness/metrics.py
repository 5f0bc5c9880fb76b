"""Calibration metrics over evaluation records."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .training import TrialRecord

__all__ = ["pearson", "CalibrationResult", "calibration_report"]


def pearson(xs, ys) -> float | None:
    """Pearson correlation; None when either side has zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError(f"need equal-length 1-D inputs, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt((xc * xc).sum()))
    sy = float(np.sqrt((yc * yc).sum()))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(xc @ yc / (sx * sy))


@dataclass(frozen=True)
class CalibrationResult:
    """Correlation between map confidence and localization accuracy."""

    r: float | None
    count: int

    @property
    def defined(self) -> bool:
        return self.r is not None


def calibration_report(records: Sequence[TrialRecord]) -> CalibrationResult:
    """Pearson r between peak weight and negated error: higher confidence
    should mean lower error for a well-calibrated model."""
    peaks = [rec.peak for rec in records]
    neg_errors = [-rec.error for rec in records]
    return CalibrationResult(pearson(peaks, neg_errors), len(records))
