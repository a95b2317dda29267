"""Bid/offer-spread satisfaction criterion and MAE reporting.

A generated vol point counts as satisfactory when it sits strictly inside
the bid/offer-derived tolerance for its (term, moneyness) bucket. Terms are
bucketed in months as (0,3], (3,9], (9,inf); moneyness as (0,0.9],
(0.9,1.05], (1.05,inf). Thresholds are decimal vols (0.0149 = 1.49%).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .surfaces import SurfaceGrid, ValidationError

TERM_EDGES = (3.0, 9.0)
MONEYNESS_EDGES = (0.9, 1.05)

CANONICAL_THRESHOLDS = (
    (0.0149, 0.0183, 0.0169),
    (0.0088, 0.0118, 0.0105),
    (0.0090, 0.0098, 0.0109),
)


@dataclass(frozen=True)
class ThresholdTable:
    """3x3 satisfaction thresholds over (term bucket, moneyness bucket)."""

    values: tuple[tuple[float, float, float], ...] = CANONICAL_THRESHOLDS

    def __post_init__(self):
        vals = tuple(tuple(float(v) for v in row) for row in self.values)
        if len(vals) != 3 or any(len(row) != 3 for row in vals):
            raise ValidationError("threshold table must be 3x3")
        if any(v <= 0 for row in vals for v in row):
            raise ValidationError("thresholds must be positive")
        object.__setattr__(self, "values", vals)

    def lookup(self, tau: float, m: float) -> float:
        return threshold_for(tau, m, self)


def _bucket(x: float, edges: tuple[float, float]) -> int:
    # Half-open-right buckets: x == edge falls in the lower bucket.
    if x <= edges[0]:
        return 0
    if x <= edges[1]:
        return 1
    return 2


def threshold_for(tau: float, m: float, table: ThresholdTable | None = None) -> float:
    """Threshold (decimal vol) for a point with term ``tau`` months, moneyness ``m``."""
    if tau <= 0 or m <= 0:
        raise ValidationError(f"term and moneyness must be positive, got ({tau}, {m})")
    table = table or ThresholdTable()
    return table.values[_bucket(tau, TERM_EDGES)][_bucket(m, MONEYNESS_EDGES)]


def load_threshold_table(path) -> ThresholdTable:
    """Read a 3x3 decimal-vol threshold override (CSV, no header)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) != 3 or any(len(r) != 3 for r in rows):
        raise ValidationError(f"threshold file must be 3x3, got {len(rows)} rows")
    return ThresholdTable(tuple(tuple(float(v) for v in row) for row in rows))


@dataclass(frozen=True)
class EvalReport:
    """Satisfaction and MAE aggregates for one truth/prediction pair."""

    n_points: int
    n_satisfactory: int
    mae: float
    mae_masked: float | None = None
    mae_unmasked: float | None = None

    @property
    def satisfaction_rate(self) -> float:
        return self.n_satisfactory / self.n_points


def threshold_grid(grid, table: ThresholdTable | None = None) -> np.ndarray:
    """Per-point thresholds for a whole grid, flattened row-major."""
    table = table or ThresholdTable()
    out = np.empty((grid.n_terms, grid.n_moneyness), dtype=np.float64)
    for i, tau in enumerate(grid.terms):
        for j, m in enumerate(grid.moneyness):
            out[i, j] = threshold_for(tau, m, table)
    return out.ravel(order="C")


def satisfaction(truth: SurfaceGrid, pred: SurfaceGrid, table: ThresholdTable | None = None) -> EvalReport:
    """Count points where |truth - pred| is strictly below the bucket threshold."""
    if truth.grid != pred.grid:
        raise ValidationError("truth and prediction grids differ")
    err = np.abs(truth.vols - pred.vols).ravel(order="C")
    thresholds = threshold_grid(truth.grid, table)
    ok = err < thresholds
    return EvalReport(n_points=err.size, n_satisfactory=int(ok.sum()), mae=float(err.mean()))


def mae_split(truth: SurfaceGrid, pred: SurfaceGrid, mask: np.ndarray) -> tuple[float | None, float | None]:
    """(MAE over mask-true points, MAE over mask-false points); None for an empty side."""
    if truth.grid != pred.grid:
        raise ValidationError("truth and prediction grids differ")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (truth.grid.size,):
        raise ValidationError(f"mask must have length {truth.grid.size}")
    err = np.abs(truth.vols - pred.vols).ravel(order="C")
    inside = float(err[mask].mean()) if mask.any() else None
    outside = float(err[~mask].mean()) if (~mask).any() else None
    return inside, outside
