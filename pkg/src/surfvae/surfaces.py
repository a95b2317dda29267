"""Canonical implied-volatility surface grid, corpus storage and CSV I/O.

Every other module works on the fixed term x moneyness grid defined here.
Vols are decimal fractions (0.20 = 20%) everywhere; flattened vectors are
row-major (term-major) and that ordering is frozen for the life of the repo.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GridError(ValueError):
    """A value does not belong to the grid, or grid axes are malformed."""


class SchemaError(ValueError):
    """A corpus file does not conform to the long-form CSV schema."""


class ValidationError(ValueError):
    """Structurally valid input that violates a domain invariant."""


@dataclass(frozen=True)
class GridSpec:
    """Ordered term (months) and moneyness (K/S) axes of a surface grid."""

    terms: tuple[float, ...]
    moneyness: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(float(t) for t in self.terms))
        object.__setattr__(self, "moneyness", tuple(float(m) for m in self.moneyness))
        if len(self.terms) < 1 or len(self.moneyness) < 1:
            raise GridError("grid axes must be non-empty")
        if any(b <= a for a, b in zip(self.terms, self.terms[1:])):
            raise GridError(f"terms must be strictly increasing, got {self.terms}")
        if any(b <= a for a, b in zip(self.moneyness, self.moneyness[1:])):
            raise GridError(f"moneyness must be strictly increasing, got {self.moneyness}")

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def n_moneyness(self) -> int:
        return len(self.moneyness)

    @property
    def size(self) -> int:
        return self.n_terms * self.n_moneyness

    def term_index(self, term: float) -> int:
        try:
            return self.terms.index(float(term))
        except ValueError:
            raise GridError(f"term {term} not in grid terms {self.terms}") from None

    def moneyness_index(self, m: float) -> int:
        try:
            return self.moneyness.index(float(m))
        except ValueError:
            raise GridError(f"moneyness {m} not in grid moneyness {self.moneyness}") from None


#: The 8-term x 7-moneyness grid used throughout: 56 points.
CANONICAL_GRID = GridSpec(
    terms=(3, 6, 9, 12, 18, 24, 36, 48),
    moneyness=(0.80, 0.90, 0.95, 1.00, 1.05, 1.10, 1.20),
)


@dataclass(frozen=True)
class SurfaceGrid:
    """One implied-vol surface: vols[i][j] = vol at (terms[i], moneyness[j])."""

    grid: GridSpec
    vols: np.ndarray

    def __post_init__(self):
        vols = np.ascontiguousarray(self.vols, dtype=np.float64)
        expected = (self.grid.n_terms, self.grid.n_moneyness)
        if vols.shape != expected:
            raise ValidationError(f"vols shape {vols.shape} does not match grid {expected}")
        if not np.all(np.isfinite(vols)):
            raise ValidationError("vols must be finite")
        if np.any(vols <= 0):
            raise ValidationError("vols must be strictly positive")
        vols.flags.writeable = False
        object.__setattr__(self, "vols", vols)

    def vol(self, term: float, m: float) -> float:
        return float(self.vols[self.grid.term_index(term), self.grid.moneyness_index(m)])

    def mean(self) -> float:
        return float(self.vols.mean())


@dataclass(frozen=True)
class SurfaceRecord:
    """A dated, symbol-tagged surface with a stress-regime label."""

    date: dt.date
    symbol: str
    surface: SurfaceGrid
    stress: bool = False


@dataclass(frozen=True)
class Corpus:
    """Dated surfaces plus the date that separates train from test.

    Train = records dated strictly before ``split_date``; test = the rest.
    """

    records: tuple[SurfaceRecord, ...]
    split_date: dt.date | None = None

    def __post_init__(self):
        records = tuple(self.records)
        seen: set[tuple[dt.date, str]] = set()
        for rec in records:
            key = (rec.date, rec.symbol)
            if key in seen:
                raise ValidationError(f"duplicate record for {key}")
            seen.add(key)
        object.__setattr__(self, "records", records)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(sorted({r.symbol for r in self.records}))

    @property
    def dates(self) -> tuple[dt.date, ...]:
        return tuple(sorted({r.date for r in self.records}))

    def grid(self) -> GridSpec:
        if not self.records:
            raise ValidationError("empty corpus has no grid")
        return self.records[0].surface.grid

    def train(self) -> tuple[SurfaceRecord, ...]:
        if self.split_date is None:
            raise ValidationError("corpus has no split_date; pass one to load_corpus")
        return tuple(r for r in self.records if r.date < self.split_date)

    def test(self) -> tuple[SurfaceRecord, ...]:
        if self.split_date is None:
            raise ValidationError("corpus has no split_date; pass one to load_corpus")
        return tuple(r for r in self.records if r.date >= self.split_date)

    def for_symbol(self, symbol: str) -> tuple[SurfaceRecord, ...]:
        return tuple(r for r in self.records if r.symbol == symbol)


def flatten(surface: SurfaceGrid) -> np.ndarray:
    """Row-major (term-major) 56-vector view of a surface."""
    return surface.vols.ravel(order="C").copy()


def unflatten(grid: GridSpec, vec: Sequence[float]) -> SurfaceGrid:
    """Inverse of :func:`flatten` for the given grid."""
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (grid.size,):
        raise ValidationError(f"expected vector of length {grid.size}, got shape {arr.shape}")
    return SurfaceGrid(grid, arr.reshape(grid.n_terms, grid.n_moneyness))


def subset_mask(grid: GridSpec, terms_kept: Iterable[float], moneyness_kept: Iterable[float]) -> np.ndarray:
    """Boolean mask over the flattened grid, true at kept (term, moneyness) points."""
    t_idx = {grid.term_index(t) for t in terms_kept}
    m_idx = {grid.moneyness_index(m) for m in moneyness_kept}
    mask = np.zeros((grid.n_terms, grid.n_moneyness), dtype=bool)
    for i in t_idx:
        for j in m_idx:
            mask[i, j] = True
    return mask.ravel(order="C")


#: Short-term, near-ATM 12-point mask used by the extrapolation experiments.
KNOWN_TERMS = (3, 6, 9, 12)
KNOWN_MONEYNESS = (0.95, 1.00, 1.05)


def canonical_known_mask(grid: GridSpec = CANONICAL_GRID) -> np.ndarray:
    return subset_mask(grid, KNOWN_TERMS, KNOWN_MONEYNESS)


CSV_HEADER = ["date", "symbol", "term_months", "moneyness", "implied_vol", "stress"]


def _fmt(x: float) -> str:
    # 12 significant digits: text round-trip error <= 1e-12 on vol-scale values.
    return f"{x:.12g}"


def save_corpus(corpus: Corpus, path) -> None:
    """Write the long-form corpus CSV (one row per grid point, sorted)."""
    records = sorted(corpus.records, key=lambda r: (r.date.isoformat(), r.symbol))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            g = rec.surface.grid
            for i, term in enumerate(g.terms):
                for j, m in enumerate(g.moneyness):
                    writer.writerow(
                        [
                            rec.date.isoformat(),
                            rec.symbol,
                            _fmt(term),
                            _fmt(m),
                            _fmt(rec.surface.vols[i, j]),
                            "1" if rec.stress else "0",
                        ]
                    )


def load_corpus(path, split_date: dt.date | None = None, grid: GridSpec | None = None) -> Corpus:
    """Read a long-form corpus CSV into a :class:`Corpus`.

    Each (date, symbol) must cover the full grid; the grid is inferred from
    the union of term/moneyness values in the file unless given explicitly.
    """
    rows: list[tuple[dt.date, str, float, float, float, bool]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise SchemaError(f"bad header {header}, expected {CSV_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise SchemaError(f"line {lineno}: expected 6 columns, got {len(row)}")
            date_s, symbol, term_s, m_s, vol_s, stress_s = row
            try:
                date = dt.date.fromisoformat(date_s)
                term = float(term_s)
                m = float(m_s)
                vol = float(vol_s)
                stress = bool(int(stress_s))
            except ValueError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from None
            if not np.isfinite(vol) or vol <= 0:
                raise ValidationError(
                    f"non-positive implied_vol {vol_s} at ({date_s}, {symbol}, {term_s}, {m_s})"
                )
            rows.append((date, symbol, term, m, vol, stress))

    if not rows:
        raise SchemaError("corpus file contains no data rows")

    if grid is None:
        terms = tuple(sorted({r[2] for r in rows}))
        moneyness = tuple(sorted({r[3] for r in rows}))
        grid = GridSpec(terms, moneyness)

    by_key: dict[tuple[dt.date, str], dict[tuple[float, float], float]] = {}
    stress_by_key: dict[tuple[dt.date, str], bool] = {}
    for date, symbol, term, m, vol, stress in rows:
        key = (date, symbol)
        points = by_key.setdefault(key, {})
        if (term, m) in points:
            raise SchemaError(f"duplicate point ({date}, {symbol}, {term}, {m})")
        points[(term, m)] = vol
        stress_by_key[key] = stress_by_key.get(key, False) or stress

    records = []
    for (date, symbol), points in sorted(by_key.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        vols = np.empty((grid.n_terms, grid.n_moneyness), dtype=np.float64)
        for i, term in enumerate(grid.terms):
            for j, m in enumerate(grid.moneyness):
                if (term, m) not in points:
                    raise SchemaError(f"missing grid point ({date}, {symbol}, {term}, {m})")
                vols[i, j] = points[(term, m)]
        if len(points) != grid.size:
            extra = set(points) - {(t, m) for t in grid.terms for m in grid.moneyness}
            raise SchemaError(f"off-grid points for ({date}, {symbol}): {sorted(extra)}")
        records.append(SurfaceRecord(date, symbol, SurfaceGrid(grid, vols), stress_by_key[(date, symbol)]))

    return Corpus(tuple(records), split_date)
