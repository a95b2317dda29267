"""Latent-space diagnostics: corpus encoding, correlations, factor matching.

Independence checks run on the deterministic mu (not sampled z).
``match_factors`` automates the role identification that is otherwise done
by eye: sweep one latent at a time, measure how much each of three surface
statistics (level, skew, term-slope) responds, and assign latents to roles
by maximum-weight matching.
"""
from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .surfaces import Corpus, GridSpec, SurfaceGrid, ValidationError
from .vae import VaeModel, decode, encode_batch
from .surfaces import flatten

ROLES = ("level", "skew", "term")


@dataclass(frozen=True)
class EncodedEntry:
    date: dt.date
    symbol: str
    mu: np.ndarray
    log_sigma: np.ndarray
    stress: bool


@dataclass(frozen=True)
class EncodedCorpus:
    entries: tuple[EncodedEntry, ...]
    latent_dim: int

    def mu_matrix(self, symbol: str | None = None) -> np.ndarray:
        rows = [e.mu for e in self.entries if symbol is None or e.symbol == symbol]
        return np.stack(rows) if rows else np.empty((0, self.latent_dim))

    def for_symbol(self, symbol: str) -> tuple[EncodedEntry, ...]:
        return tuple(e for e in self.entries if e.symbol == symbol)

    def stress_split(self) -> tuple[np.ndarray, np.ndarray]:
        """(mu of stress entries, mu of the rest)."""
        on = [e.mu for e in self.entries if e.stress]
        off = [e.mu for e in self.entries if not e.stress]
        empty = np.empty((0, self.latent_dim))
        return (np.stack(on) if on else empty, np.stack(off) if off else empty)


def encode_corpus(model: VaeModel, corpus: Corpus) -> EncodedCorpus:
    """Deterministic (mu, log_sigma) for every record, in record order."""
    if not corpus.records:
        raise ValidationError("empty corpus")
    if corpus.grid() != model.grid:
        raise ValidationError("model grid does not match corpus grid")
    X = np.stack([flatten(r.surface) for r in corpus.records])
    mu, log_sigma = encode_batch(model, X)
    entries = tuple(
        EncodedEntry(r.date, r.symbol, mu[i].copy(), log_sigma[i].copy(), r.stress)
        for i, r in enumerate(corpus.records)
    )
    return EncodedCorpus(entries, model.latent_dim)


def latent_correlations(mu: np.ndarray | EncodedCorpus) -> np.ndarray:
    """Pearson correlation matrix of the mu columns.

    Zero-variance dimensions get correlation 0 against everything (with a
    warning) instead of NaN.
    """
    M = mu.mu_matrix() if isinstance(mu, EncodedCorpus) else np.asarray(mu, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 3:
        raise ValidationError("need at least 3 encoded entries")
    d = M.shape[1]
    centered = M - M.mean(axis=0)
    sd = centered.std(axis=0)
    flat = sd == 0
    if flat.any():
        warnings.warn(f"zero-variance latent dimension(s) {np.where(flat)[0].tolist()}")
    corr = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            if flat[i] or flat[j]:
                corr[i, j] = corr[j, i] = 0.0
            else:
                c = float(np.mean(centered[:, i] * centered[:, j]) / (sd[i] * sd[j]))
                corr[i, j] = corr[j, i] = c
    return corr


class DegenerateMatchError(ValueError):
    """Two latents drive the same statistic too evenly to assign roles."""

    def __init__(self, message, scores):
        super().__init__(message)
        self.scores = scores


@dataclass(frozen=True)
class FactorMatch:
    """Role assignment: which latent plays level / skew / term, with signs."""

    latent_for_role: dict[str, int]
    sign_for_role: dict[str, int]
    scores: np.ndarray  # (latent, role) normalized |response|
    slopes: np.ndarray  # (latent, role) raw signed response slopes
    dominance: dict[str, float]

    @property
    def dominance_ratio(self) -> float:
        return min(self.dominance.values())

    def permutation(self) -> tuple[int, ...]:
        return tuple(self.latent_for_role[r] for r in ROLES)


def _ols_slope(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    return float((xc @ y) / (xc @ xc))


def surface_statistics(surface: SurfaceGrid) -> np.ndarray:
    """(level, skew, term) descriptors of one surface.

    level: grid mean. skew: mean over terms of the slope of vol against
    (1 - M), so more downside vol = larger skew. term: mean over moneyness
    of the slope of vol against log(term).
    """
    g = surface.grid
    m = np.asarray(g.moneyness)
    log_tau = np.log(np.asarray(g.terms))
    level = float(surface.vols.mean())
    skew = float(np.mean([_ols_slope(1.0 - m, surface.vols[i]) for i in range(g.n_terms)]))
    term = float(np.mean([_ols_slope(log_tau, surface.vols[:, j]) for j in range(g.n_moneyness)]))
    return np.array([level, skew, term])


def match_factors(model: VaeModel | None = None, *, decode_fn=None, latent_dim: int | None = None,
                  span: float = 2.0, steps: int = 21, margin: float = 0.9) -> FactorMatch:
    """Assign each latent to the surface statistic it dominates.

    Sweeps each latent over [-span, span] holding the others at 0, fits a
    response slope per statistic, normalizes per statistic and solves the
    3x3 assignment exactly. Raises :class:`DegenerateMatchError` when the
    top two latents for some statistic are within ``margin`` of each other.
    """
    if decode_fn is None:
        if model is None:
            raise ValidationError("need a model or a decode_fn")
        decode_fn = lambda z: decode(model, z)
        latent_dim = model.latent_dim
    if latent_dim is None:
        raise ValidationError("latent_dim is required with a bare decode_fn")
    if latent_dim != len(ROLES):
        raise ValidationError(f"factor matching needs exactly {len(ROLES)} latents")

    values = np.linspace(-span, span, steps)
    slopes = np.zeros((latent_dim, len(ROLES)))
    for i in range(latent_dim):
        stats = []
        for v in values:
            z = np.zeros(latent_dim)
            z[i] = v
            stats.append(surface_statistics(decode_fn(z)))
        stats = np.stack(stats)
        for s in range(len(ROLES)):
            slopes[i, s] = _ols_slope(values, stats[:, s])

    abs_resp = np.abs(slopes)
    col_max = abs_resp.max(axis=0)
    if np.any(col_max == 0):
        dead = [ROLES[s] for s in range(3) if col_max[s] == 0]
        raise DegenerateMatchError(f"no latent moves statistic(s) {dead}", abs_resp)
    scores = abs_resp / col_max

    dominance = {}
    for s, role in enumerate(ROLES):
        top, second = np.sort(scores[:, s])[::-1][:2]
        if second > margin * top:
            raise DegenerateMatchError(
                f"latents are not separable on {role!r}: top two scores {top:.3f}, {second:.3f}",
                scores,
            )
        dominance[role] = float(top / second) if second > 0 else float("inf")

    best = max(
        permutations(range(latent_dim)),
        key=lambda perm: sum(scores[perm[s], s] for s in range(len(ROLES))),
    )
    latent_for_role = {role: best[s] for s, role in enumerate(ROLES)}
    sign_for_role = {
        role: int(np.sign(slopes[best[s], s])) for s, role in enumerate(ROLES)
    }
    return FactorMatch(latent_for_role, sign_for_role, scores, slopes, dominance)


def scenario_sweep(model: VaeModel, base_z: np.ndarray, dim: int, values) -> list[SurfaceGrid]:
    """Decode variants of base_z with coordinate ``dim`` set to each value."""
    base_z = np.asarray(base_z, dtype=np.float64)
    if base_z.shape != (model.latent_dim,):
        raise ValidationError(f"base_z must have length {model.latent_dim}")
    if not 0 <= dim < model.latent_dim:
        raise ValidationError(f"dim {dim} out of range for D={model.latent_dim}")
    out = []
    for v in values:
        z = base_z.copy()
        z[dim] = v
        out.append(decode(model, z))
    return out


def export_encodings_csv(enc: EncodedCorpus, path) -> None:
    d = enc.latent_dim
    header = ["date", "symbol", "stress"]
    header += [f"mu_{k + 1}" for k in range(d)] + [f"log_sigma_{k + 1}" for k in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for e in enc.entries:
            row = [e.date.isoformat(), e.symbol, "1" if e.stress else "0"]
            row += [f"{x:.12g}" for x in e.mu] + [f"{x:.12g}" for x in e.log_sigma]
            writer.writerow(row)


def export_correlations_csv(corr: np.ndarray, path) -> None:
    d = corr.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + [f"mu_{k + 1}" for k in range(d)])
        for i in range(d):
            writer.writerow([f"mu_{i + 1}"] + [f"{corr[i, j]:.12g}" for j in range(d)])


def export_sweep_csv(grid: GridSpec, dim: int, values, surfaces: list[SurfaceGrid], path) -> None:
    """Sweep output in corpus CSV format; symbol encodes the swept value."""
    from .surfaces import CSV_HEADER, _fmt

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for v, surf in zip(values, surfaces):
            symbol = f"Z{dim + 1}={v:+.3f}"
            for i, term in enumerate(grid.terms):
                for j, m in enumerate(grid.moneyness):
                    writer.writerow(
                        ["1970-01-01", symbol, _fmt(term), _fmt(m), _fmt(surf.vols[i, j]), "0"]
                    )
