"""Synthetic multi-asset surface corpus with three planted independent factors.

The generator plants exactly the degrees of freedom the encoder is meant
to discover: an overall vol level, a moneyness skew and a term-structure
slope, each following its own seeded AR(1) path. Stock factors are affine
in the index factors plus idiosyncratic noise, and a stress window shifts
the index level upward. Stock close prices are generated alongside so
realized volatility exists as a regressor.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .surfaces import (
    CANONICAL_GRID,
    Corpus,
    GridSpec,
    SurfaceGrid,
    SurfaceRecord,
    ValidationError,
)

TRADING_DAYS_PER_YEAR = 252


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    # inverse of log(1 + e^x); y must be > 0
    return float(np.log(np.expm1(y)))


@dataclass(frozen=True)
class FactorState:
    """One day's (level, skew, term) factor values."""

    level: float
    skew: float
    term: float

    def as_array(self) -> np.ndarray:
        return np.array([self.level, self.skew, self.term], dtype=np.float64)


def skew_weight(terms: np.ndarray) -> np.ndarray:
    """Positive, decreasing moneyness-skew weight: smiles flatten with term."""
    return np.sqrt(12.0 / np.asarray(terms, dtype=np.float64))


def factor_to_surface(f: FactorState, grid: GridSpec = CANONICAL_GRID) -> SurfaceGrid:
    """vol(tau, M) = softplus(level + skew * (1 - M) * w(tau) + term * log(tau/12))."""
    tau = np.asarray(grid.terms, dtype=np.float64)
    m = np.asarray(grid.moneyness, dtype=np.float64)
    pre = (
        f.level
        + f.skew * np.outer(skew_weight(tau), 1.0 - m)
        + f.term * np.log(tau / 12.0)[:, None]
    )
    return SurfaceGrid(grid, softplus(pre))


@dataclass(frozen=True)
class AssetSpec:
    """Affine loading of one asset's factors on the index factors."""

    symbol: str
    beta_level: float = 1.0
    beta_skew: float = 1.0
    beta_term: float = 1.0
    alpha_level: float = 0.0
    alpha_skew: float = 0.0
    alpha_term: float = 0.0
    idio_scale: float = 0.0

    def __post_init__(self):
        if self.idio_scale < 0:
            raise ValidationError("idio_scale must be >= 0")

    @property
    def betas(self) -> np.ndarray:
        return np.array([self.beta_level, self.beta_skew, self.beta_term])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([self.alpha_level, self.alpha_skew, self.alpha_term])


INDEX_SYMBOL = "INDEX"


def index_spec(symbol: str = INDEX_SYMBOL) -> AssetSpec:
    return AssetSpec(symbol=symbol)


# AR(1) dynamics of the index factors: mean, autocorrelation, stationary sd.
# Means put vols near 20%. The sds are chosen so the three factors feed
# comparable (but deliberately not equal) reconstruction energy into the
# 56-point grid: close enough that all three latent dimensions activate
# within the canonical training budget, spread enough that the encoder
# aligns dimensions with factors instead of an arbitrary rotation.
FACTOR_MEANS = np.array([softplus_inv(0.20), 0.20, 0.05])
FACTOR_PHI = np.array([0.90, 0.90, 0.90])
FACTOR_SD = np.array([0.16, 1.10, 0.18])


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_stocks: int = 8
    n_days: int = 1000
    start_date: dt.date = dt.date(2017, 1, 2)
    split_date: dt.date | None = None  # default: business day index 800
    stress_window: tuple[dt.date, dt.date] | None = None  # default: days 320..359
    stress_level_shift: float = 0.3
    noise_sd: float = 0.0008
    idio_scale: float = 0.06
    grid: GridSpec = CANONICAL_GRID


def business_days(start: dt.date, n: int) -> list[dt.date]:
    """n consecutive weekdays starting at the first weekday >= start."""
    days = []
    d = start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def _resolve_calendar(cfg: SynthConfig):
    dates = business_days(cfg.start_date, cfg.n_days)
    split = cfg.split_date or dates[min(800, cfg.n_days - 1)]
    if cfg.stress_window is None:
        lo = min(320, max(0, cfg.n_days - 41))
        window = (dates[lo], dates[min(lo + 39, cfg.n_days - 1)])
    else:
        window = cfg.stress_window
    if window[0] > window[1]:
        raise ValidationError(f"stress window {window} is reversed")
    if window[0] < dates[0] or window[1] > dates[-1]:
        raise ValidationError(f"stress window {window} outside generated range")
    return dates, split, window


def default_assets(cfg: SynthConfig) -> tuple[AssetSpec, ...]:
    """Index plus n_stocks with seeded betas near one and positive level alphas.

    Positive alpha_level plants the stylized fact that single-stock
    surfaces sit above the index surface.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA55E7]))
    specs = [index_spec()]
    for i in range(cfg.n_stocks):
        specs.append(
            AssetSpec(
                symbol=f"S{i + 1:02d}",
                beta_level=float(rng.uniform(0.75, 1.25)),
                beta_skew=float(rng.uniform(0.75, 1.25)),
                beta_term=float(rng.uniform(0.75, 1.25)),
                alpha_level=float(rng.uniform(0.08, 0.35)),
                alpha_skew=float(rng.uniform(-0.08, 0.08)),
                alpha_term=float(rng.uniform(-0.04, 0.04)),
                idio_scale=cfg.idio_scale,
            )
        )
    return tuple(specs)


@dataclass(frozen=True)
class PriceSeries:
    symbol: str
    dates: tuple[dt.date, ...]
    closes: np.ndarray


@dataclass
class SynthResult:
    """Generated corpus plus the ground truth the tests lean on."""

    corpus: Corpus
    prices: dict[str, PriceSeries]
    factors: dict[str, np.ndarray]  # (n_days, 3) per symbol, stress shift included
    assets: tuple[AssetSpec, ...]
    dates: tuple[dt.date, ...]
    stress_window: tuple[dt.date, dt.date]


def _ar1_path(rng: np.random.Generator, n: int, mean: float, phi: float, sd: float) -> np.ndarray:
    """Stationary AR(1): starts at the stationary draw, innovation sd matched."""
    innov_sd = sd * np.sqrt(1.0 - phi * phi)
    path = np.empty(n)
    path[0] = mean + sd * rng.standard_normal()
    shocks = rng.standard_normal(n - 1)
    for t in range(1, n):
        path[t] = mean + phi * (path[t - 1] - mean) + innov_sd * shocks[t - 1]
    return path


def generate(cfg: SynthConfig, assets: tuple[AssetSpec, ...] | None = None) -> SynthResult:
    """Deterministic corpus + prices + factor paths for a seeded config."""
    dates, split, window = _resolve_calendar(cfg)
    if assets is None:
        assets = default_assets(cfg)
    if not assets or assets[0].symbol != INDEX_SYMBOL:
        raise ValidationError(f"assets must start with the index spec {INDEX_SYMBOL!r}")
    n_days = cfg.n_days

    ss = np.random.SeedSequence(cfg.seed)
    g_factors, g_idio, g_obs, g_px = [np.random.default_rng(c) for c in ss.spawn(4)]

    index_factors = np.column_stack(
        [_ar1_path(g_factors, n_days, FACTOR_MEANS[k], FACTOR_PHI[k], FACTOR_SD[k]) for k in range(3)]
    )
    in_stress = np.array([window[0] <= d <= window[1] for d in dates])
    index_factors[in_stress, 0] += cfg.stress_level_shift

    factors: dict[str, np.ndarray] = {INDEX_SYMBOL: index_factors}
    for spec in assets[1:]:
        idio = g_idio.standard_normal((n_days, 3)) * (spec.idio_scale * FACTOR_SD)
        factors[spec.symbol] = spec.alphas + spec.betas * index_factors + idio

    records: list[SurfaceRecord] = []
    for spec in assets:
        fac = factors[spec.symbol]
        noise = g_obs.standard_normal((n_days, cfg.grid.size)) * cfg.noise_sd
        for t, date in enumerate(dates):
            clean = factor_to_surface(FactorState(*fac[t]), cfg.grid).vols
            noisy = np.maximum(clean + noise[t].reshape(clean.shape), 1e-4)
            records.append(
                SurfaceRecord(date, spec.symbol, SurfaceGrid(cfg.grid, noisy), bool(in_stress[t]))
            )

    prices: dict[str, PriceSeries] = {}
    for i, spec in enumerate(assets):
        inst_vol = softplus(factors[spec.symbol][:, 0])
        daily_sd = inst_vol / np.sqrt(TRADING_DAYS_PER_YEAR)
        shocks = g_px.standard_normal(n_days)
        log_ret = daily_sd * shocks - 0.5 * daily_sd**2
        closes = (50.0 + 25.0 * i) * np.exp(np.cumsum(log_ret))
        prices[spec.symbol] = PriceSeries(spec.symbol, tuple(dates), closes)

    corpus = Corpus(tuple(records), split_date=split)
    return SynthResult(corpus, prices, factors, tuple(assets), tuple(dates), window)


def generate_corpus(cfg: SynthConfig, assets: tuple[AssetSpec, ...] | None = None) -> Corpus:
    return generate(cfg, assets).corpus


def realized_vol(closes: np.ndarray, window: int) -> np.ndarray:
    """Annualized trailing std-dev of log close-to-close returns (ddof=1).

    Entry i of the result belongs to input index window + i: the first
    date whose trailing window of ``window`` returns is fully populated.
    """
    closes = np.asarray(closes, dtype=np.float64)
    if window < 2:
        raise ValidationError("window must be >= 2 returns")
    if closes.ndim != 1 or closes.size <= window:
        raise ValidationError(f"need more than {window} prices, got {closes.size}")
    rets = np.diff(np.log(closes))
    n_out = rets.size - window + 1
    out = np.empty(n_out)
    for i in range(n_out):
        out[i] = np.std(rets[i:i + window], ddof=1)
    return out * np.sqrt(TRADING_DAYS_PER_YEAR)


def realized_vol_series(series: PriceSeries, window: int) -> tuple[tuple[dt.date, ...], np.ndarray]:
    """Dated realized-vol series aligned so each value uses closes up to its date."""
    rv = realized_vol(series.closes, window)
    return series.dates[window:], rv


PRICES_HEADER = ["date", "symbol", "close"]


def save_prices(prices: dict[str, PriceSeries], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRICES_HEADER)
        for symbol in sorted(prices):
            series = prices[symbol]
            for date, close in zip(series.dates, series.closes):
                writer.writerow([date.isoformat(), symbol, f"{close:.12g}"])


def load_prices(path) -> dict[str, PriceSeries]:
    rows: dict[str, list[tuple[dt.date, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PRICES_HEADER:
            raise ValidationError(f"bad prices header {header}, expected {PRICES_HEADER}")
        for row in reader:
            if not row:
                continue
            date, symbol, close = dt.date.fromisoformat(row[0]), row[1], float(row[2])
            rows.setdefault(symbol, []).append((date, close))
    out = {}
    for symbol, pairs in rows.items():
        pairs.sort()
        out[symbol] = PriceSeries(
            symbol,
            tuple(d for d, _ in pairs),
            np.array([c for _, c in pairs]),
        )
    return out
