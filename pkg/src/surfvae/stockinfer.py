"""Predict a stock's latent code from the index code plus realized vol.

Three ordinary least squares regressions per (stock, date), one per latent
dimension, each on two regressors: the index's mu for that dimension and
the stock's trailing realized volatility (standardized within the fitting
window). Fit on a trailing window of dates strictly before the prediction
date, decode the predicted code to a full surface.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .evaluation import ThresholdTable, satisfaction
from .latent import EncodedCorpus, encode_corpus
from .surfaces import Corpus, SurfaceGrid, ValidationError
from .synth import INDEX_SYMBOL, PriceSeries, realized_vol_series
from .vae import VaeModel, decode

MIN_WINDOW = 10


class RankDeficientError(ValueError):
    """The OLS design matrix lost a column of variation."""

    def __init__(self, column: str):
        super().__init__(f"rank-deficient regression design: column {column!r} is constant")
        self.column = column


@dataclass(frozen=True)
class RegressionWindowModel:
    """Per-latent (intercept, index slope, realized-vol slope) on one window."""

    coeffs: np.ndarray  # (D, 3)
    rv_mean: float
    rv_sd: float
    window: int
    fit_date: dt.date

    @property
    def latent_dim(self) -> int:
        return self.coeffs.shape[0]


def fit_window(stock_mu: np.ndarray, index_mu: np.ndarray, rv: np.ndarray,
               dates, end_date: dt.date, window: int) -> RegressionWindowModel:
    """OLS per latent dimension on the last ``window`` dates before end_date."""
    stock_mu = np.asarray(stock_mu, dtype=np.float64)
    index_mu = np.asarray(index_mu, dtype=np.float64)
    rv = np.asarray(rv, dtype=np.float64)
    dates = list(dates)
    if not (len(dates) == stock_mu.shape[0] == index_mu.shape[0] == rv.shape[0]):
        raise ValidationError("series lengths differ")
    if window < MIN_WINDOW:
        raise ValidationError(f"window must be >= {MIN_WINDOW}")

    usable = [i for i, d in enumerate(dates) if d < end_date]
    if len(usable) < window:
        raise ValidationError(
            f"only {len(usable)} observations before {end_date}, need {window}"
        )
    idx = usable[-window:]
    s_mu = stock_mu[idx]
    i_mu = index_mu[idx]
    r = rv[idx]

    rv_mean = float(r.mean())
    rv_sd = float(r.std())
    if rv_sd == 0.0:
        raise RankDeficientError("realized_vol")
    r_std = (r - rv_mean) / rv_sd

    d = s_mu.shape[1]
    coeffs = np.empty((d, 3))
    for k in range(d):
        if np.ptp(i_mu[:, k]) == 0.0:
            raise RankDeficientError(f"index_mu_{k + 1}")
        X = np.column_stack([np.ones(window), i_mu[:, k], r_std])
        beta, _, rank, _ = np.linalg.lstsq(X, s_mu[:, k], rcond=None)
        if rank < 3:
            raise RankDeficientError(f"index_mu_{k + 1} x realized_vol")
        coeffs[k] = beta
    return RegressionWindowModel(coeffs, rv_mean, rv_sd, window, end_date)


def predict_latent(reg: RegressionWindowModel, index_mu_t: np.ndarray, rv_t: float) -> np.ndarray:
    index_mu_t = np.asarray(index_mu_t, dtype=np.float64)
    if index_mu_t.shape != (reg.latent_dim,):
        raise ValidationError(f"index code must have length {reg.latent_dim}")
    rv_std = (rv_t - reg.rv_mean) / reg.rv_sd
    return reg.coeffs[:, 0] + reg.coeffs[:, 1] * index_mu_t + reg.coeffs[:, 2] * rv_std


def predict_surface(model: VaeModel, reg: RegressionWindowModel,
                    index_mu_t: np.ndarray, rv_t: float, date: dt.date) -> SurfaceGrid:
    """Decode the regressed latent code; refuses look-ahead fits."""
    if date < reg.fit_date:
        raise ValidationError(
            f"prediction date {date} precedes the regression fit date {reg.fit_date}"
        )
    return decode(model, predict_latent(reg, index_mu_t, rv_t))


@dataclass(frozen=True)
class InferenceRow:
    """Walk-forward result for one stock over the test split."""

    symbol: str
    z_errors: tuple[float, ...]
    satisfaction_rate: float
    n_dates: int


def _lag_map(dates, values) -> dict:
    """date -> value at the immediately preceding date in the series."""
    out = {}
    prev_val = None
    for d, v in zip(dates, values):
        if prev_val is not None:
            out[d] = prev_val
        prev_val = v
    return out


def evaluate_inference(model: VaeModel, corpus: Corpus, prices: dict[str, PriceSeries],
                       window: int = 60, rv_window: int = 252,
                       index_symbol: str = INDEX_SYMBOL,
                       thresholds: ThresholdTable | None = None,
                       enc: EncodedCorpus | None = None) -> list[InferenceRow]:
    """Daily-refit walk-forward over the test split, one row per stock.

    Z errors are mean |predicted - encoded mu| per latent dimension;
    satisfaction compares the decoded prediction with the true surface.
    The realized-vol regressor is lagged one day so every input to a
    prediction at date t is observable before t (the index surface at t
    itself is the one exogenous same-day input, by design).
    """
    if corpus.split_date is None:
        raise ValidationError("corpus needs a split_date for walk-forward evaluation")
    if index_symbol not in corpus.symbols:
        raise ValidationError(f"index symbol {index_symbol!r} not in corpus")

    enc = enc or encode_corpus(model, corpus)
    mu_by_symbol: dict[str, dict[dt.date, np.ndarray]] = {}
    truth_by_symbol: dict[str, dict[dt.date, SurfaceGrid]] = {}
    for e in enc.entries:
        mu_by_symbol.setdefault(e.symbol, {})[e.date] = e.mu
    for rec in corpus.records:
        truth_by_symbol.setdefault(rec.symbol, {})[rec.date] = rec.surface

    index_mu = mu_by_symbol[index_symbol]
    rows = []
    for symbol in corpus.symbols:
        if symbol == index_symbol:
            continue
        if symbol not in prices:
            raise ValidationError(f"no price series for {symbol!r}")
        rv_dates, rv_vals = realized_vol_series(prices[symbol], rv_window)
        rv_lag = _lag_map(rv_dates, rv_vals)
        stock_mu = mu_by_symbol[symbol]

        history = sorted(d for d in stock_mu if d in index_mu and d in rv_lag)
        test_dates = [d for d in history if d >= corpus.split_date]
        if len(test_dates) == 0:
            raise ValidationError(f"no evaluable test dates for {symbol!r}")

        err_sum = np.zeros(model.latent_dim)
        sat_sum = 0.0
        n = 0
        for t in test_dates:
            past = [d for d in history if d < t]
            if len(past) < window:
                continue
            fit_dates = past[-window:]
            reg = fit_window(
                np.stack([stock_mu[d] for d in fit_dates]),
                np.stack([index_mu[d] for d in fit_dates]),
                np.array([rv_lag[d] for d in fit_dates]),
                fit_dates,
                end_date=t,
                window=window,
            )
            z_hat = predict_latent(reg, index_mu[t], rv_lag[t])
            pred = predict_surface(model, reg, index_mu[t], rv_lag[t], t)
            err_sum += np.abs(z_hat - stock_mu[t])
            sat_sum += satisfaction(truth_by_symbol[symbol][t], pred, thresholds).satisfaction_rate
            n += 1
        if n == 0:
            raise ValidationError(f"test split for {symbol!r} shorter than the window")
        rows.append(InferenceRow(symbol, tuple(err_sum / n), sat_sum / n, n))
    return rows
