"""Command-line pipeline: data synthesis, training, diagnostics, serving.

Every artifact-producing subcommand writes a JSON run manifest next to its
primary output so a run can be reproduced from the manifest alone. Exit
codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import os
import sys

import numpy as np

from . import __version__
from .evaluation import ThresholdTable, load_threshold_table, mae_split, satisfaction
from .extrapolate import ExtrapolationOptions, evaluate_extrapolation
from .latent import (
    DegenerateMatchError,
    encode_corpus,
    export_correlations_csv,
    export_encodings_csv,
    export_sweep_csv,
    latent_correlations,
    match_factors,
    scenario_sweep,
)
from .stockinfer import evaluate_inference
from .surfaces import (
    GridError,
    SchemaError,
    ValidationError,
    load_corpus,
    save_corpus,
    subset_mask,
)
from .synth import SynthConfig, generate, load_prices, save_prices
from .vae import CheckpointError, TrainConfig, build_model, load_model, save_model, train

MODEL_ENV_VAR = "SURFVAE_MODEL"


class CliError(Exception):
    """Flag/input validation failure; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _write_manifest(primary_output: str, command: str, args: dict, inputs: list[str],
                    outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "args": args,
        "inputs": sorted(set(inputs)),
        "outputs": sorted(set(outputs)),
        "code_version": __version__,
        "wall_clock_utc": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    with open(primary_output + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, default=str)
        fh.write("\n")


def _args_dict(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(ns).items() if k != "func"}


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _parse_date(s: str) -> dt.date:
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise CliError(f"bad date {s!r}, expected YYYY-MM-DD") from None


def _parse_floats(s: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in s.split(",") if tok != "")
    except ValueError:
        raise CliError(f"{flag} expects comma-separated numbers, got {s!r}") from None


def _split_date_for(corpus_path: str, explicit: str | None) -> dt.date:
    if explicit:
        return _parse_date(explicit)
    manifest_path = corpus_path + ".manifest.json"
    if os.path.isfile(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        split = manifest.get("args", {}).get("split_date") or manifest.get("split_date")
        if split:
            return _parse_date(str(split))
    raise CliError(
        f"--split-date not given and no manifest with one next to {corpus_path}"
    )


def _model_path(ns) -> str:
    path = ns.model or os.environ.get(MODEL_ENV_VAR)
    if not path:
        raise CliError(f"--model not given and {MODEL_ENV_VAR} is unset")
    return _require_file(path, "model checkpoint")


def _load_thresholds(ns) -> ThresholdTable | None:
    if getattr(ns, "thresholds", None):
        return load_threshold_table(_require_file(ns.thresholds, "threshold table"))
    return None


# ---------------------------------------------------------------- commands


def _cmd_synth_data(ns) -> int:
    cfg = SynthConfig(
        seed=ns.seed,
        n_stocks=ns.stocks,
        n_days=ns.days,
        start_date=_parse_date(ns.start_date),
        stress_level_shift=ns.stress_shift,
        noise_sd=ns.noise_sd,
        idio_scale=ns.idio_scale,
    )
    result = generate(cfg)
    prices_out = ns.prices_out or os.path.splitext(ns.out)[0] + ".prices.csv"
    save_corpus(result.corpus, ns.out)
    save_prices(result.prices, prices_out)
    args = _args_dict(ns)
    args["split_date"] = result.corpus.split_date.isoformat()
    args["stress_window"] = [d.isoformat() for d in result.stress_window]
    _write_manifest(ns.out, "synth-data", args, [], [ns.out, prices_out])
    print(f"wrote {len(result.corpus)} surfaces to {ns.out}, prices to {prices_out}")
    return 0


def _cmd_train(ns) -> int:
    corpus_path = _require_file(ns.corpus, "corpus")
    split = _split_date_for(corpus_path, ns.split_date)
    corpus = load_corpus(corpus_path, split_date=split)
    model = build_model(
        grid=corpus.grid(),
        latent_dim=ns.latent_dim,
        lambda_kl=ns.lambda_kl,
        lambda_cov=ns.lambda_cov,
        seed=ns.seed,
    )
    cfg = TrainConfig(
        epochs=ns.epochs,
        batch_size=ns.batch_size,
        learning_rate=ns.lr,
        seed=ns.seed,
        shuffle=True,
    )
    trained, history = train(model, corpus, cfg)
    save_model(trained, ns.out)
    history_path = ns.out + ".history.csv"
    with open(history_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "recon", "kl", "cov", "total"])
        for i, h in enumerate(history, start=1):
            writer.writerow([i] + [f"{v:.12g}" for v in (h.recon, h.kl, h.cov, h.total)])
    args = _args_dict(ns)
    args["split_date"] = split.isoformat()
    _write_manifest(ns.out, "train", args, [corpus_path], [ns.out, history_path])
    last = history[-1]
    print(
        f"trained {ns.epochs} epochs on {len(corpus.train())} surfaces: "
        f"recon={last.recon:.6f} kl={last.kl:.6f} cov={last.cov:.6f}"
    )
    return 0


def _cmd_encode(ns) -> int:
    model = load_model(_model_path(ns))
    corpus = load_corpus(_require_file(ns.corpus, "corpus"))
    enc = encode_corpus(model, corpus)
    export_encodings_csv(enc, ns.out)
    _write_manifest(ns.out, "encode", _args_dict(ns), [ns.corpus], [ns.out])
    print(f"encoded {len(enc.entries)} surfaces to {ns.out}")
    return 0


def _cmd_diagnose(ns) -> int:
    model = load_model(_model_path(ns))
    corpus = load_corpus(_require_file(ns.corpus, "corpus"))
    enc = encode_corpus(model, corpus)
    corr = latent_correlations(enc)
    corr_path = ns.out_prefix + ".correlations.csv"
    export_correlations_csv(corr, corr_path)

    match_path = ns.out_prefix + ".factor_match.json"
    try:
        match = match_factors(model)
        doc = {
            "latent_for_role": match.latent_for_role,
            "sign_for_role": match.sign_for_role,
            "dominance": match.dominance,
            "scores": match.scores.tolist(),
        }
    except (DegenerateMatchError, ValidationError) as exc:
        doc = {"error": str(exc)}
    with open(match_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")

    off_diag = float(np.max(np.abs(corr - np.eye(corr.shape[0]))))
    _write_manifest(corr_path, "diagnose", _args_dict(ns), [ns.corpus], [corr_path, match_path])
    print(f"max |off-diagonal mu correlation| = {off_diag:.4f}")
    print(f"factor match: {doc}")
    return 0


def _cmd_sweep(ns) -> int:
    model = load_model(_model_path(ns))
    base = np.array(_parse_floats(ns.base, "--base")) if ns.base else np.zeros(model.latent_dim)
    if base.shape != (model.latent_dim,):
        raise CliError(f"--base needs {model.latent_dim} values")
    if not 0 <= ns.dim < model.latent_dim:
        raise CliError(f"--dim must be in [0, {model.latent_dim})")
    values = np.linspace(ns.low, ns.high, ns.steps)
    surfaces = scenario_sweep(model, base, ns.dim, values)
    export_sweep_csv(model.grid, ns.dim, values, surfaces, ns.out)
    _write_manifest(ns.out, "sweep", _args_dict(ns), [], [ns.out])
    print(f"wrote {len(surfaces)} swept surfaces to {ns.out}")
    return 0


def _cmd_extrapolate(ns) -> int:
    model = load_model(_model_path(ns))
    corpus = load_corpus(_require_file(ns.corpus, "corpus"),
                         split_date=_parse_date(ns.split_date) if ns.split_date else None)
    try:
        mask = subset_mask(
            model.grid,
            _parse_floats(ns.known_terms, "--known-terms"),
            _parse_floats(ns.known_moneyness, "--known-moneyness"),
        )
    except GridError as exc:
        raise CliError(str(exc)) from None
    records = corpus.test() if corpus.split_date else corpus.records
    rows = evaluate_extrapolation(
        model, records, mask,
        ExtrapolationOptions(seed=ns.seed),
        _load_thresholds(ns),
    )
    with open(ns.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["symbol", "mae_known", "mae_unknown", "satisfaction"])
        for row in rows:
            writer.writerow([
                row.symbol,
                f"{row.mae_known:.12g}",
                f"{row.mae_unknown:.12g}",
                f"{row.satisfaction_rate:.12g}",
            ])
    _write_manifest(ns.out, "extrapolate", _args_dict(ns), [ns.corpus], [ns.out])
    mean_sat = float(np.mean([r.satisfaction_rate for r in rows]))
    print(f"extrapolated {sum(r.n_records for r in rows)} surfaces; mean satisfaction {mean_sat:.3f}")
    return 0


def _cmd_infer_stock(ns) -> int:
    model = load_model(_model_path(ns))
    corpus = load_corpus(
        _require_file(ns.corpus, "corpus"),
        split_date=_split_date_for(ns.corpus, ns.split_date),
    )
    prices = load_prices(_require_file(ns.prices, "price file"))
    rows = evaluate_inference(
        model, corpus, prices,
        window=ns.window, rv_window=ns.rv_window,
        thresholds=_load_thresholds(ns),
    )
    with open(ns.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        d = model.latent_dim
        writer.writerow(["symbol"] + [f"z{k + 1}_error" for k in range(d)] + ["satisfaction"])
        for row in rows:
            writer.writerow(
                [row.symbol]
                + [f"{e:.12g}" for e in row.z_errors]
                + [f"{row.satisfaction_rate:.12g}"]
            )
    _write_manifest(ns.out, "infer-stock", _args_dict(ns), [ns.corpus, ns.prices], [ns.out])
    mean_sat = float(np.mean([r.satisfaction_rate for r in rows]))
    print(f"inferred {len(rows)} stocks; mean satisfaction {mean_sat:.3f}")
    return 0


def _cmd_evaluate(ns) -> int:
    truth = load_corpus(_require_file(ns.truth, "truth corpus"))
    pred = load_corpus(_require_file(ns.pred, "prediction corpus"))
    table = _load_thresholds(ns)
    mask = None
    if ns.known_terms and ns.known_moneyness:
        mask = subset_mask(
            truth.grid(),
            _parse_floats(ns.known_terms, "--known-terms"),
            _parse_floats(ns.known_moneyness, "--known-moneyness"),
        )
    pred_by_key = {(r.date, r.symbol): r for r in pred.records}
    rows = []
    for rec in truth.records:
        other = pred_by_key.get((rec.date, rec.symbol))
        if other is None:
            raise CliError(f"prediction corpus missing ({rec.date}, {rec.symbol})")
        report = satisfaction(rec.surface, other.surface, table)
        row = [rec.date.isoformat(), rec.symbol, report.mae, report.satisfaction_rate]
        if mask is not None:
            inside, outside = mae_split(rec.surface, other.surface, mask)
            row += [inside, outside]
        rows.append(row)
    with open(ns.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["date", "symbol", "mae", "satisfaction"]
        if mask is not None:
            header += ["mae_known", "mae_unknown"]
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0], row[1]] + [f"{v:.12g}" for v in row[2:]])
    _write_manifest(ns.out, "evaluate", _args_dict(ns), [ns.truth, ns.pred], [ns.out])
    print(f"evaluated {len(rows)} surface pairs to {ns.out}")
    return 0


def _cmd_serve(ns) -> int:
    import uvicorn

    from .server import create_app

    model = load_model(_model_path(ns))
    app = create_app(model, thresholds=_load_thresholds(ns))
    print(f"serving model (D={model.latent_dim}) on http://{ns.host}:{ns.port}")
    uvicorn.run(app, host=ns.host, port=ns.port, log_level="warning")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surfvae", description=__doc__)
    parser.add_argument("--version", action="version", version=f"surfvae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="generate a synthetic surface corpus + prices")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stocks", type=int, default=8)
    p.add_argument("--days", type=int, default=1000)
    p.add_argument("--start-date", default="2017-01-02")
    p.add_argument("--stress-shift", type=float, default=0.3)
    p.add_argument("--noise-sd", type=float, default=0.0008)
    p.add_argument("--idio-scale", type=float, default=0.06)
    p.add_argument("--out", required=True)
    p.add_argument("--prices-out", default=None)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="train the auto-encoder on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--latent-dim", type=int, default=3)
    p.add_argument("--lambda-kl", type=float, default=1e-3)
    p.add_argument("--lambda-cov", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-date", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="encode every corpus surface to (mu, log_sigma)")
    p.add_argument("--model", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("diagnose", help="latent correlations and factor-role matching")
    p.add_argument("--model", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("sweep", help="decode a one-dimensional latent sweep")
    p.add_argument("--model", default=None)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--low", type=float, default=-2.0)
    p.add_argument("--high", type=float, default=2.0)
    p.add_argument("--steps", type=int, default=21)
    p.add_argument("--base", default=None, help="comma-separated base z (default zeros)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("extrapolate", help="complete test surfaces from a known subset")
    p.add_argument("--model", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--known-terms", default="3,6,9,12")
    p.add_argument("--known-moneyness", default="0.95,1.00,1.05")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-date", default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extrapolate)

    p = sub.add_parser("infer-stock", help="walk-forward stock-surface inference from the index")
    p.add_argument("--model", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--window", type=int, default=60)
    p.add_argument("--rv-window", type=int, default=252)
    p.add_argument("--split-date", default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer_stock)

    p = sub.add_parser("evaluate", help="satisfaction/MAE report for two aligned corpora")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--known-terms", default=None)
    p.add_argument("--known-moneyness", default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="read-only HTTP inference API for the explorer UI")
    p.add_argument("--model", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--thresholds", default=None)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        return ns.func(ns)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, ValidationError, GridError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
