"""Read-only HTTP inference API backing the explorer UI.

All endpoints are deterministic functions of the loaded model and the
request body; nothing mutates. Bodies are validated by hand so errors come
back as 400 with the offending field named. Responses are serialized once
with the stdlib JSON encoder, so identical requests yield byte-identical
bodies.
"""
from __future__ import annotations

import json

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .evaluation import ThresholdTable
from .extrapolate import ExtrapolationOptions, PartialSurface, extrapolate
from .latent import DegenerateMatchError, match_factors
from .surfaces import SurfaceGrid, ValidationError
from .vae import CHECKPOINT_VERSION, VaeModel, encode

JSON_MEDIA = "application/json"


class BadRequest(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


def _json_response(payload: dict, status: int = 200) -> Response:
    return Response(json.dumps(payload), status_code=status, media_type=JSON_MEDIA)


def _error(status: int, field: str, message: str) -> Response:
    return _json_response({"error": {"field": field, "message": message}}, status)


def _number_list(body: dict, field: str, length: int) -> np.ndarray:
    if field not in body:
        raise BadRequest(field, "missing")
    value = body[field]
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
        raise BadRequest(field, "must be a list of numbers")
    if len(value) != length:
        raise BadRequest(field, f"expected length {length}, got {len(value)}")
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise BadRequest(field, "values must be finite")
    return arr


def _vol_matrix(body: dict, field: str, n_terms: int, n_moneyness: int) -> np.ndarray:
    if field not in body:
        raise BadRequest(field, "missing")
    value = body[field]
    if not isinstance(value, list) or len(value) != n_terms:
        raise BadRequest(field, f"must be a list of {n_terms} rows")
    rows = []
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != n_moneyness:
            raise BadRequest(field, f"row {i} must have {n_moneyness} values")
        if not all(isinstance(v, (int, float)) for v in row):
            raise BadRequest(field, f"row {i} must contain numbers")
        rows.append([float(v) for v in row])
    return np.asarray(rows, dtype=np.float64)


def _factor_roles(model: VaeModel):
    if model.latent_dim != 3:
        return None
    try:
        match = match_factors(model)
    except (DegenerateMatchError, ValidationError):
        return None
    return {
        role: {"dim": match.latent_for_role[role], "sign": match.sign_for_role[role]}
        for role in match.latent_for_role
    }


def create_app(model: VaeModel, thresholds: ThresholdTable | None = None) -> FastAPI:
    app = FastAPI(title="surfvae", version="1")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    table = thresholds or ThresholdTable()
    grid = model.grid
    meta = {
        "latent_dim": model.latent_dim,
        "grid": {"terms": list(grid.terms), "moneyness": list(grid.moneyness)},
        "lambda_kl": model.lambda_kl,
        "lambda_cov": model.lambda_cov,
        "version": CHECKPOINT_VERSION,
        "thresholds": [list(row) for row in table.values],
        "roles": _factor_roles(model),
    }

    async def _body(request: Request) -> dict:
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            raise BadRequest("body", f"not valid JSON: {exc.msg}") from None
        if not isinstance(body, dict):
            raise BadRequest("body", "must be a JSON object")
        return body

    @app.get("/model/meta")
    def model_meta():
        return _json_response(meta)

    @app.post("/decode")
    async def decode_endpoint(request: Request):
        try:
            body = await _body(request)
            z = _number_list(body, "z", model.latent_dim)
        except BadRequest as exc:
            return _error(400, exc.field, exc.message)
        try:
            from .vae import decode as _decode

            surface = _decode(model, z)
        except Exception as exc:  # noqa: BLE001
            return _error(500, "decode", str(exc))
        return _json_response({"grid": meta["grid"], "vols": surface.vols.tolist()})

    @app.post("/encode")
    async def encode_endpoint(request: Request):
        try:
            body = await _body(request)
            vols = _vol_matrix(body, "vols", grid.n_terms, grid.n_moneyness)
            if np.any(vols <= 0):
                raise BadRequest("vols", "vols must be strictly positive")
        except BadRequest as exc:
            return _error(400, exc.field, exc.message)
        try:
            code = encode(model, SurfaceGrid(grid, vols))
        except Exception as exc:  # noqa: BLE001
            return _error(500, "encode", str(exc))
        return _json_response({"mu": code.mu.tolist(), "log_sigma": code.log_sigma.tolist()})

    @app.post("/extrapolate")
    async def extrapolate_endpoint(request: Request):
        try:
            body = await _body(request)
            if "mask" not in body:
                raise BadRequest("mask", "missing")
            mask_raw = body["mask"]
            if (
                not isinstance(mask_raw, list)
                or len(mask_raw) != grid.size
                or not all(isinstance(v, (bool, int)) for v in mask_raw)
            ):
                raise BadRequest("mask", f"must be a list of {grid.size} booleans")
            mask = np.asarray(mask_raw, dtype=bool)
            n_known = int(mask.sum())
            if n_known < 1:
                raise BadRequest("mask", "needs at least one known point")
            values = _number_list(body, "values", n_known)
            seed = body.get("seed", 0)
            if not isinstance(seed, int):
                raise BadRequest("seed", "must be an integer")
        except BadRequest as exc:
            return _error(400, exc.field, exc.message)
        try:
            result = extrapolate(
                model,
                PartialSurface(grid, mask, values),
                ExtrapolationOptions(seed=seed),
            )
        except Exception as exc:  # noqa: BLE001
            return _error(500, "extrapolate", str(exc))
        return _json_response(
            {
                "z_hat": result.z_hat.tolist(),
                "vols": result.surface.vols.tolist(),
                "objective": result.objective,
                "iterations": result.iterations,
                "converged": result.converged,
            }
        )

    return app
