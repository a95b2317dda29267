"""Variational auto-encoder with a pairwise latent-covariance penalty.

The encoder maps a flattened surface to (mu, log_sigma); sampling uses the
reparameterization z = mu + exp(log_sigma) * eps; the decoder ends in a
softplus head so decoded surfaces are strictly positive. The training loss
is

    total = recon + lambda_kl * kl + lambda_cov * cov

with recon the mean absolute reconstruction error, kl the divergence from
the standard-normal prior and cov a penalty on the batch covariance of
every latent pair. By default the penalty is the summed |covariance|
(see COV_MODES for why the raw signed sum is unusable as a training
objective); :func:`loss_cov` itself stays the signed statistic. Setting
lambda_cov = 0 gives the classic VAE baseline.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass

import numpy as np

from . import __version__
from .neural import (
    AdamState,
    DenseNet,
    DimensionError,
    Layer,
    adam_init,
    adam_step,
    fan_in_uniform,
    net_backward,
    net_forward,
)
from .surfaces import CANONICAL_GRID, Corpus, GridSpec, SurfaceGrid, ValidationError, flatten

ENCODER_HIDDEN = (32, 16)
DECODER_HIDDEN = (16, 32)


@dataclass(frozen=True)
class LatentCode:
    """Encoder output for one surface; z/eps present only after sampling."""

    mu: np.ndarray
    log_sigma: np.ndarray
    z: np.ndarray | None = None
    eps: np.ndarray | None = None


#: How the covariance penalty enters the training objective. "abs" penalizes
#: |cov| per latent pair (minimized exactly at independence); "signed" uses
#: the raw signed sum, which rewards anti-correlated pairs and diverges once
#: lambda_cov outweighs lambda_kl, so it exists for comparison runs only.
COV_MODES = ("abs", "signed")


@dataclass
class VaeModel:
    """Encoder/decoder pair plus loss weights.

    The nets work on vols scaled by ``input_scale`` (percent units by
    default) so the MAE reconstruction term lives on the same order as the
    KL term; corpus files and every public surface API stay in decimal
    fractions.
    """

    encoder: DenseNet
    decoder: DenseNet
    latent_dim: int
    lambda_kl: float
    lambda_cov: float
    grid: GridSpec
    seed: int
    cov_mode: str = "abs"
    input_scale: float = 20.0

    def __post_init__(self):
        if self.cov_mode not in COV_MODES:
            raise ValidationError(f"cov_mode must be one of {COV_MODES}")
        if self.input_scale <= 0:
            raise ValidationError("input_scale must be positive")
        n = self.grid.size
        if self.encoder.n_in != n:
            raise DimensionError(f"encoder input {self.encoder.n_in} != grid size {n}")
        if self.encoder.n_out != 2 * self.latent_dim:
            raise DimensionError(
                f"encoder output {self.encoder.n_out} != 2 x latent_dim {self.latent_dim}"
            )
        if self.decoder.n_in != self.latent_dim or self.decoder.n_out != n:
            raise DimensionError("decoder dimensions do not match latent_dim/grid")

    def copy(self) -> "VaeModel":
        return VaeModel(
            encoder=self.encoder.copy(),
            decoder=self.decoder.copy(),
            latent_dim=self.latent_dim,
            lambda_kl=self.lambda_kl,
            lambda_cov=self.lambda_cov,
            grid=self.grid,
            seed=self.seed,
            cov_mode=self.cov_mode,
            input_scale=self.input_scale,
        )

    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 (covariance needs pairs)")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    kl: float
    cov: float
    total: float


def build_model(grid: GridSpec = CANONICAL_GRID, latent_dim: int = 3,
                lambda_kl: float = 1e-3, lambda_cov: float = 0.1,
                seed: int = 0, cov_mode: str = "abs",
                input_scale: float = 20.0) -> VaeModel:
    """Fresh model: tanh trunks, zero-initialized (mu, log_sigma) head.

    The zero head makes a new model encode everything to the standard
    normal prior, which stabilizes the first training epochs. The decoder
    output bias starts at softplus^-1 of a 20% vol (in net units) so
    decoding begins at a realistic level.
    """
    rng = np.random.default_rng(seed)
    n = grid.size
    d = latent_dim
    out_bias = float(np.log(np.expm1(0.20 * input_scale)))

    enc_layers = []
    prev = n
    for width in ENCODER_HIDDEN:
        enc_layers.append(Layer(fan_in_uniform(rng, width, prev), np.zeros(width), "tanh"))
        prev = width
    enc_layers.append(Layer(np.zeros((2 * d, prev)), np.zeros(2 * d), "identity"))

    dec_layers = []
    prev = d
    for width in DECODER_HIDDEN:
        dec_layers.append(Layer(fan_in_uniform(rng, width, prev), np.zeros(width), "tanh"))
        prev = width
    dec_layers.append(Layer(fan_in_uniform(rng, n, prev), np.full(n, out_bias), "softplus"))

    return VaeModel(
        encoder=DenseNet(enc_layers),
        decoder=DenseNet(dec_layers),
        latent_dim=d,
        lambda_kl=lambda_kl,
        lambda_cov=lambda_cov,
        grid=grid,
        seed=seed,
        cov_mode=cov_mode,
        input_scale=input_scale,
    )


def encode_batch(model: VaeModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mu, log_sigma) for a batch of flattened decimal-vol surfaces."""
    X = np.asarray(X, dtype=np.float64) * model.input_scale
    out, _ = net_forward(model.encoder, X)
    d = model.latent_dim
    return out[:, :d], out[:, d:]


def encode(model: VaeModel, x: np.ndarray | SurfaceGrid) -> LatentCode:
    if isinstance(x, SurfaceGrid):
        x = flatten(x)
    mu, log_sigma = encode_batch(model, np.asarray(x, dtype=np.float64)[None, :])
    return LatentCode(mu=mu[0], log_sigma=log_sigma[0])


def sample_z(code: LatentCode, rng: np.random.Generator) -> LatentCode:
    """Reparameterized draw; returns a code with z and the eps that made it."""
    eps = rng.standard_normal(code.mu.shape[0])
    z = code.mu + np.exp(code.log_sigma) * eps
    return LatentCode(mu=code.mu, log_sigma=code.log_sigma, z=z, eps=eps)


def decode_batch(model: VaeModel, Z: np.ndarray) -> np.ndarray:
    out, _ = net_forward(model.decoder, np.asarray(Z, dtype=np.float64))
    return out / model.input_scale


def decode(model: VaeModel, z: np.ndarray) -> SurfaceGrid:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise DimensionError(f"z must have length {model.latent_dim}, got shape {z.shape}")
    flat = decode_batch(model, z[None, :])[0]
    g = model.grid
    return SurfaceGrid(g, flat.reshape(g.n_terms, g.n_moneyness))


def loss_recon(x: np.ndarray, x_hat: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean(np.abs(x - x_hat)))


def loss_kl(mu: np.ndarray, log_sigma: np.ndarray) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over dims; batch inputs are averaged.

    Uses -0.5 * sum(1 + log sigma^2 - sigma^2 - mu^2) with
    log sigma^2 = 2 * log_sigma.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    log_sigma = np.atleast_2d(np.asarray(log_sigma, dtype=np.float64))
    if mu.shape != log_sigma.shape:
        raise DimensionError("mu and log_sigma shapes differ")
    per_sample = -0.5 * np.sum(1.0 + 2.0 * log_sigma - np.exp(2.0 * log_sigma) - mu**2, axis=1)
    return float(per_sample.mean())


def loss_kl_codes(codes: list[LatentCode]) -> float:
    if not codes:
        raise ValidationError("empty batch")
    mu = np.stack([c.mu for c in codes])
    ls = np.stack([c.log_sigma for c in codes])
    return loss_kl(mu, ls)


def loss_cov(z_batch: np.ndarray) -> float:
    """Summed signed covariance over unordered latent pairs within a batch."""
    Z = np.asarray(z_batch, dtype=np.float64)
    if Z.ndim != 2:
        raise DimensionError("z_batch must be 2-d (batch x latent)")
    B = Z.shape[0]
    if B < 2:
        raise ValidationError("covariance needs a batch of at least 2")
    cross = (Z.T @ Z) / B
    means = Z.mean(axis=0)
    cov = cross - np.outer(means, means)
    return float(np.triu(cov, k=1).sum())


def loss_cov_abs(z_batch: np.ndarray) -> float:
    """|covariance| variant; diagnostic only, never used in training."""
    Z = np.asarray(z_batch, dtype=np.float64)
    B = Z.shape[0]
    if B < 2:
        raise ValidationError("covariance needs a batch of at least 2")
    cross = (Z.T @ Z) / B
    means = Z.mean(axis=0)
    cov = cross - np.outer(means, means)
    return float(np.abs(np.triu(cov, k=1)).sum())


def batch_loss_and_grads(model: VaeModel, X: np.ndarray, eps: np.ndarray):
    """Full three-term loss and its gradients for one batch with frozen eps.

    Returns (LossBreakdown, grads) with grads ordered like
    ``model.parameters()``.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64) * model.input_scale)
    B, n = X.shape
    d = model.latent_dim
    if eps.shape != (B, d):
        raise DimensionError(f"eps shape {eps.shape} != ({B}, {d})")

    enc_out, enc_cache = net_forward(model.encoder, X)
    mu = enc_out[:, :d]
    log_sigma = enc_out[:, d:]
    sig = np.exp(log_sigma)
    Z = mu + sig * eps
    x_hat, dec_cache = net_forward(model.decoder, np.ascontiguousarray(Z))

    recon = float(np.mean(np.abs(x_hat - X)))
    kl = loss_kl(mu, log_sigma)
    Zc = Z - Z.mean(axis=0)
    cov_matrix = (Zc.T @ Zc) / B
    pair_covs = np.triu(cov_matrix, k=1)
    cov = float(np.abs(pair_covs).sum()) if model.cov_mode == "abs" else float(pair_covs.sum())
    total = recon + model.lambda_kl * kl + model.lambda_cov * cov

    # d recon / d x_hat; the subgradient at exact ties is 0.
    d_xhat = np.sign(x_hat - X) / (B * n)
    dec_grads, dZ = net_backward(model.decoder, d_xhat, dec_cache)

    if model.lambda_cov != 0.0:
        # d cov / d z_ti = (1/B) * sum_{j != i} w_ij * (z_tj - mean_j), with
        # w_ij = sign(cov_ij) in abs mode and 1 in signed mode.
        if model.cov_mode == "abs":
            weights = np.sign(cov_matrix)
        else:
            weights = np.ones((d, d))
        np.fill_diagonal(weights, 0.0)
        dZ = dZ + model.lambda_cov * (Zc @ weights) / B

    d_mu = dZ + model.lambda_kl * mu / B
    d_log_sigma = dZ * (sig * eps) + model.lambda_kl * (np.exp(2.0 * log_sigma) - 1.0) / B
    d_enc_out = np.ascontiguousarray(np.concatenate([d_mu, d_log_sigma], axis=1))
    enc_grads, _ = net_backward(model.encoder, d_enc_out, enc_cache)

    return LossBreakdown(recon=recon, kl=kl, cov=cov, total=total), enc_grads + dec_grads


def _train_matrix(corpus: Corpus, grid: GridSpec) -> np.ndarray:
    records = corpus.train()
    if not records:
        raise ValidationError("corpus train split is empty")
    for rec in records:
        if rec.surface.grid != grid:
            raise ValidationError(f"record ({rec.date}, {rec.symbol}) is on a different grid")
    return np.stack([flatten(r.surface) for r in records])


def train(model: VaeModel, corpus: Corpus, cfg: TrainConfig | None = None):
    """Minibatch Adam on the three-term loss; returns (trained copy, history).

    Deterministic given cfg.seed: shuffling and the per-batch eps draws all
    come from one seeded generator. History holds per-epoch mean losses.
    """
    cfg = cfg or TrainConfig()
    trained = model.copy()
    X_all = _train_matrix(corpus, trained.grid)
    n_samples = X_all.shape[0]
    d = trained.latent_dim

    rng = np.random.default_rng(cfg.seed)
    params = trained.parameters()
    state: AdamState = adam_init(params, lr=cfg.learning_rate)

    history: list[LossBreakdown] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n_samples) if cfg.shuffle else np.arange(n_samples)
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue  # a singleton batch has no covariance
            eps = rng.standard_normal((idx.size, d))
            losses, grads = batch_loss_and_grads(trained, X_all[idx], eps)
            adam_step(params, grads, state)
            sums += (losses.recon, losses.kl, losses.cov, losses.total)
            n_batches += 1
        if n_batches == 0:
            raise ValidationError("train split smaller than 2 samples")
        history.append(LossBreakdown(*(float(v) for v in sums / n_batches)))
    return trained, history


CHECKPOINT_FORMAT = "surfvae-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, inconsistent or wrong-version checkpoint file."""


def _net_to_json(net: DenseNet) -> list[dict]:
    return [
        {
            "weights": layer.weights.tolist(),  # (n_out, n_in), row-major
            "bias": layer.bias.tolist(),
            "activation": layer.activation,
        }
        for layer in net.layers
    ]


def _net_from_json(obj, name: str) -> DenseNet:
    try:
        layers = [
            Layer(
                np.array(spec["weights"], dtype=np.float64),
                np.array(spec["bias"], dtype=np.float64),
                spec["activation"],
            )
            for spec in obj
        ]
        return DenseNet(layers)
    except (KeyError, TypeError, ValueError, DimensionError) as exc:
        raise CheckpointError(f"bad {name} layers: {exc}") from None


def save_model(model: VaeModel, path) -> None:
    """Write the versioned JSON checkpoint (see docs/checkpoint_format.md)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "code_version": __version__,
        "latent_dim": model.latent_dim,
        "lambda_kl": model.lambda_kl,
        "lambda_cov": model.lambda_cov,
        "cov_mode": model.cov_mode,
        "input_scale": model.input_scale,
        "seed": model.seed,
        "grid": {"terms": list(model.grid.terms), "moneyness": list(model.grid.moneyness)},
        "encoder": _net_to_json(model.encoder),
        "decoder": _net_to_json(model.decoder),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> VaeModel:
    """Read a checkpoint; fails with the offending field named."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"not valid JSON: {exc}") from None

    for key in ("format", "version", "latent_dim", "lambda_kl", "lambda_cov",
                "cov_mode", "input_scale", "seed", "grid", "encoder", "decoder"):
        if key not in doc:
            raise CheckpointError(f"missing field {key!r}")
    if doc["format"] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"field 'format': expected {CHECKPOINT_FORMAT!r}, got {doc['format']!r}")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"field 'version': unsupported version {doc['version']!r}")
    try:
        grid = GridSpec(tuple(doc["grid"]["terms"]), tuple(doc["grid"]["moneyness"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"field 'grid': {exc}") from None

    latent_dim = doc["latent_dim"]
    if not isinstance(latent_dim, int) or latent_dim < 1:
        raise CheckpointError(f"field 'latent_dim': bad value {latent_dim!r}")

    encoder = _net_from_json(doc["encoder"], "encoder")
    decoder = _net_from_json(doc["decoder"], "decoder")
    if doc["cov_mode"] not in COV_MODES:
        raise CheckpointError(f"field 'cov_mode': bad value {doc['cov_mode']!r}")
    try:
        return VaeModel(
            encoder=encoder,
            decoder=decoder,
            latent_dim=latent_dim,
            lambda_kl=float(doc["lambda_kl"]),
            lambda_cov=float(doc["lambda_cov"]),
            grid=grid,
            seed=int(doc["seed"]),
            cov_mode=doc["cov_mode"],
            input_scale=float(doc["input_scale"]),
        )
    except DimensionError as exc:
        raise CheckpointError(f"field 'latent_dim'/'grid' inconsistent with arrays: {exc}") from None
