"""Minimal dense-network engine: affine layers, reverse-mode gradients, Adam.

Gradients are hand-derived per layer (no autodiff tape); everything is
float64. The per-layer arithmetic lives in :mod:`surfvae.kernels` so the
hot loop can run through the compiled backend.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import ACTIVATION_CODES, affine_backward, affine_forward


class DimensionError(ValueError):
    """Array shapes do not chain or match."""


class StaleCacheError(ValueError):
    """A backward call received a cache from a different forward pass."""


@dataclass
class Layer:
    """One affine layer: y = act(W x + b), W stored (n_out, n_in) row-major."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("weights must be 2-d, bias 1-d")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != output dim {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("a net needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.n_in != prev.n_out:
                raise DimensionError(
                    f"layer dims do not chain: {prev.n_out} -> {nxt.n_in}"
                )

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def parameters(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...]; arrays are the live parameters."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


def fan_in_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    """U(-1/sqrt(n_in), 1/sqrt(n_in)) weight init."""
    limit = 1.0 / np.sqrt(n_in)
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def net_forward(net: DenseNet, x: np.ndarray):
    """Forward pass; x is (n_in,) or (B, n_in). Returns (output, cache).

    The cache holds per-layer (input, pre-activation, output) for backward.
    """
    arr = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if arr.shape[1] != net.n_in:
        raise DimensionError(f"input dim {arr.shape[1]} != net input {net.n_in}")
    cache = []
    h = arr
    for layer in net.layers:
        y, zpre = affine_forward(h, layer.weights, layer.bias, ACTIVATION_CODES[layer.activation])
        cache.append((h, zpre, y))
        h = y
    out = h[0] if np.asarray(x).ndim == 1 else h
    return out, cache


def net_backward(net: DenseNet, upstream: np.ndarray, cache):
    """Reverse-mode pass. ``upstream`` is dLoss/dOutput for the cached forward.

    Returns (param_grads, d_input) with param_grads ordered like
    ``net.parameters()``.
    """
    if len(cache) != len(net.layers):
        raise StaleCacheError("cache depth does not match net")
    up = np.ascontiguousarray(np.atleast_2d(np.asarray(upstream, dtype=np.float64)))
    batch = cache[0][0].shape[0]
    if up.shape != (batch, net.n_out):
        raise StaleCacheError(
            f"upstream shape {up.shape} does not match cached forward ({batch}, {net.n_out})"
        )
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(net.layers))
    d = up
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        x_in, zpre, y = cache[idx]
        if zpre.shape != (batch, layer.n_out) or x_in.shape != (batch, layer.n_in):
            raise StaleCacheError(f"cache for layer {idx} does not match its shape")
        d, dw, db = affine_backward(
            d, x_in, layer.weights, zpre, y, ACTIVATION_CODES[layer.activation]
        )
        grads[2 * idx] = dw
        grads[2 * idx + 1] = db
    d_input = d[0] if np.asarray(upstream).ndim == 1 else d
    return grads, d_input


@dataclass
class AdamState:
    """Adam moments and hyperparameters for one parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params/grads/state lengths differ")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def finite_difference_gradients(f, params: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar f() w.r.t. every parameter element.

    ``f`` must read the live arrays in ``params``; they are perturbed in
    place and restored.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray],
                       floor: float = 1e-8) -> float:
    """Elementwise |a - n| / max(|a|, |n|, floor), maximized over all params."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gradient_check(f, params: list[np.ndarray], analytic: list[np.ndarray],
                   h: float = 1e-5, floor: float = 1e-8) -> float:
    """Max relative error between analytic grads and central differences."""
    numeric = finite_difference_gradients(f, params, h=h)
    return max_relative_error(analytic, numeric, floor=floor)
