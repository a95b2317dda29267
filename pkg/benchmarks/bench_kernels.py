#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Times the dense-layer primitives at training shapes, plus a full training
epoch and a batch of latent inversions, and verifies both backends agree
numerically. Run: python benchmarks/bench_kernels.py
"""
import time

import numpy as np

import surfvae.neural as neural
from surfvae.kernels import ACT_SOFTPLUS, ACT_TANH, _pykernels

try:
    from surfvae.kernels import _cykernels
except ImportError:
    _cykernels = None

from surfvae.extrapolate import ExtrapolationOptions, PartialSurface, extrapolate
from surfvae.surfaces import canonical_known_mask, flatten
from surfvae.synth import SynthConfig, generate
from surfvae.vae import TrainConfig, build_model, decode, train


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def bench_primitives():
    rng = np.random.default_rng(0)
    shapes = [("encoder l1", 16, 56, 32, ACT_TANH),
              ("encoder l2", 16, 32, 16, ACT_TANH),
              ("decoder out", 16, 32, 56, ACT_SOFTPLUS),
              ("decode b=1", 1, 16, 56, ACT_SOFTPLUS)]
    print(f"{'primitive':<14} {'shape':<14} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for name, b, n_in, n_out, act in shapes:
        X = np.ascontiguousarray(rng.standard_normal((b, n_in)))
        W = np.ascontiguousarray(rng.standard_normal((n_out, n_in)))
        bias = rng.standard_normal(n_out)
        dY = np.ascontiguousarray(rng.standard_normal((b, n_out)))

        t_py = timeit(lambda: _pykernels.affine_forward(X, W, bias, act), 2000)
        row = f"{'forward':<14} {name:<14} {t_py * 1e6:>8.1f}us"
        if _cykernels is not None:
            y, z = _cykernels.affine_forward(X, W, bias, act)
            y2, z2 = _pykernels.affine_forward(X, W, bias, act)
            assert np.max(np.abs(y - y2)) < 1e-12, "backend outputs diverge"
            t_cy = timeit(lambda: _cykernels.affine_forward(X, W, bias, act), 2000)
            row += f" {t_cy * 1e6:>8.1f}us {t_py / t_cy:>7.1f}x"
        print(row)

        y, z = _pykernels.affine_forward(X, W, bias, act)
        t_py = timeit(lambda: _pykernels.affine_backward(dY, X, W, z, y, act), 2000)
        row = f"{'backward':<14} {name:<14} {t_py * 1e6:>8.1f}us"
        if _cykernels is not None:
            g1 = _cykernels.affine_backward(dY, X, W, z, y, act)
            g2 = _pykernels.affine_backward(dY, X, W, z, y, act)
            for a, c in zip(g1, g2):
                assert np.max(np.abs(a - c)) < 1e-11, "backend gradients diverge"
            t_cy = timeit(lambda: _cykernels.affine_backward(dY, X, W, z, y, act), 2000)
            row += f" {t_cy * 1e6:>8.1f}us {t_py / t_cy:>7.1f}x"
        print(row)


def with_backend(impl, fn):
    import surfvae.kernels as kernels

    saved = (neural.affine_forward, neural.affine_backward, kernels.masked_huber_objective)
    neural.affine_forward = impl.affine_forward
    neural.affine_backward = impl.affine_backward
    kernels.masked_huber_objective = impl.masked_huber_objective
    try:
        return fn()
    finally:
        neural.affine_forward, neural.affine_backward = saved[:2]
        kernels.masked_huber_objective = saved[2]


def bench_fused_objective():
    rng = np.random.default_rng(0)
    corpus = generate(SynthConfig(seed=0, n_stocks=0, n_days=120)).corpus
    model, _ = train(build_model(seed=0), corpus, TrainConfig(epochs=2, seed=0))
    from surfvae.extrapolate import _objective_factory

    partial = PartialSurface.from_surface(corpus.records[0].surface, canonical_known_mask())
    z = rng.standard_normal(3)

    def once(impl):
        def run():
            fun = _objective_factory(model, partial, 1e-6)
            return timeit(lambda: fun(z), 2000)

        return with_backend(impl, run)

    t_py = once(_pykernels)
    line = f"{'fused objective eval':<28} numpy {t_py * 1e6:>6.1f}us"
    if _cykernels is not None:
        t_cy = once(_cykernels)
        line += f"  cython {t_cy * 1e6:>6.1f}us   speedup {t_py / t_cy:.1f}x"
    print(line)


def bench_training_epoch():
    corpus = generate(SynthConfig(seed=0, n_stocks=2, n_days=300)).corpus
    cfg = TrainConfig(epochs=1, seed=0)

    def one_epoch():
        t0 = time.perf_counter()
        train(build_model(seed=0), corpus, cfg)
        return time.perf_counter() - t0

    t_py = with_backend(_pykernels, one_epoch)
    line = f"{'train epoch':<28} numpy {t_py:>7.2f}s"
    if _cykernels is not None:
        t_cy = with_backend(_cykernels, one_epoch)
        line += f"   cython {t_cy:>6.2f}s   speedup {t_py / t_cy:.1f}x"
    print(line)


def bench_inversion():
    corpus = generate(SynthConfig(seed=0, n_stocks=2, n_days=300)).corpus
    model, _ = train(build_model(seed=0), corpus, TrainConfig(epochs=2, seed=0))
    mask = canonical_known_mask()
    partials = [
        PartialSurface.from_surface(rec.surface, mask) for rec in corpus.records[:20]
    ]
    opts = ExtrapolationOptions(seed=0)

    def invert_all():
        t0 = time.perf_counter()
        for partial in partials:
            extrapolate(model, partial, opts)
        return time.perf_counter() - t0

    t_py = with_backend(_pykernels, invert_all)
    line = f"{'20 latent inversions':<28} numpy {t_py:>7.2f}s"
    if _cykernels is not None:
        t_cy = with_backend(_cykernels, invert_all)
        line += f"   cython {t_cy:>6.2f}s   speedup {t_py / t_cy:.1f}x"
    print(line)


if __name__ == "__main__":
    if _cykernels is None:
        print("compiled backend not available; timing the numpy fallback only\n")
    bench_primitives()
    print()
    bench_fused_objective()
    bench_training_epoch()
    bench_inversion()
