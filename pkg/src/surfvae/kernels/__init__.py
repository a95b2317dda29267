"""Dense-layer kernels with import-time backend selection.

The compiled Cython extension is used when available; otherwise the
pure-numpy twin in :mod:`._pykernels`. Set ``SURFVAE_PURE_PYTHON=1`` to
force the fallback (used by the benchmark and backend-parity tests).
"""
import os

ACT_IDENTITY = 0
ACT_TANH = 1
ACT_SOFTPLUS = 2

ACTIVATION_CODES = {"identity": ACT_IDENTITY, "tanh": ACT_TANH, "softplus": ACT_SOFTPLUS}

if os.environ.get("SURFVAE_PURE_PYTHON"):
    from . import _pykernels as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _cykernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl

        BACKEND = "numpy"

affine_forward = _impl.affine_forward
affine_backward = _impl.affine_backward
masked_huber_objective = _impl.masked_huber_objective

__all__ = [
    "ACT_IDENTITY",
    "ACT_TANH",
    "ACT_SOFTPLUS",
    "ACTIVATION_CODES",
    "BACKEND",
    "affine_forward",
    "affine_backward",
    "masked_huber_objective",
]
