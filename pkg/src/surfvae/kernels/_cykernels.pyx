# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend for the dense-layer hot loop.

Layer widths here are tiny (3..56) and batches small, so per-call numpy
dispatch overhead dominates; plain C loops win. Results agree with the
numpy backend to float64 rounding (summation order differs from BLAS).
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log1p, tanh

cnp.import_array()

ACT_IDENTITY = 0
ACT_TANH = 1
ACT_SOFTPLUS = 2


cdef inline double _softplus(double z) nogil:
    if z > 0.0:
        return z + log1p(exp(-z))
    return log1p(exp(z))


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def affine_forward(double[:, ::1] X, double[:, ::1] W, double[::1] b, int act):
    """Y = act(X @ W.T + b) for a batch X (B, n_in); returns (Y, pre-activation)."""
    cdef Py_ssize_t B = X.shape[0]
    cdef Py_ssize_t n_in = X.shape[1]
    cdef Py_ssize_t n_out = W.shape[0]
    if W.shape[1] != n_in:
        raise ValueError("weight/input dimension mismatch")
    if b.shape[0] != n_out:
        raise ValueError("bias/output dimension mismatch")

    y_np = np.empty((B, n_out), dtype=np.float64)
    zpre_np = np.empty((B, n_out), dtype=np.float64)
    cdef double[:, ::1] Y = y_np
    cdef double[:, ::1] Z = zpre_np
    cdef Py_ssize_t t, i, k, tail
    cdef double a0, a1, a2, a3, acc

    # four independent accumulators keep the reduction vectorizable while
    # staying deterministic (fixed summation order, no fast-math)
    with nogil:
        tail = n_in - (n_in & 3)
        for t in range(B):
            for i in range(n_out):
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                a3 = 0.0
                for k in range(0, tail, 4):
                    a0 += X[t, k] * W[i, k]
                    a1 += X[t, k + 1] * W[i, k + 1]
                    a2 += X[t, k + 2] * W[i, k + 2]
                    a3 += X[t, k + 3] * W[i, k + 3]
                acc = b[i] + ((a0 + a1) + (a2 + a3))
                for k in range(tail, n_in):
                    acc += X[t, k] * W[i, k]
                Z[t, i] = acc
                if act == 1:
                    Y[t, i] = tanh(acc)
                elif act == 2:
                    Y[t, i] = _softplus(acc)
                else:
                    Y[t, i] = acc
    return y_np, zpre_np


def masked_huber_objective(list weights, list biases, const long[::1] acts,
                           const double[::1] z, const long[::1] mask_idx,
                           const double[::1] targets, double scale, double delta):
    """Fused net(z) -> Huber-smoothed MAE on masked outputs, with d/dz.

    The latent-inversion hot loop: one compiled call instead of a cached
    forward/backward pair, for a single latent vector. ``weights`` holds
    C-contiguous (n_out, n_in) float64 arrays, net outputs are divided by
    ``scale`` before comparing against ``targets``.
    """
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t n_known = mask_idx.shape[0]
    cdef list hs = [np.ascontiguousarray(z, dtype=np.float64)]
    cdef list zpres = []
    cdef double[:, ::1] W
    cdef double[::1] b, h_in, h_out, zp
    cdef Py_ssize_t li, i, k, j
    cdef int act
    cdef double acc, r, a, value

    for li in range(n_layers):
        W = weights[li]
        b = biases[li]
        act = acts[li]
        h_in = hs[li]
        out_np = np.empty(W.shape[0], dtype=np.float64)
        zpre_np = np.empty(W.shape[0], dtype=np.float64)
        h_out = out_np
        zp = zpre_np
        with nogil:
            for i in range(W.shape[0]):
                acc = b[i]
                for k in range(W.shape[1]):
                    acc += h_in[k] * W[i, k]
                zp[i] = acc
                if act == 1:
                    h_out[i] = tanh(acc)
                elif act == 2:
                    h_out[i] = _softplus(acc)
                else:
                    h_out[i] = acc
        hs.append(out_np)
        zpres.append(zpre_np)

    # objective on the masked outputs, upstream gradient into the net output
    cdef double[::1] y_last = hs[n_layers]
    d_np = np.zeros(y_last.shape[0], dtype=np.float64)
    cdef double[::1] d = d_np
    value = 0.0
    with nogil:
        for j in range(n_known):
            i = mask_idx[j]
            r = y_last[i] / scale - targets[j]
            a = fabs(r)
            if a <= delta:
                value += r * r / (2.0 * delta)
                d[i] = r / (delta * n_known * scale)
            else:
                value += a - delta / 2.0
                d[i] = (1.0 if r > 0.0 else -1.0) / (n_known * scale)
        value /= n_known

    # reverse pass, gradient w.r.t. the layer input only
    cdef double[::1] cur = d
    cdef double[::1] g
    for li in range(n_layers - 1, -1, -1):
        W = weights[li]
        act = acts[li]
        zp = zpres[li]
        h_in = hs[li + 1]  # layer output, for the tanh derivative
        nxt_np = np.zeros(W.shape[1], dtype=np.float64)
        g = nxt_np
        with nogil:
            for i in range(W.shape[0]):
                acc = cur[i]
                if act == 1:
                    acc *= 1.0 - h_in[i] * h_in[i]
                elif act == 2:
                    acc *= _sigmoid(zp[i])
                if acc != 0.0:
                    for k in range(W.shape[1]):
                        g[k] += acc * W[i, k]
        cur = g
    return value, nxt_np


def affine_backward(double[:, ::1] dY, double[:, ::1] X, double[:, ::1] W,
                    double[:, ::1] zpre, double[:, ::1] y, int act):
    """Gradients of a scalar through one affine+activation layer.

    Returns (dX, dW, db) given upstream dY and the forward cache (X, zpre, y).
    """
    cdef Py_ssize_t B = X.shape[0]
    cdef Py_ssize_t n_in = X.shape[1]
    cdef Py_ssize_t n_out = W.shape[0]
    if dY.shape[0] != B or dY.shape[1] != n_out:
        raise ValueError("upstream gradient shape mismatch")

    dx_np = np.zeros((B, n_in), dtype=np.float64)
    dw_np = np.zeros((n_out, n_in), dtype=np.float64)
    db_np = np.zeros(n_out, dtype=np.float64)
    cdef double[:, ::1] dX = dx_np
    cdef double[:, ::1] dW = dw_np
    cdef double[::1] db = db_np
    cdef Py_ssize_t t, i, k
    cdef double g

    with nogil:
        for t in range(B):
            for i in range(n_out):
                g = dY[t, i]
                if act == 1:
                    g *= 1.0 - y[t, i] * y[t, i]
                elif act == 2:
                    g *= _sigmoid(zpre[t, i])
                db[i] += g
                for k in range(n_in):
                    dW[i, k] += g * X[t, k]
                    dX[t, k] += g * W[i, k]
    return dx_np, dw_np, db_np
