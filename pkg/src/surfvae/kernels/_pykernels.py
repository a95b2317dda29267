"""Pure-numpy kernel backend, API-identical to the compiled extension."""
from __future__ import annotations

import numpy as np

ACT_IDENTITY = 0
ACT_TANH = 1
ACT_SOFTPLUS = 2


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def affine_forward(X, W, b, act):
    """Y = act(X @ W.T + b) for a batch X (B, n_in); returns (Y, pre-activation)."""
    zpre = X @ W.T + b
    if act == ACT_TANH:
        y = np.tanh(zpre)
    elif act == ACT_SOFTPLUS:
        y = np.logaddexp(0.0, zpre)
    else:
        y = zpre.copy()
    return y, zpre


def masked_huber_objective(weights, biases, acts, z, mask_idx, targets, scale, delta):
    """Fused net(z) -> Huber-smoothed MAE on masked outputs, with d/dz.

    Numpy twin of the compiled latent-inversion hot path; same contract.
    """
    hs = [np.asarray(z, dtype=np.float64)]
    zpres = []
    for W, b, act in zip(weights, biases, acts):
        zpre = W @ hs[-1] + b
        if act == ACT_TANH:
            hs.append(np.tanh(zpre))
        elif act == ACT_SOFTPLUS:
            hs.append(np.logaddexp(0.0, zpre))
        else:
            hs.append(zpre.copy())
        zpres.append(zpre)

    y_last = hs[-1]
    n_known = mask_idx.shape[0]
    r = y_last[mask_idx] / scale - targets
    a = np.abs(r)
    inside = a <= delta
    value = float(np.where(inside, r * r / (2.0 * delta), a - delta / 2.0).mean())
    d = np.zeros(y_last.shape[0])
    d[mask_idx] = np.where(inside, r / delta, np.sign(r)) / (n_known * scale)

    cur = d
    for li in range(len(weights) - 1, -1, -1):
        act = acts[li]
        if act == ACT_TANH:
            cur = cur * (1.0 - hs[li + 1] ** 2)
        elif act == ACT_SOFTPLUS:
            cur = cur * _sigmoid(zpres[li])
        cur = cur @ weights[li]
    return value, cur


def affine_backward(dY, X, W, zpre, y, act):
    """Gradients of a scalar through one affine+activation layer.

    Returns (dX, dW, db) given upstream dY and the forward cache (X, zpre, y).
    """
    if act == ACT_TANH:
        dz = dY * (1.0 - y * y)
    elif act == ACT_SOFTPLUS:
        dz = dY * _sigmoid(zpre)
    else:
        dz = dY
    dW = dz.T @ X
    db = dz.sum(axis=0)
    dX = dz @ W
    return dX, dW, db
