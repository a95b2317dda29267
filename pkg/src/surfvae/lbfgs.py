"""Limited-memory BFGS with Armijo backtracking line search.

Two-loop recursion over the last ``memory`` curvature pairs, with the
standard s'y / y'y initial Hessian scaling. Small and deterministic; the
latent searches here are 3-dimensional, so robustness matters more than
sophistication in the line search.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LbfgsResult:
    x: np.ndarray
    fx: float
    gnorm: float
    iterations: int
    converged: bool


def minimize_lbfgs(fun_grad, x0: np.ndarray, memory: int = 10, max_iter: int = 200,
                   gtol: float = 1e-8, c1: float = 1e-4, shrink: float = 0.5,
                   max_backtracks: int = 40, ftol: float = 1e-12) -> LbfgsResult:
    """Minimize f: fun_grad(x) -> (f, grad). Returns the best point found.

    Converged means the sup-norm of the gradient fell below ``gtol`` or the
    relative objective decrease stalled below ``ftol``. A failed line
    search ends the run with converged=False.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise ValueError("objective not finite at the starting point")

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    iterations = 0

    for iterations in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= gtol:
            return LbfgsResult(x, f, gnorm, iterations - 1, True)

        # Two-loop recursion: d = -H g
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            q *= gamma
        else:
            q *= 1.0 / max(1.0, gnorm)  # conservative first step
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q

        slope = float(g @ d)
        if slope >= 0:  # not a descent direction: fall back to steepest descent
            d = -g
            slope = float(g @ d)

        step = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + step * d
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                accepted = True
                break
            step *= shrink
        if not accepted:
            return LbfgsResult(x, f, gnorm, iterations, False)

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        stalled = f - f_new <= ftol * max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        if stalled:
            return LbfgsResult(x, f, float(np.max(np.abs(g))), iterations, True)

    gnorm = float(np.max(np.abs(g)))
    return LbfgsResult(x, f, gnorm, iterations, gnorm <= gtol)
