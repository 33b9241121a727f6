"""Levenberg-Marquardt for small dense nonlinear least squares."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConvergenceError(RuntimeError):
    pass


@dataclass
class LMResult:
    x: np.ndarray
    cost: float  # sum of squared residuals
    iterations: int
    converged: bool


def levenberg_marquardt(residual: Callable, jacobian: Callable, x0, *, max_iter: int = 200,
                        ftol: float = 1e-12, xtol: float = 1e-15, lam0: float = 1e-3) -> LMResult:
    """Minimise ``|residual(x)|^2``.

    Damping follows the multiplicative Marquardt schedule with the diagonal of
    ``J^T J`` as scaling. Stops when the cost or the absolute cost decrease
    falls below ``ftol``, or the step becomes negligible.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    cost = float(r @ r)
    lam = lam0
    for it in range(1, max_iter + 1):
        if cost <= ftol:
            return LMResult(x, cost, it - 1, True)
        J = jacobian(x)
        g = J.T @ r
        A = J.T @ J
        d = np.maximum(np.diag(A), 1e-12)
        while True:
            try:
                step = -np.linalg.solve(A + lam * np.diag(d), g)
            except np.linalg.LinAlgError:
                lam *= 10
                if lam > 1e16:
                    return LMResult(x, cost, it, False)
                continue
            x_new = x + step
            r_new = residual(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                break
            lam *= 10
            if lam > 1e16:
                return LMResult(x, cost, it, np.linalg.norm(g) < 1e-12)
        decrease = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10, 1e-12)
        if decrease <= ftol or np.linalg.norm(step) <= xtol * (1 + np.linalg.norm(x)):
            return LMResult(x, cost, it, True)
    return LMResult(x, cost, max_iter, False)


def numeric_jacobian(fun: Callable, x, h: float = 1e-6) -> np.ndarray:
    """Central finite differences."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.column_stack(cols)
