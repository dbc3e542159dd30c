"""Matrix-free conjugate gradients and a Newton-CG minimizer built on it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError, NumericalError


@dataclass(frozen=True)
class CGConfig:
    max_iters: int | None = None  # None -> dimension of the system
    tol: float = 1e-8
    damping: float = 1e-6

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("cg tol must be positive")
        if not self.damping >= 0:
            raise ValueError("cg damping must be nonnegative")

    def to_dict(self) -> dict:
        return {"max_iters": self.max_iters, "tol": self.tol, "damping": self.damping}


@dataclass
class CGInfo:
    iters: int
    residual: float


def cg_solve(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray, tol: float = 1e-8,
             max_iters: int | None = None, damping: float = 0.0, x0=None) -> tuple[np.ndarray, CGInfo]:
    """Solve (A + damping*I) x = b for symmetric positive definite A given only ``matvec``.

    Stops once ||r|| <= tol*||b||.  Raises :class:`ConvergenceError` on
    non-positive curvature or when ``max_iters`` is exhausted.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if not np.isfinite(bnorm):
        raise NumericalError("non-finite right-hand side")
    if bnorm == 0.0:
        return np.zeros_like(b), CGInfo(0, 0.0)
    max_iters = b.size if max_iters is None else max_iters
    target = tol * bnorm

    def op(v):
        return matvec(v) + damping * v

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - op(x) if x0 is not None else b.copy()
    d = r.copy()
    rr = float(r @ r)
    for it in range(1, max_iters + 1):
        if np.sqrt(rr) <= target:
            return x, CGInfo(it - 1, float(np.sqrt(rr)))
        Ad = op(d)
        curv = float(d @ Ad)
        if not curv > 0:
            raise ConvergenceError(f"CG breakdown: curvature {curv:.3e} at iteration {it}; raise damping",
                                   iters=it, residual=float(np.sqrt(rr)))
        alpha = rr / curv
        x += alpha * d
        r -= alpha * Ad
        rr_new = float(r @ r)
        d = r + (rr_new / rr) * d
        rr = rr_new
    res = float(np.sqrt(rr))
    if res <= target:
        return x, CGInfo(max_iters, res)
    raise ConvergenceError(f"CG reached {max_iters} iterations with relative residual {res / bnorm:.3e}",
                           iters=max_iters, residual=res)


def _truncated_cg(hvp, g, forcing, max_iters):
    """Approximate Newton direction for H d = -g; stops at negative curvature."""
    d = np.zeros_like(g)
    r = -g.copy()
    p = r.copy()
    rr = float(r @ r)
    target = forcing * np.sqrt(rr)
    for _ in range(max_iters):
        Hp = hvp(p)
        curv = float(p @ Hp)
        if curv <= 0:
            return d if d.any() else -g
        alpha = rr / curv
        d += alpha * p
        r -= alpha * Hp
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= target:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return d


@dataclass
class MinimizeResult:
    x: np.ndarray
    grad_norm: float
    iters: int
    converged: bool
    trace: list


def newton_cg(fun, grad, hvp, x0, grad_tol: float, max_iters: int = 100,
              cg_max_iters: int | None = None) -> MinimizeResult:
    """Line-search Newton-CG.  Stops when ||grad|| <= grad_tol."""
    x = np.array(x0, dtype=np.float64)
    f = fun(x)
    g = grad(x)
    gn = float(np.linalg.norm(g))
    trace = [f]
    cg_max = cg_max_iters or max(10, x.size)
    for it in range(max_iters):
        if gn <= grad_tol:
            return MinimizeResult(x, gn, it, True, trace)
        forcing = min(0.5, np.sqrt(gn))
        d = _truncated_cg(lambda v: hvp(x, v), g, forcing, cg_max)
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -gn * gn
        t = 1.0
        accepted = False
        for _ in range(40):
            xn = x + t * d
            fn = fun(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        gn_new = None
        if not accepted:
            # energy differences are below roundoff; accept a full step that shrinks the gradient
            xn = x + d
            fn = fun(xn)
            g_try = grad(xn)
            gn_new = float(np.linalg.norm(g_try))
            if not (np.isfinite(fn) and gn_new < gn):
                return MinimizeResult(x, gn, it, False, trace)
        x, f = xn, fn
        g = grad(x) if gn_new is None else g_try
        gn = float(np.linalg.norm(g))
        trace.append(f)
    return MinimizeResult(x, gn, max_iters, gn <= grad_tol, trace)
