"""Gradient-penalty reconstruction: minimize ||grad_theta E(x, y; theta*)||^2 over x.

theta is held at theta*.  The x-gradient of the penalty is
2 (d/dx grad_theta E)^T grad_theta E, i.e. ``mixed_vjp`` with p = 2 grad_theta E.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .bilevel import ReconResult
from .errors import NumericalError, ShapeError
from .model import Dataset, LossSpec, ModelSpec, ParamVector, grad_theta, mixed_vjp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradPenConfig:
    lr: float = 0.1
    momentum: float = 0.9
    iters: int = 2000
    stop_tol: float = 1e-12
    backoff: float = 0.5

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.iters < 1:
            raise ValueError("iters must be positive")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _theta(spec, theta_star):
    return theta_star.flat if isinstance(theta_star, ParamVector) else np.asarray(theta_star, dtype=np.float64)


def penalty(spec: ModelSpec, theta_star, data: Dataset, loss: LossSpec) -> float:
    g = grad_theta(spec, _theta(spec, theta_star), data, loss)
    val = float(g @ g)
    if not np.isfinite(val):
        raise NumericalError("non-finite gradient penalty")
    return val


def penalty_and_grad(spec: ModelSpec, theta_star, data: Dataset, loss: LossSpec):
    ts = _theta(spec, theta_star)
    g = grad_theta(spec, ts, data, loss)
    val = float(g @ g)
    if not np.isfinite(val):
        raise NumericalError("non-finite gradient penalty")
    return val, mixed_vjp(spec, ts, data, loss, 2.0 * g)


def reconstruct_gradpen(spec: ModelSpec, theta_star, y, x0, loss: LossSpec, cfg: GradPenConfig,
                        manifest: dict | None = None) -> ReconResult:
    """Heavy-ball descent on the penalty from ``x0``.

    A step that increases the penalty is undone, the velocity reset, and the
    learning rate multiplied by ``cfg.backoff``.  ReLU models are allowed
    (subgradient 0 at the kink).
    """
    ts = _theta(spec, theta_star)
    x = np.array(x0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape != (y.size, spec.input_dim):
        raise ShapeError(f"x0 has shape {x.shape}, expected ({y.size}, {spec.input_dim})")
    lr = cfg.lr
    vel = np.zeros_like(x)
    pen, grad = penalty_and_grad(spec, ts, Dataset(x, y), loss)
    traces = {"iter": [], "penalty": [], "grad_norm": [], "lr": []}
    converged, reason = False, "max_iters"
    for it in range(cfg.iters + 1):
        gnorm = float(np.linalg.norm(grad))
        for key, val in zip(traces, (it, pen, gnorm, lr)):
            traces[key].append(val)
        if gnorm <= cfg.stop_tol or pen == 0.0:
            converged, reason = True, "grad_norm"
            break
        if it == cfg.iters:
            break
        while True:
            vel_new = cfg.momentum * vel - lr * grad
            x_new = x + vel_new
            try:
                pen_new, grad_new = penalty_and_grad(spec, ts, Dataset(x_new, y), loss)
            except (NumericalError, FloatingPointError):
                pen_new, grad_new = np.inf, None
            if pen_new <= pen:
                break
            vel = np.zeros_like(x)
            lr *= cfg.backoff
            if lr < 1e-30:
                raise NumericalError(f"gradient-penalty descent cannot decrease at iteration {it}")
        x, vel, pen, grad = x_new, vel_new, pen_new, grad_new
    if traces["penalty"][-1] > traces["penalty"][0]:
        raise NumericalError("penalty increased over the run")
    man = dict(manifest or {})
    man.setdefault("recon", {"method": "gradpen", **cfg.to_dict()})
    return ReconResult(x, ParamVector(spec, ts.copy()), float("nan"), traces, converged, man, reason)
