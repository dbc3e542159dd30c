"""Bilevel reconstruction of training inputs by implicit differentiation.

Given theta* and the labels y, minimize over x

    l(x) = 1/2 ||theta(x) - theta*||^2,   theta(x) = argmin_theta E(x, y; theta).

Each outer iteration

1. re-solves the lower problem at x^k, warm-started from theta^k,
2. solves (H + mu I) p = theta^{k+1} - theta* by CG on Hessian-vector products,
3. forms the hypergradient  dl/dx = -d/dx <grad_theta E(x^k; theta^{k+1}), p>
   (implicit function theorem) and takes a descent step on x.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConvergenceError, NumericalError, ShapeError
from .model import Dataset, LossSpec, ModelSpec, ParamVector, energy, grad_theta, hvp_theta, mixed_vjp
from .solvers import CGConfig, MinimizeResult, cg_solve, newton_cg
from .trainer import TrainConfig, momentum_descent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconConfig:
    method: str = "bilevel"
    eta: float = 0.01
    outer_iters: int = 1000
    upper_loss: str = "halfsqdist"
    lower: TrainConfig = field(default_factory=TrainConfig)
    cg: CGConfig = field(default_factory=CGConfig)
    stop_tol: float = 1e-8
    project_box: bool = False
    # halve eta until the upper loss does not increase; grow it by eta_growth after a success
    backtrack: bool = True
    eta_growth: float = 1.0
    max_backtracks: int = 30

    def __post_init__(self):
        if self.method not in ("bilevel", "gradpen"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.upper_loss != "halfsqdist":
            raise ValueError("only the halfsqdist upper loss is implemented")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be positive")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lower"] = self.lower.to_dict()
        d["cg"] = self.cg.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReconConfig":
        d = dict(d)
        d["lower"] = TrainConfig(**d.get("lower", {}))
        d["cg"] = CGConfig(**d.get("cg", {}))
        return cls(**d)


@dataclass
class SolverState:
    x_k: np.ndarray
    theta_k: np.ndarray
    p_k: np.ndarray
    a_k: np.ndarray
    upper_loss_trace: list = field(default_factory=list)


@dataclass
class ReconResult:
    x_rec: np.ndarray
    theta_final: ParamVector
    theta_dist: float
    traces: dict
    converged: bool
    manifest: dict = field(default_factory=dict)
    stop_reason: str = ""

    def trace_rows(self):
        keys = list(self.traces)
        return keys, list(zip(*(self.traces[k] for k in keys)))


def half_sq_dist(theta_star, theta) -> float:
    d = np.asarray(theta) - np.asarray(theta_star)
    return 0.5 * float(d @ d)


def solve_lower(spec: ModelSpec, data: Dataset, loss: LossSpec, lower_cfg: TrainConfig, theta_warm) -> np.ndarray:
    """theta^{k+1} = argmin_theta E(x^k, y; theta) to ``lower_cfg.grad_tol``.

    Newton-CG from the warm start; if that stalls, a momentum phase followed
    by a second Newton polish.  Raises :class:`ConvergenceError` if the
    tolerance is still not met: the implicit hypergradient is meaningless
    away from a stationary point.
    """
    warm = theta_warm.flat if isinstance(theta_warm, ParamVector) else np.asarray(theta_warm, dtype=np.float64)

    def newton(start):
        return newton_cg(lambda t: energy(spec, t, data, loss),
                         lambda t: grad_theta(spec, t, data, loss),
                         lambda t, v: hvp_theta(spec, t, data, loss, v, bilevel=True),
                         start, lower_cfg.grad_tol, max(lower_cfg.newton_iters, 1))

    res = newton(warm)
    if not res.converged:
        log.debug("lower solve: Newton stalled at %.3e, falling back to momentum", res.grad_norm)
        theta, gn, _, _ = momentum_descent(spec, res.x, data, loss, lower_cfg.lr, lower_cfg.momentum,
                                           lower_cfg.max_iters, lower_cfg.grad_tol)
        res = newton(theta) if gn > lower_cfg.grad_tol else MinimizeResult(theta, gn, 0, True, [])
    if not res.converged:
        raise ConvergenceError(f"lower solve stopped at grad norm {res.grad_norm:.3e} "
                               f"(tol {lower_cfg.grad_tol:.1e})", iters=res.iters, residual=res.grad_norm)
    return res.x


def inv_hvp(spec: ModelSpec, theta, data: Dataset, loss: LossSpec, g, cg_cfg: CGConfig) -> np.ndarray:
    """p with ||(H + mu I) p - g|| <= tol ||g||, H the Hessian of E in theta (never formed)."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite right-hand side for inverse HVP")
    p, _ = cg_solve(lambda v: hvp_theta(spec, theta, data, loss, v, bilevel=True), g,
                    tol=cg_cfg.tol, max_iters=cg_cfg.max_iters, damping=cg_cfg.damping)
    return p


def hypergradient(spec, theta_k1, data, loss, theta_star, cg_cfg):
    """Return (dl/dx, p) at a lower-level solution ``theta_k1``."""
    p = inv_hvp(spec, theta_k1, data, loss, theta_k1 - theta_star, cg_cfg)
    g = -mixed_vjp(spec, theta_k1, data, loss, p, bilevel=True)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite hypergradient")
    return g, p


def reconstruct(spec: ModelSpec, theta_star, y, x0, loss: LossSpec, cfg: ReconConfig,
                theta_warm=None, manifest: dict | None = None) -> ReconResult:
    """Run the bilevel attack from ``x0`` with labels ``y`` fixed."""
    if spec.activation == "relu":
        raise ValueError("bilevel mode needs a twice differentiable model; use softplus")
    ts = theta_star.flat if isinstance(theta_star, ParamVector) else np.asarray(theta_star, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape != (y.size, spec.input_dim):
        raise ShapeError(f"x0 has shape {x.shape}, expected ({y.size}, {spec.input_dim})")
    n, k = x.shape

    theta = solve_lower(spec, Dataset(x, y), loss, cfg.lower, ts if theta_warm is None else theta_warm)
    upper = half_sq_dist(ts, theta)
    traces = {"iter": [], "upper_loss": [], "a_norm": [], "theta_dist": [], "eta": []}
    eta = cfg.eta
    converged = False
    reason = "max_iters"
    state = SolverState(x, theta, np.zeros_like(ts), np.zeros_like(x), traces["upper_loss"])
    for it in range(cfg.outer_iters + 1):
        data = Dataset(x, y)
        a, p = hypergradient(spec, theta, data, loss, ts, cfg.cg)
        a_norm = float(np.linalg.norm(a))
        state.p_k, state.a_k = p, a
        for key, val in zip(traces, (it, upper, a_norm, 2.0 * upper, eta)):
            traces[key].append(val)
        if a_norm <= cfg.stop_tol * n * k:
            converged, reason = True, "grad_norm"
            break
        if it == cfg.outer_iters:
            break
        for _ in range(cfg.max_backtracks + 1):
            x_new = x - eta * a
            if cfg.project_box:
                np.clip(x_new, 0.0, 1.0, out=x_new)
            try:
                theta_new = solve_lower(spec, Dataset(x_new, y), loss, cfg.lower, theta)
            except (ConvergenceError, NumericalError):
                if not cfg.backtrack:
                    raise
                eta *= 0.5
                continue
            upper_new = half_sq_dist(ts, theta_new)
            if not cfg.backtrack or upper_new <= upper:
                break
            eta *= 0.5
        else:
            log.info("bilevel: no decrease after %d backtracks at iteration %d", cfg.max_backtracks, it)
            reason = "stalled"
            break
        x, theta, upper = x_new, theta_new, upper_new
        state.x_k, state.theta_k = x, theta
        if cfg.backtrack:
            eta *= cfg.eta_growth

    if traces["upper_loss"][-1] > traces["upper_loss"][0]:
        raise NumericalError("upper loss increased over the run")
    theta_pv = ParamVector(spec, theta)
    man = dict(manifest or {})
    man.setdefault("recon", cfg.to_dict())
    return ReconResult(x, theta_pv, float(np.sum((ts - theta) ** 2)), traces, converged, man, reason)
