"""Full-batch training of theta* with heavy-ball momentum."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .errors import NumericalError
from .model import Dataset, LossSpec, ModelSpec, ParamVector, energy, grad_theta, hvp_theta, init_params
from .numcore import RngStream
from .solvers import newton_cg

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    max_iters: int = 20000
    grad_tol: float = 1e-8
    seed: int = 0
    theta_init: str = "uniform"
    theta_scale: float = 1.0
    # Newton-CG polish after the momentum phase; 0 disables it
    newton_iters: int = 200

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    theta_star: ParamVector
    final_grad_norm: float
    iters_used: int
    energy_trace: list = field(default_factory=list)
    converged: bool = False
    newton_iters_used: int = 0


def momentum_descent(spec, theta0, data, loss, lr, momentum, max_iters, grad_tol):
    """Heavy-ball iterations; returns (theta, grad_norm, iters, energy_trace)."""
    theta = np.array(theta0, dtype=np.float64)
    vel = np.zeros_like(theta)
    e0 = energy(spec, theta, data, loss)
    trace = [e0]
    limit = 1e6 * max(1.0, abs(e0))
    g = grad_theta(spec, theta, data, loss)
    gn = float(np.linalg.norm(g))
    it = 0
    while it < max_iters and gn > grad_tol:
        vel = momentum * vel - lr * g
        theta = theta + vel
        it += 1
        try:
            e = energy(spec, theta, data, loss)
        except NumericalError as exc:
            raise NumericalError(f"training diverged at iteration {it}: {exc}") from exc
        if e > limit:
            raise NumericalError(f"training diverged at iteration {it}: energy {e:.3e}; lower lr")
        trace.append(e)
        g = grad_theta(spec, theta, data, loss)
        gn = float(np.linalg.norm(g))
    return theta, gn, it, trace


def train(spec: ModelSpec, data: Dataset, loss: LossSpec, cfg: TrainConfig, theta0=None) -> TrainReport:
    """Minimize the training energy from theta^0 (drawn from ``cfg.seed`` unless given).

    The momentum phase runs up to ``cfg.max_iters``; if the gradient is still
    above ``cfg.grad_tol`` a Newton-CG polish takes over.
    """
    if data.n == 0:
        raise ValueError("empty dataset")
    if theta0 is None:
        gen = RngStream(cfg.seed).child("theta_init").generator()
        theta0 = init_params(spec, gen, cfg.theta_init, cfg.theta_scale).flat
    theta, gn, iters, trace = momentum_descent(spec, theta0, data, loss, cfg.lr, cfg.momentum,
                                               cfg.max_iters, cfg.grad_tol)
    n_newton = 0
    if gn > cfg.grad_tol and cfg.newton_iters > 0:
        res = newton_cg(lambda t: energy(spec, t, data, loss),
                        lambda t: grad_theta(spec, t, data, loss),
                        lambda t, v: hvp_theta(spec, t, data, loss, v),
                        theta, cfg.grad_tol, cfg.newton_iters)
        theta, gn, n_newton = res.x, res.grad_norm, res.iters
        trace.extend(res.trace[1:])
    converged = gn <= cfg.grad_tol
    if not converged:
        log.warning("training stopped at grad norm %.3e > %.1e", gn, cfg.grad_tol)
    if trace[-1] > trace[0]:
        raise NumericalError(f"final energy {trace[-1]:.6e} exceeds initial {trace[0]:.6e}")
    return TrainReport(ParamVector(spec, theta), gn, iters, trace, converged, n_newton)


def save_report(report: TrainReport, loss: LossSpec, cfg: TrainConfig, out_dir) -> dict:
    """Write ``weights.bin`` and ``train_trace.csv``; returns the paths."""
    out_dir = Path(out_dir)
    spec = report.theta_star.spec
    meta = {"kind": "weights", "spec": spec.to_dict(), "loss": loss.to_dict(), "rho": loss.rho,
            "seed": cfg.seed, "train": cfg.to_dict(), "converged": report.converged,
            "final_grad_norm": report.final_grad_norm}
    wpath = dataio.write_arrays(out_dir / "weights.bin", {"theta": report.theta_star.flat}, meta)
    tpath = out_dir / "train_trace.csv"
    with open(tpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "energy"])
        for i, e in enumerate(report.energy_trace):
            w.writerow([i, repr(float(e))])
    return {"weights": str(wpath), "trace": str(tpath)}


def load_weights(path) -> tuple[ParamVector, LossSpec, dict]:
    header, arrays = dataio.read_arrays(path)
    if header.get("kind") != "weights":
        raise dataio.DataFormatError(f"{path} is not a weights file")
    spec = ModelSpec.from_dict(header["spec"])
    loss = LossSpec(header["loss"]["kind"], float(header["loss"]["rho"]))
    return ParamVector(spec, arrays["theta"]), loss, header
