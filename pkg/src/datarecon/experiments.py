"""Shared experiment plumbing: the desk-scale fixture, attack runs and the lambda grid."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dataio
from .bilevel import ReconConfig, ReconResult, reconstruct
from .gradpen import GradPenConfig, reconstruct_gradpen
from .initsch import DEFAULT_LAMBDAS, InitScheme, grid, make_init
from .metrics import GridCell, grid_aggregate
from .model import Dataset, LossSpec, ModelSpec
from .numcore import RngStream
from .trainer import TrainConfig, TrainReport, train

log = logging.getLogger(__name__)


@dataclass
class Fixture:
    spec: ModelSpec
    loss: LossSpec
    train: Dataset
    holdout: Dataset
    report: TrainReport

    @property
    def theta_star(self) -> np.ndarray:
        return self.report.theta_star.flat

    def sources(self) -> dict:
        return {"gt": self.train.inputs, "labels": self.train.labels,
                "holdout": self.holdout.inputs, "holdout_labels": self.holdout.labels}


def build_spec(arch: str, k: int, hidden=None, activation: str = "softplus", beta: float = 20.0) -> ModelSpec:
    if arch == "affine":
        return ModelSpec.affine(k)
    if arch == "onehidden":
        return ModelSpec.one_hidden(k, hidden, activation, beta)
    if arch == "mlp":
        widths = hidden if hidden else (2 * k, 2 * k)
        return ModelSpec.mlp(k, widths if isinstance(widths, (list, tuple)) else (widths,), activation, beta)
    raise ValueError(f"unknown arch {arch!r}")


def synth_split(n: int, k: int, seed: int, separation: float = 1.0, sigma: float = 0.1):
    """N training rows plus N disjoint, class-balanced held-out rows."""
    full = dataio.synth_dataset(2 * n, k, separation, seed, sigma)
    return dataio.partition_disjoint(full, 0.5, seed, stratified=True)


def make_fixture(arch: str = "affine", n: int = 12, k: int = 48, seed: int = 1, rho: float = 1e-4,
                 loss_kind: str = "logistic", separation: float = 1.0, hidden=None,
                 activation: str = "softplus", beta: float = 20.0,
                 train_cfg: TrainConfig | None = None) -> Fixture:
    tr, ho = synth_split(n, k, seed, separation)
    spec = build_spec(arch, k, hidden, activation, beta)
    loss = LossSpec(loss_kind, rho)
    report = train(spec, tr, loss, train_cfg or TrainConfig(seed=seed))
    return Fixture(spec, loss, tr, ho, report)


def run_attack(spec: ModelSpec, theta_star, y, x0, loss: LossSpec, method: str = "bilevel",
               recon_cfg: ReconConfig | None = None, gp_cfg: GradPenConfig | None = None) -> ReconResult:
    if method == "bilevel":
        return reconstruct(spec, theta_star, y, x0, loss, recon_cfg or ReconConfig())
    if method == "gradpen":
        return reconstruct_gradpen(spec, theta_star, y, x0, loss, gp_cfg or GradPenConfig())
    raise ValueError(f"unknown method {method!r}")


def init_for(fx: Fixture, kind: str, rng: RngStream, sigma: float = 1.0):
    """x^0 for one of random / gaussian / gt / partition on the fixture."""
    scheme = InitScheme("uniform" if kind == "random" else kind, sigma=sigma)
    return make_init(scheme, fx.train.inputs.shape, rng, fx.sources())


def noise_reference(shape, rng: RngStream) -> np.ndarray:
    return rng.child("noise_ref").generator().uniform(0.0, 1.0, size=shape)


def _grid_cell(args):
    spec, theta_star, y, x0, loss, method, recon_cfg, gp_cfg = args
    return run_attack(spec, theta_star, y, x0, loss, method, recon_cfg, gp_cfg).x_rec


def grid_inits(train: Dataset, holdout: Dataset, lambdas, rng: RngStream):
    """One x^0 per (lambda1, lambda2); every cell shares the same x_part and x_rnd draws."""
    src = {"gt": train.inputs, "labels": train.labels,
           "holdout": holdout.inputs, "holdout_labels": holdout.labels}
    cells = grid(lambdas)
    mix_rng = rng.child("mix")
    inits = {}
    for l1, l2 in cells:
        inits[(l1, l2)], _ = make_init(InitScheme("mix", lambda1=l1, lambda2=l2),
                                       train.inputs.shape, mix_rng, src)
    return cells, inits


def run_grid(spec: ModelSpec, theta_star, train: Dataset, holdout: Dataset, loss: LossSpec,
             method: str, rng: RngStream, lambdas=DEFAULT_LAMBDAS, recon_cfg: ReconConfig | None = None,
             gp_cfg: GradPenConfig | None = None, jobs: int = 1):
    """Run every grid cell; returns (cells, {cell: x_rec}, GridCell list).

    Cells are independent; with ``jobs > 1`` they run in worker processes and
    are merged back by cell key, so the output does not depend on scheduling.
    """
    cells, inits = grid_inits(train, holdout, lambdas, rng)
    tasks = [(spec, theta_star, train.labels, inits[c], loss, method, recon_cfg, gp_cfg) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_grid_cell, tasks))
    else:
        outs = []
        for c, t in zip(cells, tasks):
            log.info("grid cell %s (%s)", c, method)
            outs.append(_grid_cell(t))
    results = dict(zip(cells, outs))
    agg: list[GridCell] = grid_aggregate(results, train.inputs, holdout.inputs,
                                         noise_reference(train.inputs.shape, rng), expected=cells)
    return cells, results, agg
