"""Initializations for the reconstructed inputs x."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numcore import RngStream

KINDS = ("uniform", "gaussian", "gt", "partition", "mix")
DEFAULT_LAMBDAS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class InitScheme:
    kind: str
    sigma: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError("gaussian init needs sigma > 0")
        if self.kind == "mix":
            _check_lambdas(self.lambda1, self.lambda2)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "gaussian":
            d["sigma"] = self.sigma
        if self.kind == "mix":
            d.update(lambda1=self.lambda1, lambda2=self.lambda2)
        return d


@dataclass(frozen=True)
class MixScheme:
    lambda1: float
    lambda2: float
    x_gt: np.ndarray
    x_part: np.ndarray
    x_rnd: np.ndarray

    def __post_init__(self):
        _check_lambdas(self.lambda1, self.lambda2)
        shapes = {np.shape(self.x_gt), np.shape(self.x_part), np.shape(self.x_rnd)}
        if len(shapes) != 1:
            raise ShapeError(f"mix sources differ in shape: {sorted(shapes)}")


def _check_lambdas(l1, l2):
    if not (0.0 <= l1 <= 1.0 and 0.0 <= l2 <= 1.0):
        raise ValueError("mixing weights must lie in [0, 1]")


def mix_init(m: MixScheme) -> np.ndarray:
    """x = l2 (l1 x_gt + (1-l1) x_part) + (1-l2) x_rnd."""
    return m.lambda2 * (m.lambda1 * np.asarray(m.x_gt) + (1.0 - m.lambda1) * np.asarray(m.x_part)) \
        + (1.0 - m.lambda2) * np.asarray(m.x_rnd)


def grid(values=DEFAULT_LAMBDAS) -> list[tuple[float, float]]:
    """All (lambda1, lambda2) pairs, lambda1 major."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("need at least one lambda value")
    for v in values:
        _check_lambdas(v, v)
    return list(itertools.product(values, values))


def partition_assignment(slot_labels, holdout_labels, gen: np.random.Generator) -> np.ndarray:
    """Pick, without replacement, a held-out row of the same label for every slot."""
    slot_labels = np.asarray(slot_labels)
    holdout_labels = np.asarray(holdout_labels)
    out = np.empty(slot_labels.size, dtype=np.int64)
    for lab in np.unique(slot_labels):
        slots = np.flatnonzero(slot_labels == lab)
        pool = np.flatnonzero(holdout_labels == lab)
        if pool.size < slots.size:
            raise ValueError(f"held-out partition has {pool.size} rows of label {lab:g}, need {slots.size}")
        out[slots] = gen.choice(pool, size=slots.size, replace=False)
    return out


def make_init(scheme: InitScheme, shape, rng: RngStream, sources: dict | None = None) -> tuple[np.ndarray, dict]:
    """Build x^0 of ``shape``.

    ``sources`` may hold ``gt`` (training inputs), ``labels`` (slot labels),
    ``holdout`` and ``holdout_labels`` (the disjoint partition).  Returns the
    matrix and a record of what was drawn (e.g. the partition slot assignment).
    """
    sources = sources or {}
    n, k = shape
    gen = rng.generator()
    info = scheme.to_dict()

    def need(name):
        if name not in sources or sources[name] is None:
            raise ValueError(f"init {scheme.kind!r} needs source {name!r}")
        arr = np.asarray(sources[name], dtype=np.float64)
        if name in ("gt",) and arr.shape != (n, k):
            raise ShapeError(f"source {name!r} has shape {arr.shape}, expected {(n, k)}")
        return arr

    def partition_rows():
        hold = need("holdout")
        if hold.shape[1] != k:
            raise ShapeError(f"holdout rows have {hold.shape[1]} columns, expected {k}")
        idx = partition_assignment(need("labels"), need("holdout_labels"), gen)
        info["assignment"] = idx.tolist()
        return hold[idx].copy()

    if scheme.kind == "uniform":
        x = gen.uniform(0.0, 1.0, size=(n, k))
    elif scheme.kind == "gaussian":
        x = gen.normal(0.0, scheme.sigma, size=(n, k))
    elif scheme.kind == "gt":
        x = need("gt").copy()
    elif scheme.kind == "partition":
        x = partition_rows()
    else:
        x_gt = need("gt")
        x_part = partition_rows()
        x_rnd = gen.uniform(0.0, 1.0, size=(n, k))
        x = mix_init(MixScheme(scheme.lambda1, scheme.lambda2, x_gt, x_part, x_rnd))
    return x, info
