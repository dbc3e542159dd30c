"""Nearest-neighbour matching, ranks, theta distance and grid aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ShapeError


@dataclass
class NNRecord:
    recon_index: int
    nn_index: int
    l2: float
    sq_dists: np.ndarray

    def rank_of(self, ref_index: int) -> int:
        """1-based position of ``ref_index`` when refs are sorted by distance, ties by index."""
        if not 0 <= ref_index < self.sq_dists.size:
            raise IndexError(f"reference index {ref_index} out of range")
        d = self.sq_dists[ref_index]
        closer = np.count_nonzero(self.sq_dists < d)
        tied_before = np.count_nonzero(self.sq_dists[:ref_index] == d)
        return int(closer + tied_before + 1)


def _check(queries, refset):
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    refset = np.asarray(refset, dtype=np.float64)
    if refset.ndim != 2 or refset.shape[0] == 0:
        raise ShapeError("reference set must be a non-empty matrix")
    if queries.shape[1] != refset.shape[1]:
        raise ShapeError(f"query dim {queries.shape[1]} != reference dim {refset.shape[1]}")
    return queries, refset


def nearest_neighbors(queries, refset) -> list[NNRecord]:
    queries, refset = _check(queries, refset)
    D = _kernels.sq_dists(queries, refset)
    out = []
    for i, row in enumerate(D):
        j = int(np.argmin(row))  # first minimum = lowest index on ties
        out.append(NNRecord(i, j, float(np.sqrt(row[j])), row))
    return out


def nearest_neighbor(x_rec_row, refset, recon_index: int = 0) -> NNRecord:
    rec = nearest_neighbors(x_rec_row, refset)[0]
    rec.recon_index = recon_index
    return rec


def mean_nn_l2(queries, refset) -> float:
    return float(np.mean([r.l2 for r in nearest_neighbors(queries, refset)]))


def theta_distance(theta_star, theta) -> float:
    a = np.asarray(getattr(theta_star, "flat", theta_star), dtype=np.float64)
    b = np.asarray(getattr(theta, "flat", theta), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"parameter lengths differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d)


def topk_membership(recon, refset, ref_index: int, k: int) -> bool:
    if k < 1:
        raise ValueError("k must be at least 1")
    return nearest_neighbor(recon, refset).rank_of(ref_index) <= k


def closer_to_init_fraction(x_rec, x_init, train_x) -> float:
    """Share of rows strictly closer to their own init row than to every training row."""
    x_rec = np.asarray(x_rec, dtype=np.float64)
    own = np.linalg.norm(x_rec - np.asarray(x_init), axis=1)
    nn = np.array([r.l2 for r in nearest_neighbors(x_rec, train_x)])
    return float(np.mean(own < nn))


@dataclass
class GridCell:
    lambda1: float
    lambda2: float
    avg_l2_to_gt: float
    avg_l2_to_partition: float
    avg_l2_to_random: float


def grid_aggregate(results: dict, gt, partition, random_ref, expected=None) -> list[GridCell]:
    """``results`` maps (lambda1, lambda2) -> reconstructed matrix.

    Each cell averages, over reconstructed rows, the L2 distance to the
    nearest row of each reference set.
    """
    if expected is not None:
        missing = [c for c in expected if c not in results]
        if missing:
            raise KeyError(f"grid cells without a completed run: {missing}")
    cells = []
    for key in (expected or sorted(results)):
        x = results[key]
        cells.append(GridCell(float(key[0]), float(key[1]), mean_nn_l2(x, gt),
                              mean_nn_l2(x, partition), mean_nn_l2(x, random_ref)))
    return cells


def _fmt(v):
    return repr(float(v))


def write_nn_table(path, x_rec, refset, claimed=None) -> Path:
    """CSV of (recon_index, nn_index, l2, rank); rank is that of ``claimed[i]`` (default: the NN)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recon_index", "nn_index", "l2", "rank"])
        for rec in nearest_neighbors(x_rec, refset):
            ref = rec.nn_index if claimed is None else int(claimed[rec.recon_index])
            w.writerow([rec.recon_index, rec.nn_index, _fmt(rec.l2), rec.rank_of(ref)])
    return path


def write_table1(path, rows) -> Path:
    """rows: iterable of (init_kind, arch, theta_dist)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["init_kind", "arch", "theta_dist"])
        for init_kind, arch, dist in rows:
            w.writerow([init_kind, arch, _fmt(dist)])
    return path


def write_grid(path, cells, method=None) -> Path:
    """Grid CSV; ``method`` is one label for all rows or a sequence aligned with ``cells``."""
    path = Path(path)
    if isinstance(method, str):
        method = [method] * len(cells)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["lambda1", "lambda2", "avg_l2_to_gt", "avg_l2_to_partition", "avg_l2_to_random"]
        w.writerow((["method"] if method else []) + head)
        for i, c in enumerate(cells):
            vals = [_fmt(c.lambda1), _fmt(c.lambda2), _fmt(c.avg_l2_to_gt),
                    _fmt(c.avg_l2_to_partition), _fmt(c.avg_l2_to_random)]
            w.writerow(([method[i]] if method else []) + vals)
    return path
