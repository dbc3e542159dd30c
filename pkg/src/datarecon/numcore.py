"""Dense linear-algebra helpers, seeded random streams and finite-difference oracles."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError, ShapeError

# Philox4x64 (counter-based, Salmon et al. 2011) with the 128-bit key
# (stream_id << 64) | master_seed.  Counter starts at zero.
_MASK64 = (1 << 64) - 1


def as_matrix(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(v, name="vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def matvec(A, v) -> np.ndarray:
    A = as_matrix(A, "A")
    v = as_vector(v, "v")
    if A.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: A is {A.shape}, v has length {v.shape[0]}")
    return A @ v


def matmul(A, B) -> np.ndarray:
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul: {A.shape} @ {B.shape}")
    return A @ B


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(master_seed, stream_id)``."""

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = ((self.stream_id & _MASK64) << 64) | (self.master_seed & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stage: str, index: int = 0) -> "RngStream":
        return RngStream(self.master_seed, stream_id(stage, index, parent=self.stream_id))


def stream_id(stage: str, index: int = 0, parent: int = 0) -> int:
    """Platform-stable 64-bit id for a named pipeline stage (no salted ``hash``)."""
    h = hashlib.blake2b(f"{parent}:{stage}:{index}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def default_step(x) -> float:
    """h = 1e-5 * (1 + ||x||_inf)."""
    scale = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return 1e-5 * (1.0 + scale)


def _checked(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what} during finite differencing")
    return value


def fd_grad(f: Callable[[np.ndarray], float], x, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function; ``x`` may be any shape."""
    x = np.array(x, dtype=np.float64)
    if h is None:
        h = default_step(x)
    if h <= 0:
        raise ValueError("h must be positive")
    g = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = _checked(f(x), "f(x+h e_i)")
        flat[i] = old - h
        fm = _checked(f(x), "f(x-h e_i)")
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def fd_hvp(g: Callable[[np.ndarray], np.ndarray], theta, v, h: float | None = None) -> np.ndarray:
    """Central difference of a vector field ``g`` along direction ``v``."""
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if theta.shape != v.shape:
        raise ShapeError(f"fd_hvp: theta {theta.shape} vs v {v.shape}")
    if h is None:
        h = default_step(theta)
    if h <= 0:
        raise ValueError("h must be positive")
    gp = _checked(g(theta + h * v), "g(theta+hv)")
    gm = _checked(g(theta - h * v), "g(theta-hv)")
    return (gp - gm) / (2.0 * h)


def rel_error(a, b, floor: float = 1e-12) -> float:
    """||a-b|| / max(||b||, floor) in the Frobenius/Euclidean norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))
