"""Elementwise and scan kernels with a numba path and a pure-numpy path.

The numba versions are used when numba imports cleanly and the environment
variable ``DATARECON_DISABLE_NUMBA`` is unset or ``0``.  Both paths are always
importable as ``np_*`` / ``nb_*`` so they can be compared and benchmarked.
Results agree to rounding, not bit-for-bit; a run manifest records which
backend produced it.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLED = os.environ.get("DATARECON_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def _np_sigmoid(m):
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def np_logistic_terms(z, y):
    """Loss ln(1+exp(-yz)) and its first two derivatives in z."""
    m = -y * z
    loss = np.maximum(m, 0.0) + np.log1p(np.exp(-np.abs(m)))
    s = _np_sigmoid(m)
    d1 = -y * s
    d2 = y * y * s * (1.0 - s)
    return loss, d1, d2


def np_softplus_terms(t, beta):
    """softplus_beta(t) = ln(1+exp(beta t))/beta with first and second derivative."""
    u = beta * t
    val = (np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))) / beta
    s = _np_sigmoid(u)
    return val, s, beta * s * (1.0 - s)


def np_sq_dists(queries, refs):
    out = np.empty((queries.shape[0], refs.shape[0]))
    for i in range(queries.shape[0]):
        diff = refs - queries[i]
        out[i] = np.einsum("ij,ij->i", diff, diff)
    return out


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_sigmoid_scalar(m):
        if m >= 0.0:
            return 1.0 / (1.0 + math.exp(-m))
        e = math.exp(m)
        return e / (1.0 + e)

    @njit(cache=True)
    def _nb_logistic_terms(z, y):
        n = z.shape[0]
        loss = np.empty(n)
        d1 = np.empty(n)
        d2 = np.empty(n)
        for i in range(n):
            m = -y[i] * z[i]
            loss[i] = max(m, 0.0) + math.log1p(math.exp(-abs(m)))
            s = _nb_sigmoid_scalar(m)
            d1[i] = -y[i] * s
            d2[i] = y[i] * y[i] * s * (1.0 - s)
        return loss, d1, d2

    @njit(cache=True)
    def _nb_softplus_terms(t, beta):
        n = t.shape[0]
        val = np.empty(n)
        d1 = np.empty(n)
        d2 = np.empty(n)
        for i in range(n):
            u = beta * t[i]
            val[i] = (max(u, 0.0) + math.log1p(math.exp(-abs(u)))) / beta
            s = _nb_sigmoid_scalar(u)
            d1[i] = s
            d2[i] = beta * s * (1.0 - s)
        return val, d1, d2

    @njit(cache=True)
    def _nb_sq_dists(queries, refs):
        nq, k = queries.shape
        nr = refs.shape[0]
        out = np.empty((nq, nr))
        for i in range(nq):
            for j in range(nr):
                acc = 0.0
                for c in range(k):
                    d = refs[j, c] - queries[i, c]
                    acc += d * d
                out[i, j] = acc
        return out

    def nb_logistic_terms(z, y):
        shape = z.shape
        loss, d1, d2 = _nb_logistic_terms(
            np.ascontiguousarray(z, dtype=np.float64).ravel(),
            np.ascontiguousarray(np.broadcast_to(y, shape), dtype=np.float64).ravel(),
        )
        return loss.reshape(shape), d1.reshape(shape), d2.reshape(shape)

    def nb_softplus_terms(t, beta):
        shape = t.shape
        val, d1, d2 = _nb_softplus_terms(np.ascontiguousarray(t, dtype=np.float64).ravel(), float(beta))
        return val.reshape(shape), d1.reshape(shape), d2.reshape(shape)

    def nb_sq_dists(queries, refs):
        return _nb_sq_dists(
            np.ascontiguousarray(queries, dtype=np.float64),
            np.ascontiguousarray(refs, dtype=np.float64),
        )

else:  # pragma: no cover
    nb_logistic_terms = np_logistic_terms
    nb_softplus_terms = np_softplus_terms
    nb_sq_dists = np_sq_dists


if USE_NUMBA:
    logistic_terms = nb_logistic_terms
    softplus_terms = nb_softplus_terms
    sq_dists = nb_sq_dists
else:
    logistic_terms = np_logistic_terms
    softplus_terms = np_softplus_terms
    sq_dists = np_sq_dists


def relu_terms(t):
    return np.maximum(t, 0.0), (t > 0).astype(np.float64), np.zeros_like(t)
