"""Stationarity, underdetermination and degenerate-solution constructions.

For the affine model everything is written with the bias-augmented matrix
X_bar = [X, 1] and theta = (w, b), so logits are X_bar @ theta.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import NumericalError, ShapeError
from .gradpen import penalty
from .model import Dataset, LossSpec, ModelSpec, ParamVector, forward, logit_grad_x


@dataclass
class UnderdeterminationReport:
    n_equations: int
    n_unknowns: int
    kernel_dim_lower_bound: int
    residual: float | None = None
    rank: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _affine_theta(theta) -> np.ndarray:
    if isinstance(theta, ParamVector):
        if theta.spec.arch != "affine":
            raise ValueError(f"linear analysis needs an affine model, got {theta.spec.arch!r}")
        return theta.flat
    return np.asarray(theta, dtype=np.float64)


def loss_grad_logits(loss: LossSpec, z, y) -> np.ndarray:
    """Per-sample derivative of the loss in the logit (written out, not shared with ``model``)."""
    if loss.kind == "mse":
        return z - y
    # d/dz ln(1 + exp(-y z)) = -y / (1 + exp(y z))
    return -y * np.exp(-np.logaddexp(0.0, y * z))


def check_stationarity(data: Dataset, theta_star, loss: LossSpec) -> float:
    """||X_bar^T grad L(X_bar theta*, Y) / N + rho theta*||.

    With rho = 0 this is exactly the optimality residual of the affine
    training problem; the weight-decay term is included when rho > 0 because
    that is the energy theta* was trained on.
    """
    th = _affine_theta(theta_star)
    Xb = data.augmented()
    if th.shape != (Xb.shape[1],):
        raise ShapeError(f"theta has {th.size} entries, augmented data has {Xb.shape[1]} columns")
    r = Xb.T @ loss_grad_logits(loss, Xb @ th, data.labels) / data.n + loss.rho * th
    return float(np.linalg.norm(r))


def underdetermination_report(n: int, k: int, l: int = 1, data: Dataset | None = None,
                              theta_star=None, loss: LossSpec | None = None) -> UnderdeterminationReport:
    """Equation / unknown counts for the exact-fit condition X_bar theta* = Y.

    Without data the kernel dimension of X_bar^T is bounded below by
    max(0, N - (K+1)); with data it is N - rank(X_bar).
    """
    if min(n, k, l) < 1:
        raise ValueError("dimensions must be positive")
    rep = UnderdeterminationReport(l * n, n * k, max(0, n - (k + 1)))
    if data is not None:
        rank = int(np.linalg.matrix_rank(data.augmented()))
        rep.rank = rank
        rep.kernel_dim_lower_bound = data.n - rank
        if theta_star is not None:
            rep.residual = check_stationarity(data, theta_star, loss or LossSpec())
    return rep


def construct_interpolating_inputs(theta_star, y, offset=None) -> np.ndarray:
    """Rows x_i with (x_i, 1) . (w, b) = y_i exactly.

    The minimum-norm choice is x_i = (y_i - b) w / ||w||^2.  ``offset`` (N x K)
    adds its projection onto ker(w^T), which leaves the logits unchanged and
    shows the solution set is an affine subspace per row.
    """
    th = _affine_theta(theta_star)
    w, b = th[:-1], th[-1]
    y = np.asarray(y, dtype=np.float64)
    ww = float(w @ w)
    if ww == 0.0:
        if np.all(y == b):
            x = np.zeros((y.size, w.size))
        else:
            raise ValueError("w = 0: the logits are the constant b, no inputs can reach other labels")
    else:
        x = np.outer(y - b, w) / ww
    if offset is not None:
        offset = np.asarray(offset, dtype=np.float64)
        if offset.shape != x.shape:
            raise ShapeError(f"offset has shape {offset.shape}, expected {x.shape}")
        x = x + (offset - np.outer(offset @ w, w) / ww if ww else offset)
    return x


def push_to_margin(spec: ModelSpec, theta_star, x_seed, y_target: float, margin: float = 20.0,
                   max_steps: int = 200) -> np.ndarray:
    """Move ``x_seed`` until y * logit >= margin.

    Affine: one exact step along y w.  Otherwise: Newton steps on the logit
    along its input gradient.
    """
    x = np.array(x_seed, dtype=np.float64).reshape(1, -1)
    target = margin * (1.0 + 1e-9) + 1e-9
    for _ in range(max_steps):
        m = float(y_target * forward(spec, theta_star, x)[0])
        if m >= margin:
            return x[0]
        g = y_target * logit_grad_x(spec, theta_star, x)[0]
        gg = float(g @ g)
        if gg == 0.0:
            break
        x = x + ((target - m) / gg) * g
    m = float(y_target * forward(spec, theta_star, x)[0])
    if m < margin:
        raise NumericalError(f"could not reach margin {margin} (got {m:.3f})")
    return x[0]


def construct_collapse(x_seed, spec: ModelSpec, theta_star, y_target: float, n: int,
                       loss: LossSpec = LossSpec("logistic", 0.0), margin_min: float = 20.0,
                       penalty_tol: float = 1e-12) -> Dataset:
    """N identical copies of a confidently classified input.

    Raises ``ValueError`` if the seed's margin y*logit is below
    ``margin_min`` and ``NumericalError`` if the resulting gradient penalty
    exceeds ``penalty_tol``; it never hands back an unverified dataset.
    """
    if n < 1:
        raise ValueError("n must be positive")
    x_seed = np.asarray(x_seed, dtype=np.float64).reshape(-1)
    margin = float(y_target * forward(spec, theta_star, x_seed[None, :])[0])
    if margin < margin_min:
        raise ValueError(f"seed margin {margin:.4g} is below the required {margin_min:g}")
    data = Dataset(np.tile(x_seed, (n, 1)), np.full(n, float(y_target)), {"margin": margin})
    pen = penalty(spec, theta_star, data, loss)
    if pen > penalty_tol:
        raise NumericalError(f"collapse penalty {pen:.3e} exceeds {penalty_tol:.1e} "
                             f"(margin {margin:.3g}, rho {loss.rho:g})")
    data.meta["penalty"] = pen
    return data
