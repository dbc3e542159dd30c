"""Fully connected binary classifiers with an analytic derivative stack.

Every derivative needed by the attacks is computed in closed form:

* ``grad_theta`` / ``grad_x``: ordinary backpropagation,
* ``hvp_theta`` and ``mixed_vjp``: one forward-over-reverse pass (Pearlmutter's
  R-operator) in the parameter direction ``v``.  The same pass yields the
  Hessian-vector product in theta and the x-gradient of <grad_theta E, v>.

Parameters are stored flat, layer by layer, as ``W_l`` (row-major, out x in)
followed by ``b_l``.  For the affine model that is ``(w_1, ..., w_K, b)``,
i.e. the bias-augmented layout ``X_bar @ theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NonSmoothError, NumericalError, ShapeError

ARCHS = ("affine", "onehidden", "mlp")
ACTIVATIONS = ("relu", "softplus")
LOSSES = ("logistic", "mse")


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    output_dim: int = 1
    activation: str | None = None
    beta: float = 20.0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("layer widths must be positive")
        if self.arch == "affine":
            if self.hidden_dims:
                raise ValueError("affine model has no hidden layers")
            if self.activation is not None:
                raise ValueError("affine model has no activation")
        else:
            if self.arch == "onehidden" and len(self.hidden_dims) != 1:
                raise ValueError("onehidden needs exactly one hidden width")
            if self.arch == "mlp" and not self.hidden_dims:
                raise ValueError("mlp needs at least one hidden width")
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"activation must be one of {ACTIVATIONS}")
            if self.activation == "softplus" and not self.beta > 0:
                raise ValueError("softplus beta must be positive")

    @classmethod
    def affine(cls, input_dim: int) -> "ModelSpec":
        return cls("affine", input_dim)

    @classmethod
    def one_hidden(cls, input_dim: int, hidden_dim: int | None = None,
                   activation: str = "softplus", beta: float = 20.0) -> "ModelSpec":
        return cls("onehidden", input_dim, (hidden_dim or 2 * input_dim,), 1, activation, beta)

    @classmethod
    def mlp(cls, input_dim: int, hidden_dims, activation: str = "softplus", beta: float = 20.0) -> "ModelSpec":
        return cls("mlp", input_dim, tuple(hidden_dims), 1, activation, beta)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def shapes(self) -> list[tuple[tuple[int, int], int]]:
        w = self.widths
        return [((w[i + 1], w[i]), w[i + 1]) for i in range(len(w) - 1)]

    @property
    def param_count(self) -> int:
        return sum(o * i + o for (o, i), _ in self.shapes)

    @property
    def smooth(self) -> bool:
        return self.activation != "relu"

    def to_dict(self) -> dict:
        return {"arch": self.arch, "input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims),
                "output_dim": self.output_dim, "activation": self.activation, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["arch"], int(d["input_dim"]), tuple(d.get("hidden_dims", ())), int(d.get("output_dim", 1)),
                   d.get("activation"), float(d.get("beta", 20.0)))


class ParamVector:
    """Flat parameter storage with per-layer ``(W, b)`` views that alias it."""

    def __init__(self, spec: ModelSpec, flat=None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.param_count)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (spec.param_count,):
            raise ShapeError(f"expected {spec.param_count} parameters, got shape {flat.shape}")
        self.flat = flat
        self.layers = _views(spec, flat)

    def copy(self) -> "ParamVector":
        return ParamVector(self.spec, self.flat.copy())

    def __len__(self):
        return self.flat.size

    def __repr__(self):
        return f"ParamVector({self.spec.arch}, n={self.flat.size})"


def _views(spec: ModelSpec, flat: np.ndarray):
    out = []
    pos = 0
    for (o, i), nb in spec.shapes:
        W = flat[pos:pos + o * i].reshape(o, i)
        pos += o * i
        b = flat[pos:pos + nb]
        pos += nb
        out.append((W, b))
    return out


def _flat(spec: ModelSpec, theta) -> np.ndarray:
    if isinstance(theta, ParamVector):
        if theta.spec != spec:
            raise ShapeError("parameter vector belongs to a different model spec")
        return theta.flat
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.param_count,):
        raise ShapeError(f"expected {spec.param_count} parameters, got shape {theta.shape}")
    return theta


@dataclass(frozen=True)
class LossSpec:
    kind: str = "logistic"
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}")
        if not self.rho >= 0:
            raise ValueError("weight decay must be nonnegative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rho": self.rho}


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1 or self.labels.size != self.inputs.shape[0]:
            raise ShapeError(f"inputs {self.inputs.shape} / labels {self.labels.shape} inconsistent")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def k(self) -> int:
        return self.inputs.shape[1]

    def augmented(self) -> np.ndarray:
        return np.hstack([self.inputs, np.ones((self.n, 1))])

    def with_inputs(self, x) -> "Dataset":
        return Dataset(x, self.labels, dict(self.meta))

    def validate(self):
        """Check the invariants of loaded data: pixels in [0,1], labels in {-1,+1}."""
        if np.any(self.inputs < 0) or np.any(self.inputs > 1):
            raise ValueError("pixel values outside [0, 1]")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _activation(spec: ModelSpec, z):
    if spec.activation == "relu":
        return _kernels.relu_terms(z)
    return _kernels.softplus_terms(z, spec.beta)


def _loss_terms(loss: LossSpec, z, y):
    if loss.kind == "logistic":
        return _kernels.logistic_terms(z, y)
    r = z - y
    return 0.5 * r * r, r, np.ones_like(r)


def _check(spec: ModelSpec, data: Dataset):
    if data.inputs.shape[1] != spec.input_dim:
        raise ShapeError(f"inputs have {data.inputs.shape[1]} columns, model expects {spec.input_dim}")
    if data.n == 0:
        raise ShapeError("empty dataset")
    if spec.output_dim != 1:
        raise ShapeError("losses are defined for a single output")


def _require_smooth(spec: ModelSpec, bilevel: bool):
    if bilevel and not spec.smooth:
        raise NonSmoothError("ReLU has no second derivative; use softplus in bilevel mode")


class _Cache:
    __slots__ = ("acts", "pre", "d1", "d2", "logits")


def _forward(spec: ModelSpec, flat: np.ndarray, X: np.ndarray) -> _Cache:
    layers = _views(spec, flat)
    c = _Cache()
    c.acts, c.pre, c.d1, c.d2 = [X], [], [], []
    a = X
    last = len(layers) - 1
    for l, (W, b) in enumerate(layers):
        z = a @ W.T + b
        c.pre.append(z)
        if l < last:
            a, s1, s2 = _activation(spec, z)
            c.acts.append(a)
            c.d1.append(s1)
            c.d2.append(s2)
    c.logits = c.pre[-1][:, 0]
    return c


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what}")
    return value


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def forward(spec: ModelSpec, theta, X) -> np.ndarray:
    """Logits for each row of ``X``; shape (N,) for a single output, else (N, L)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(f"X has shape {X.shape}, model expects (N, {spec.input_dim})")
    c = _forward(spec, _flat(spec, theta), X)
    out = c.pre[-1]
    return out[:, 0] if spec.output_dim == 1 else out


def energy(spec: ModelSpec, theta, data: Dataset, loss: LossSpec) -> float:
    """Mean per-sample loss plus (rho/2)||theta||^2."""
    _check(spec, data)
    flat = _flat(spec, theta)
    c = _forward(spec, flat, data.inputs)
    _finite(c.logits, "logits")
    vals, _, _ = _loss_terms(loss, c.logits, data.labels)
    e = float(np.mean(vals)) + 0.5 * loss.rho * float(flat @ flat)
    return _finite(e, "energy")


def _backward(spec, flat, c, G, want_x):
    layers = _views(spec, flat)
    grads = [None] * len(layers)
    dX = None
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        grads[l] = (G.T @ c.acts[l], G.sum(axis=0))
        if l > 0:
            G = (G @ W) * c.d1[l - 1]
        elif want_x:
            dX = G @ W
    return grads, dX


def _pack(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def grad_theta(spec: ModelSpec, theta, data: Dataset, loss: LossSpec) -> np.ndarray:
    """Gradient of ``energy`` with respect to the flat parameters."""
    _check(spec, data)
    flat = _flat(spec, theta)
    c = _forward(spec, flat, data.inputs)
    _, d1, _ = _loss_terms(loss, _finite(c.logits, "logits"), data.labels)
    grads, _ = _backward(spec, flat, c, (d1 / data.n)[:, None], want_x=False)
    return _pack(grads) + loss.rho * flat


def grad_x(spec: ModelSpec, theta, data: Dataset, loss: LossSpec, bilevel: bool = False) -> np.ndarray:
    """Gradient of ``energy`` with respect to the inputs, shape (N, K)."""
    _require_smooth(spec, bilevel)
    _check(spec, data)
    flat = _flat(spec, theta)
    c = _forward(spec, flat, data.inputs)
    _, d1, _ = _loss_terms(loss, _finite(c.logits, "logits"), data.labels)
    _, dX = _backward(spec, flat, c, (d1 / data.n)[:, None], want_x=True)
    return dX


def _r_pass(spec: ModelSpec, flat, data: Dataset, loss: LossSpec, v):
    """R-operator in direction v: returns (H_data v, d/dx <grad_theta E, v>)."""
    layers = _views(spec, flat)
    vlayers = _views(spec, v)
    X = data.inputs
    c = _forward(spec, flat, X)
    n_layers = len(layers)

    Ra = [np.zeros_like(X)]
    Rz = []
    for l, ((W, _), (V, cb)) in enumerate(zip(layers, vlayers)):
        rz = Ra[l] @ W.T + c.acts[l] @ V.T + cb
        Rz.append(rz)
        if l < n_layers - 1:
            Ra.append(c.d1[l] * rz)

    _, d1, d2 = _loss_terms(loss, _finite(c.logits, "logits"), data.labels)
    G = (d1 / data.n)[:, None]
    RG = (d2 / data.n)[:, None] * Rz[-1]
    out = [None] * n_layers
    RdX = None
    for l in range(n_layers - 1, -1, -1):
        W, _ = layers[l]
        V, _ = vlayers[l]
        out[l] = (RG.T @ c.acts[l] + G.T @ Ra[l], RG.sum(axis=0))
        if l > 0:
            dA = G @ W
            RdA = RG @ W + G @ V
            RG = RdA * c.d1[l - 1] + dA * c.d2[l - 1] * Rz[l - 1]
            G = dA * c.d1[l - 1]
        else:
            RdX = RG @ W + G @ V
    return _pack(out), RdX


def _direction(spec, v):
    v = np.asarray(v.flat if isinstance(v, ParamVector) else v, dtype=np.float64)
    if v.shape != (spec.param_count,):
        raise ShapeError(f"direction has shape {v.shape}, expected ({spec.param_count},)")
    return v


def hvp_theta(spec: ModelSpec, theta, data: Dataset, loss: LossSpec, v, bilevel: bool = False) -> np.ndarray:
    """Exact Hessian-vector product of ``energy`` in theta (both Gauss-Newton and curvature terms)."""
    _require_smooth(spec, bilevel)
    _check(spec, data)
    flat = _flat(spec, theta)
    v = _direction(spec, v)
    hv, _ = _r_pass(spec, flat, data, loss, v)
    return hv + loss.rho * v


def mixed_vjp(spec: ModelSpec, theta, data: Dataset, loss: LossSpec, p, bilevel: bool = False) -> np.ndarray:
    """Gradient in x of <grad_theta E(x), p> with p held fixed, shape (N, K)."""
    _require_smooth(spec, bilevel)
    _check(spec, data)
    flat = _flat(spec, theta)
    p = _direction(spec, p)
    _, rdx = _r_pass(spec, flat, data, loss, p)
    return rdx


def init_params(spec: ModelSpec, rng: np.random.Generator, kind: str = "uniform", scale: float = 1.0) -> ParamVector:
    """Draw theta^0: ``uniform`` is U(0,1) per weight, ``gaussian`` is N(0, scale^2)."""
    if kind == "uniform":
        flat = rng.uniform(0.0, 1.0, spec.param_count)
    elif kind == "gaussian":
        flat = rng.normal(0.0, scale, spec.param_count)
    else:
        raise ValueError(f"unknown theta init {kind!r}")
    return ParamVector(spec, flat)


def logit_grad_x(spec: ModelSpec, theta, X) -> np.ndarray:
    """d(logit_i)/d(x_i) for every row, shape (N, K)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(f"X has shape {X.shape}, model expects (N, {spec.input_dim})")
    flat = _flat(spec, theta)
    c = _forward(spec, flat, X)
    _, dX = _backward(spec, flat, c, np.ones((X.shape[0], 1)), want_x=True)
    return dX
