"""Model families: parameter layout, forward evaluation and analytic gradients.

Seven families are supported. Parameter layouts (flat vectors, 0-based):

* ``linear3``          (t0, t1, t2) for t0 + t1 x1 + t2 x2
* ``reparam4``         (t0, t1, t2, t3) for t0 + t1 x1 + t2 t3 x2
* ``deep_diagonal``    product form: coordinate-major blocks (a_j^[1..L])_j;
                       ``squares=True`` (L=2): (a_1..a_d, b_1..b_d) for
                       sum_j (a_j^2 - b_j^2) x_j
* ``mf``               row-major A then row-major B (both d x d)
* ``fc``               per neuron (a_i, w_i[0..d-1], [b_i])
* ``cnn``              per kernel (a_i[positions], K_i[s or s*s], [b_i])
* ``cnn_noshare``      per kernel, per position (a_ij, K_ij[...], [b_ij])

Matrix-factorization inputs are 1-based entry indices (i, j); every other
family takes a real vector (a d x d array for 2-D convolutions, read
row-major).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from enum import Enum

import numpy as np

from . import _kernels as K
from .errors import FamilyError, ShapeError


class Kind(str, Enum):
    LINEAR3 = "linear3"
    REPARAM4 = "reparam4"
    DEEP_DIAGONAL = "deep_diagonal"
    MF = "mf"
    FC = "fc"
    CNN = "cnn"
    CNN_NOSHARE = "cnn_noshare"


_WIDTH_KINDS = (Kind.FC, Kind.CNN, Kind.CNN_NOSHARE)
_CONV_KINDS = (Kind.CNN, Kind.CNN_NOSHARE)


@dataclass(frozen=True)
class ModelFamily:
    kind: Kind
    d: int = 2
    L: int = 2
    m: int = 0
    m_c: int = 0
    s: int = 1
    conv_dims: int = 1
    bias: bool = False
    squares: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        for name in ("d", "L", "m", "m_c", "s", "conv_dims"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise FamilyError(f"{name} must be an integer, got {value!r}", name)
            object.__setattr__(self, name, int(value))
        kind = self.kind
        if kind in (Kind.LINEAR3, Kind.REPARAM4) and self.d != 2:
            raise FamilyError(f"{kind.value} has fixed input dimension 2", "d")
        if self.d < 1:
            raise FamilyError("d must be >= 1", "d")
        if kind == Kind.DEEP_DIAGONAL:
            if self.L < 2:
                raise FamilyError("deep_diagonal requires L >= 2", "L")
            if self.squares and self.L != 2:
                raise FamilyError("difference-of-squares form requires L = 2", "squares")
        elif self.squares:
            raise FamilyError("squares applies to deep_diagonal only", "squares")
        if kind == Kind.FC and self.m < 0:
            raise FamilyError("m must be >= 0", "m")
        if kind in _CONV_KINDS:
            if self.m_c < 0:
                raise FamilyError("m_c must be >= 0", "m_c")
            if self.conv_dims not in (1, 2):
                raise FamilyError("conv_dims must be 1 or 2", "conv_dims")
            if not 1 <= self.s <= self.d:
                raise FamilyError(f"kernel size s={self.s} must satisfy 1 <= s <= d={self.d}", "s")
        if self.bias and kind not in _WIDTH_KINDS:
            raise FamilyError("bias applies to fc/cnn families only", "bias")

    # --- derived sizes -------------------------------------------------

    @property
    def positions(self) -> int:
        """Number of convolution output positions per kernel."""
        return (self.d + 1 - self.s) ** self.conv_dims

    @property
    def kernel_size(self) -> int:
        return self.s**self.conv_dims

    @property
    def input_dim(self) -> int:
        if self.kind == Kind.MF:
            return 2
        if self.kind in _CONV_KINDS:
            return self.d**self.conv_dims
        return self.d

    @property
    def n_params(self) -> int:
        return param_count(self)

    @property
    def width(self) -> int:
        if self.kind == Kind.FC:
            return self.m
        if self.kind in _CONV_KINDS:
            return self.m_c
        raise FamilyError(f"{self.kind.value} has no width")

    def with_width(self, width: int) -> "ModelFamily":
        if self.kind == Kind.FC:
            return replace(self, m=width)
        if self.kind in _CONV_KINDS:
            return replace(self, m_c=width)
        raise FamilyError(f"{self.kind.value} has no width")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelFamily":
        fields = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(fields)
        if unknown:
            raise FamilyError(f"unknown family fields: {sorted(unknown)}")
        return cls(**fields)

    # --- kernel plumbing -----------------------------------------------

    def _code(self) -> int:
        kind = self.kind
        if kind == Kind.LINEAR3:
            return K.LINEAR3
        if kind == Kind.REPARAM4:
            return K.REPARAM4
        if kind == Kind.DEEP_DIAGONAL:
            return K.DEEP_SQUARES if self.squares else K.DEEP_PRODUCT
        if kind == Kind.MF:
            return K.MATRIX
        if kind == Kind.FC:
            return K.FC
        if kind == Kind.CNN:
            return K.CNN
        return K.CNN_NOSHARE

    def _dims(self) -> np.ndarray:
        return np.array(
            [self.d, self.L, self.m, self.m_c, self.s, self.conv_dims, int(self.bias), self.n_params],
            dtype=np.int64,
        )


# --- constructors ------------------------------------------------------


def linear3() -> ModelFamily:
    return ModelFamily(Kind.LINEAR3)


def reparam_linear4() -> ModelFamily:
    return ModelFamily(Kind.REPARAM4)


def deep_diagonal(d: int, L: int = 2, squares: bool = False) -> ModelFamily:
    return ModelFamily(Kind.DEEP_DIAGONAL, d=d, L=L, squares=squares)


def matrix_factorization(d: int) -> ModelFamily:
    return ModelFamily(Kind.MF, d=d)


def two_layer_fc(d: int, m: int, bias: bool = False) -> ModelFamily:
    return ModelFamily(Kind.FC, d=d, m=m, bias=bias)


def two_layer_cnn(d: int, m_c: int, s: int, conv_dims: int = 1, bias: bool = False,
                  share: bool = True) -> ModelFamily:
    kind = Kind.CNN if share else Kind.CNN_NOSHARE
    return ModelFamily(kind, d=d, m_c=m_c, s=s, conv_dims=conv_dims, bias=bias)


def param_count(family: ModelFamily) -> int:
    kind = family.kind
    if kind == Kind.LINEAR3:
        return 3
    if kind == Kind.REPARAM4:
        return 4
    if kind == Kind.DEEP_DIAGONAL:
        return family.d * family.L
    if kind == Kind.MF:
        return 2 * family.d**2
    bias = int(family.bias)
    if kind == Kind.FC:
        return family.m * (family.d + 1 + bias)
    if kind == Kind.CNN:
        return family.m_c * (family.positions + family.kernel_size + bias)
    return family.m_c * family.positions * (1 + family.kernel_size + bias)


# --- layout --------------------------------------------------------------


def _block_shapes(family: ModelFamily) -> list[tuple[str, tuple[int, ...]]]:
    """Named parameter groups in layout order, shapes given per group."""
    kind = family.kind
    d = family.d
    if kind == Kind.LINEAR3:
        return [("theta", (3,))]
    if kind == Kind.REPARAM4:
        return [("theta", (4,))]
    if kind == Kind.DEEP_DIAGONAL:
        if family.squares:
            return [("a", (d,)), ("b", (d,))]
        return [("a", (d, family.L))]
    if kind == Kind.MF:
        return [("A", (d, d)), ("B", (d, d))]
    return []


def unpack(family: ModelFamily, theta) -> dict[str, np.ndarray]:
    """Split a flat parameter vector into named arrays.

    Width families return arrays with a leading neuron/kernel axis:
    fc -> a (m,), w (m, d), b (m,); cnn -> a (m_c, P), K (m_c, S), b (m_c,);
    cnn_noshare -> a (m_c, P), K (m_c, P, S), b (m_c, P). ``b`` only when
    the family has bias.
    """
    theta = check_theta(family, theta)
    shapes = _block_shapes(family)
    if shapes:
        out, pos = {}, 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            out[name] = theta[pos:pos + size].reshape(shape).copy()
            pos += size
        return out
    bias = int(family.bias)
    if family.kind == Kind.FC:
        blocks = theta.reshape(family.m, family.d + 1 + bias)
        out = {"a": blocks[:, 0].copy(), "w": blocks[:, 1:1 + family.d].copy()}
        if bias:
            out["b"] = blocks[:, -1].copy()
        return out
    P, S = family.positions, family.kernel_size
    if family.kind == Kind.CNN:
        blocks = theta.reshape(family.m_c, P + S + bias)
        out = {"a": blocks[:, :P].copy(), "K": blocks[:, P:P + S].copy()}
        if bias:
            out["b"] = blocks[:, -1].copy()
        return out
    blocks = theta.reshape(family.m_c, P, 1 + S + bias)
    out = {"a": blocks[:, :, 0].copy(), "K": blocks[:, :, 1:1 + S].copy()}
    if bias:
        out["b"] = blocks[:, :, -1].copy()
    return out


def pack(family: ModelFamily, parts: dict[str, np.ndarray]) -> np.ndarray:
    """Inverse of :func:`unpack`; missing bias entries default to zero."""
    shapes = _block_shapes(family)
    if shapes:
        return np.concatenate([np.asarray(parts[name], float).reshape(-1) for name, _ in shapes])
    a = np.asarray(parts["a"], float)
    if family.kind == Kind.FC:
        cols = [a.reshape(-1, 1), np.asarray(parts["w"], float).reshape(family.m, family.d)]
        if family.bias:
            cols.append(np.asarray(parts.get("b", np.zeros(family.m)), float).reshape(-1, 1))
        return np.hstack(cols).reshape(-1) if family.m else np.zeros(0)
    P, S = family.positions, family.kernel_size
    if family.kind == Kind.CNN:
        cols = [a.reshape(family.m_c, P), np.asarray(parts["K"], float).reshape(family.m_c, S)]
        if family.bias:
            cols.append(np.asarray(parts.get("b", np.zeros(family.m_c)), float).reshape(-1, 1))
        return np.hstack(cols).reshape(-1) if family.m_c else np.zeros(0)
    cols = [a.reshape(family.m_c, P, 1), np.asarray(parts["K"], float).reshape(family.m_c, P, S)]
    if family.bias:
        b = parts.get("b", np.zeros((family.m_c, P)))
        cols.append(np.asarray(b, float).reshape(family.m_c, P, 1))
    return np.concatenate(cols, axis=2).reshape(-1) if family.m_c else np.zeros(0)


# --- evaluation ------------------------------------------------------------


def check_theta(family: ModelFamily, theta) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != family.n_params:
        raise ShapeError(f"{family.kind.value} expects {family.n_params} parameters, got shape {theta.shape}")
    return theta


def as_inputs(family: ModelFamily, X) -> np.ndarray:
    """Coerce a batch of input points to the (n, input_dim) float array the kernels read."""
    X = np.asarray(X, dtype=float)
    width = family.input_dim
    if family.kind in _CONV_KINDS and family.conv_dims == 2 and X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    if X.ndim == 1 and X.shape[0] == 0:
        X = X.reshape(0, width)
    if X.ndim != 2 or X.shape[1] != width:
        raise ShapeError(f"{family.kind.value} expects inputs of width {width}, got shape {X.shape}")
    if family.kind == Kind.MF and X.shape[0]:
        if np.any(X != np.round(X)) or X.min() < 1 or X.max() > family.d:
            raise ShapeError(f"matrix entries must be integer pairs in 1..{family.d}")
    return np.ascontiguousarray(X)


def _as_point(family: ModelFamily, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return as_inputs(family, x.reshape(1, -1))


def evaluate(family: ModelFamily, theta, x) -> float:
    """f(x; theta) at a single input point."""
    return float(evaluate_batch(family, theta, _as_point(family, x))[0])


def param_gradient(family: ModelFamily, theta, x) -> np.ndarray:
    """Analytic gradient of f(x; theta) with respect to theta, in layout order."""
    _, J = forward_jacobian(family, theta, _as_point(family, x))
    return J[0]


def evaluate_batch(family: ModelFamily, theta, X) -> np.ndarray:
    theta = check_theta(family, theta)
    X = as_inputs(family, X)
    return K.forward(family._code(), family._dims(), theta, X)


def forward_jacobian(family: ModelFamily, theta, X) -> tuple[np.ndarray, np.ndarray]:
    """Outputs (n,) and parameter Jacobian (n, M) at a batch of inputs."""
    theta = check_theta(family, theta)
    X = as_inputs(family, X)
    return K.forward_jacobian(family._code(), family._dims(), theta, X)


def mse_gradient(family: ModelFamily, theta, X, y) -> tuple[float, np.ndarray]:
    """Mean squared error over (X, y) and its gradient in theta."""
    theta = check_theta(family, theta)
    X = as_inputs(family, X)
    y = np.ascontiguousarray(y, dtype=float)
    grad = np.empty(family.n_params)
    loss = K.mse_and_grad(family._code(), family._dims(), theta, X, y, grad)
    return float(loss), grad


def all_entries(d: int) -> np.ndarray:
    """Every 1-based (i, j) index pair of a d x d matrix, row-major."""
    i, j = np.meshgrid(np.arange(1, d + 1), np.arange(1, d + 1), indexing="ij")
    return np.column_stack([i.ravel(), j.ravel()]).astype(float)


def matrix_of(family: ModelFamily, theta) -> np.ndarray:
    """The product A B represented by a matrix-factorization parameter vector."""
    if family.kind != Kind.MF:
        raise FamilyError("matrix_of applies to mf only", "kind")
    parts = unpack(family, theta)
    return parts["A"] @ parts["B"]


def conv_as_fc(family: ModelFamily, theta) -> tuple[ModelFamily, np.ndarray]:
    """Rewrite a convolutional network as the equivalent fully-connected one.

    Each (kernel, position) pair becomes one hidden neuron whose input
    weights are the kernel scattered onto its receptive field.
    """
    if family.kind not in _CONV_KINDS:
        raise FamilyError("conv_as_fc needs a cnn family", "kind")
    parts = unpack(family, theta)
    P, S, D = family.positions, family.kernel_size, family.input_dim
    n = family.m_c * P
    a = parts["a"].reshape(n)
    w = np.zeros((n, D))
    b = np.zeros(n)
    for i in range(family.m_c):
        for j in range(P):
            kern = parts["K"][i] if family.kind == Kind.CNN else parts["K"][i, j]
            for alpha in range(S):
                w[i * P + j, K._conv_index(j, alpha, family.d, family.s, family.conv_dims)] += kern[alpha]
            if family.bias:
                b[i * P + j] = parts["b"][i] if family.kind == Kind.CNN else parts["b"][i, j]
    fc = two_layer_fc(D, n, bias=family.bias)
    return fc, pack(fc, {"a": a, "w": w, "b": b})
