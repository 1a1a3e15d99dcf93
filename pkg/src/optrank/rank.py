"""Model rank at a parameter point and optimistic sample sizes.

The model rank at theta is the dimension of the span of the parameter
gradient functions x -> d f(x; theta) / d theta_i. It is estimated as the
numerical rank of a probes-by-parameters gradient matrix. Closed forms give
the minimum of that rank over all parameter points expressing a target.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import FamilyError, ShapeError, TargetError
from .model_zoo import (
    Kind,
    ModelFamily,
    all_entries,
    check_theta,
    conv_as_fc,
    forward_jacobian,
    pack,
    unpack,
)
from .targets import (
    INTRINSIC_KERNELS,
    INTRINSIC_WIDTH,
    MATRIX_RANK,
    SPARSITY,
    TargetSpec,
)

DEFAULT_REL_TOL = 1e-8
GAP_WARNING_RATIO = 1e3


class RankGapWarning(UserWarning):
    """The singular spectrum has no clear gap at the chosen tolerance."""


@dataclass(frozen=True)
class FeatureMatrix:
    matrix: np.ndarray
    probes: np.ndarray
    seed: int | None

    @property
    def shape(self):
        return self.matrix.shape


@dataclass(frozen=True)
class RankReport:
    rank: int
    singular_values: tuple[float, ...]
    tolerance_used: float
    gap_ratio: float

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "singular_values": [float(s) for s in self.singular_values],
            "tolerance_used": self.tolerance_used,
            "gap_ratio": self.gap_ratio if math.isfinite(self.gap_ratio) else "inf",
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RankReport":
        gap = data["gap_ratio"]
        return cls(int(data["rank"]), tuple(float(s) for s in data["singular_values"]),
                   float(data["tolerance_used"]), math.inf if gap == "inf" else float(gap))


@dataclass(frozen=True)
class MaxRank:
    value: int
    family: ModelFamily


def default_probe_count(family: ModelFamily) -> int:
    return max(4 * family.n_params, 64)


def feature_matrix(family: ModelFamily, theta, probe_count: int | None = None, seed: int = 0) -> FeatureMatrix:
    """Gradients of f(.; theta) at probe inputs, one row per probe.

    Function families use i.i.d. standard-normal probes. Matrix factorization
    uses all d^2 entries, which gives the exact tangent-space matrix.
    """
    theta = check_theta(family, theta)
    M = family.n_params
    if M == 0:
        raise FamilyError("family has no parameters; rank is undefined", "n_params")
    if family.kind == Kind.MF:
        probes = all_entries(family.d)
        seed = None
    else:
        n = default_probe_count(family) if probe_count is None else int(probe_count)
        if n < M:
            raise ShapeError(f"probe_count {n} is below the parameter count {M}")
        rng = np.random.default_rng(seed)
        probes = rng.standard_normal((n, family.input_dim))
    _, J = forward_jacobian(family, theta, probes)
    return FeatureMatrix(J, probes, seed)


def numerical_rank(fm, rel_tol: float = DEFAULT_REL_TOL) -> RankReport:
    """Count singular values above ``rel_tol`` times the largest one."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    A = fm.matrix if isinstance(fm, FeatureMatrix) else np.asarray(fm, dtype=float)
    sv = np.linalg.svd(A, compute_uv=False) if A.size else np.zeros(0)
    if sv.size == 0 or sv[0] == 0:
        return RankReport(0, tuple(float(s) for s in sv), 0.0, math.inf)
    tol = rel_tol * sv[0]
    rank = int(np.count_nonzero(sv > tol))
    if rank == sv.size or sv[rank] == 0:
        gap = math.inf
    else:
        gap = float(sv[rank - 1] / sv[rank])
    if gap < GAP_WARNING_RATIO:
        warnings.warn(f"spectral gap {gap:.3g} at rank {rank} is below {GAP_WARNING_RATIO:g}", RankGapWarning,
                      stacklevel=2)
    return RankReport(rank, tuple(float(s) for s in sv), float(tol), gap)


def rank_at_point(family: ModelFamily, theta, rel_tol: float = DEFAULT_REL_TOL,
                  probe_count: int | None = None, seed: int = 0) -> RankReport:
    return numerical_rank(feature_matrix(family, theta, probe_count, seed), rel_tol)


def max_rank(family: ModelFamily, rel_tol: float = DEFAULT_REL_TOL, seed: int = 0, points: int = 5) -> MaxRank:
    """Probabilistic estimate of the maximal model rank: max over random points.

    Points are standard normal except that network input weights are scaled
    by 1/sqrt(fan-in), which keeps tanh out of saturation for large inputs.
    """
    if family.n_params == 0:
        return MaxRank(0, family)
    rng = np.random.default_rng(seed)
    best = 0
    for _ in range(points):
        theta = random_point(family, rng)
        best = max(best, rank_at_point(family, theta, rel_tol, seed=int(rng.integers(2**31))).rank)
    return MaxRank(best, family)


def random_point(family: ModelFamily, rng) -> np.ndarray:
    theta = rng.standard_normal(family.n_params)
    if family.kind in (Kind.FC, Kind.CNN, Kind.CNN_NOSHARE):
        parts = unpack(family, theta)
        fan_in = family.d if family.kind == Kind.FC else family.kernel_size
        parts["w" if family.kind == Kind.FC else "K"] /= math.sqrt(fan_in)
        theta = pack(family, parts)
    return theta


# --- closed forms --------------------------------------------------------------


def generic_max_rank(family: ModelFamily) -> int:
    """Closed-form maximum model rank (attained at generic parameter points)."""
    kind = family.kind
    if kind in (Kind.LINEAR3, Kind.REPARAM4):
        return 3
    if kind == Kind.DEEP_DIAGONAL:
        return family.d
    if kind == Kind.MF:
        return family.d * family.d
    return family.n_params


def optimistic_size(family: ModelFamily, complexity: int) -> int:
    """Closed-form optimistic sample size for a target of the given complexity.

    ``complexity`` means sparsity (deep_diagonal), matrix rank (mf),
    intrinsic width (fc) or intrinsic kernel count (cnn families). Linear
    families take 1 when the x2 coefficient is nonzero, else 0.
    """
    k = int(complexity)
    if k < 0:
        raise TargetError("complexity must be non-negative")
    kind = family.kind
    d, s = family.d, family.s
    if kind == Kind.LINEAR3:
        return 3
    if kind == Kind.REPARAM4:
        return 3 if k else 2
    if kind == Kind.DEEP_DIAGONAL:
        return k
    if kind == Kind.MF:
        return 2 * k * d - k * k
    if family.bias:
        raise TargetError("closed forms cover bias-free networks only")
    if kind == Kind.FC:
        return k * (d + 1)
    if kind == Kind.CNN:
        if family.conv_dims == 1:
            return k * (d + 1)
        return k * (s * s + (d + 1 - s) ** 2)
    if family.conv_dims == 1:
        return k * (d + 1 - s) * (s + 1)
    return k * (d + 1 - s) ** 2 * (s * s + 1)


def target_complexity(family: ModelFamily, t: TargetSpec) -> int:
    """The descriptor of ``t`` that the closed form for ``family`` reads."""
    kind = family.kind
    if kind == Kind.LINEAR3:
        _require_kinds(t, (Kind.LINEAR3, Kind.REPARAM4))
        return 0
    if kind == Kind.REPARAM4:
        _require_kinds(t, (Kind.LINEAR3, Kind.REPARAM4))
        return int(t.params[2] != 0)
    if kind == Kind.DEEP_DIAGONAL:
        _require_kinds(t, (Kind.DEEP_DIAGONAL,))
        return t.descriptor(SPARSITY)
    if kind == Kind.MF:
        _require_kinds(t, (Kind.MF,))
        return t.descriptor(MATRIX_RANK)
    if kind == Kind.FC:
        return t.descriptor(INTRINSIC_WIDTH)
    _require_kinds(t, (Kind.CNN, Kind.CNN_NOSHARE))
    if t.family.s != family.s or t.family.conv_dims != family.conv_dims:
        raise TargetError("target kernel geometry differs from the family")
    if kind == Kind.CNN and t.family.kind == Kind.CNN_NOSHARE:
        raise TargetError("a no-sharing target is not expressible by a weight-sharing CNN")
    return t.descriptor(INTRINSIC_KERNELS)


def _require_kinds(t: TargetSpec, kinds):
    if t.family.kind not in kinds:
        raise TargetError(f"{t.family.kind.value} target is incompatible with this family")


def closed_form_optimistic(family: ModelFamily, t: TargetSpec) -> int:
    if family.bias:
        raise TargetError("closed forms cover bias-free networks only")
    _check_capacity(family, t)
    return optimistic_size(family, target_complexity(family, t))


def _check_capacity(family: ModelFamily, t: TargetSpec) -> None:
    if family.kind in (Kind.DEEP_DIAGONAL, Kind.MF, Kind.FC, Kind.CNN, Kind.CNN_NOSHARE):
        if family.input_dim != t.family.input_dim:
            raise TargetError("target input dimension differs from the family")
    if family.kind == Kind.DEEP_DIAGONAL or family.kind == Kind.MF:
        if family.d != t.family.d:
            raise TargetError("target dimension differs from the family")
    if family.kind == Kind.FC and t.descriptor(INTRINSIC_WIDTH) > family.m:
        raise TargetError("target intrinsic width exceeds the network width")
    if family.kind in (Kind.CNN, Kind.CNN_NOSHARE) and t.descriptor(INTRINSIC_KERNELS) > family.m_c:
        raise TargetError("target kernel count exceeds the network kernel count")


# --- rank-minimizing constructions ------------------------------------------------


def minimizer_point(family: ModelFamily, t: TargetSpec) -> np.ndarray:
    """A parameter point expressing ``t`` whose model rank attains the closed form.

    Linear/deep targets: zero weights on unused coordinates. Matrices: the
    balanced SVD factorization A = U S^1/2, B = S^1/2 V^T. Networks: the
    generator neurons/kernels followed by zero neurons/kernels (null padding),
    with zero biases when the family has bias terms.
    """
    kind = family.kind
    _check_capacity(family, t)
    if kind == Kind.LINEAR3:
        _require_kinds(t, (Kind.LINEAR3, Kind.REPARAM4))
        return np.array(t.params, dtype=float)
    if kind == Kind.REPARAM4:
        _require_kinds(t, (Kind.LINEAR3, Kind.REPARAM4))
        a0, a1, a2 = t.params
        root = math.sqrt(abs(a2))
        return np.array([a0, a1, root, math.copysign(root, a2) if a2 else 0.0])
    if kind == Kind.DEEP_DIAGONAL:
        _require_kinds(t, (Kind.DEEP_DIAGONAL,))
        c = np.asarray(t.params)
        if family.squares:
            return np.concatenate([np.sqrt(np.maximum(c, 0)), np.sqrt(np.maximum(-c, 0))])
        # |c|^(1/L) on every layer, sign carried by the first layer
        mag = np.abs(c) ** (1.0 / family.L)
        a = np.repeat(mag[:, None], family.L, axis=1)
        a[:, 0] *= np.sign(c)
        return a.reshape(-1)
    if kind == Kind.MF:
        _require_kinds(t, (Kind.MF,))
        U, S, Vt = np.linalg.svd(t.matrix)
        r = int(t.descriptors.get(MATRIX_RANK, np.linalg.matrix_rank(t.matrix)))
        S = np.where(np.arange(S.size) < r, S, 0.0)
        root = np.sqrt(S)
        return pack(family, {"A": U * root, "B": root[:, None] * Vt})
    return _network_minimizer(family, t)


def _network_minimizer(family: ModelFamily, t: TargetSpec) -> np.ndarray:
    gen, theta = t.family, np.asarray(t.params)
    if gen.kind == Kind.MF or gen.kind not in (Kind.FC, Kind.CNN, Kind.CNN_NOSHARE):
        raise TargetError(f"{gen.kind.value} target is not a network")
    if family.kind == Kind.FC:
        if gen.kind != Kind.FC:
            gen, theta = conv_as_fc(gen, theta)
        if gen.d != family.d:
            raise TargetError("target input dimension differs from the family")
    elif family.kind == Kind.CNN_NOSHARE and gen.kind == Kind.CNN:
        gen, theta = _unshare(gen, theta)
    elif family.kind != gen.kind:
        raise TargetError(f"{gen.kind.value} target is not expressible by {family.kind.value}")
    if family.bias and not gen.bias:
        gen, theta = gen_with_bias(gen, theta)
    return null_embed(gen, theta, family)


def _unshare(family: ModelFamily, theta):
    parts = unpack(family, theta)
    ns = replace(family, kind=Kind.CNN_NOSHARE)
    K = np.repeat(parts["K"][:, None, :], family.positions, axis=1)
    out = {"a": parts["a"], "K": K}
    if family.bias:
        out["b"] = np.repeat(parts["b"][:, None], family.positions, axis=1)
    return ns, pack(ns, out)


def gen_with_bias(family: ModelFamily, theta):
    """Same network with explicit zero bias terms added."""
    wide = replace(family, bias=True)
    return wide, pack(wide, unpack(family, theta))


# --- null embedding --------------------------------------------------------------


def null_embed(narrow: ModelFamily, theta, wide: ModelFamily) -> np.ndarray:
    """Embed a narrow two-layer network into a wider one by zero padding.

    The extra neurons (or kernels) get all-zero weights, which keeps the
    output function and the model rank unchanged.
    """
    theta = check_theta(narrow, theta)
    if narrow.kind not in (Kind.FC, Kind.CNN, Kind.CNN_NOSHARE):
        raise FamilyError("null embedding applies to fc/cnn families", "kind")
    if narrow.with_width(0) != wide.with_width(0):
        raise FamilyError("narrow and wide families differ in more than width")
    if wide.width < narrow.width:
        raise FamilyError("wide family is narrower than the narrow one", "width")
    # neuron/kernel blocks are contiguous, so padding appends zero blocks
    return np.concatenate([theta, np.zeros(wide.n_params - narrow.n_params)])


def null_embed_layers(layers, wide_widths):
    """Null embedding for a deep fully-connected network.

    ``layers`` is a list of (W, b) with W of shape (m_l, m_{l-1}); the input
    and output sizes stay fixed while hidden widths grow to ``wide_widths``.
    Each W is placed in the top-left block of a zero matrix of the wide shape.
    """
    widths = [layers[0][0].shape[1]] + list(wide_widths) + [layers[-1][0].shape[0]]
    if len(widths) != len(layers) + 1:
        raise FamilyError("wide_widths must list one width per hidden layer")
    out = []
    for l, (W, b) in enumerate(layers):
        W = np.asarray(W, float)
        b = np.asarray(b, float).reshape(-1)
        rows, cols = widths[l + 1], widths[l]
        if rows < W.shape[0] or cols < W.shape[1]:
            raise FamilyError(f"layer {l + 1} of the wide network is narrower than the narrow one")
        Wn = np.zeros((rows, cols))
        Wn[:W.shape[0], :W.shape[1]] = W
        bn = np.zeros(rows)
        bn[:b.size] = b
        out.append((Wn, bn))
    return out
