from __future__ import annotations

import math

import numpy as np
import pytest

from optrank.errors import ConfigError, TargetError
from optrank.model_zoo import (
    deep_diagonal,
    evaluate_batch,
    linear3,
    matrix_factorization,
    pack,
    reparam_linear4,
    two_layer_cnn,
    two_layer_fc,
)
from optrank.targets import (
    BUILTIN_MATRICES,
    INTRINSIC_KERNELS,
    INTRINSIC_WIDTH,
    MATRIX_RANK,
    TargetSpec,
    builtin_target,
    evaluate_target,
    evaluate_target_batch,
    get_target,
    linear_target,
    make_target,
    target_id,
    zero_target,
)


@pytest.mark.parametrize("name, rank", [("M1", 1), ("M2", 1), ("M3", 2), ("M4", 2), ("M5", 3), ("M6", 3),
                                        ("M7", 4), ("M8", 4), ("M5-printed", 2)])
def test_builtin_matrix_ranks(name, rank):
    t = builtin_target(name)
    assert np.linalg.matrix_rank(t.matrix) == rank
    assert t.descriptor(MATRIX_RANK) == rank


def test_replacement_m5_is_m3_plus_rank_one():
    diff = np.array(BUILTIN_MATRICES["M5"]) - np.array(BUILTIN_MATRICES["M3"])
    np.testing.assert_allclose(diff, np.outer([1, -2, -2, 1], [0, 3, 1, 2]), atol=1e-12)
    assert BUILTIN_MATRICES["M5-printed"] == BUILTIN_MATRICES["M3"]


def test_matrix_target_entries():
    t = builtin_target("M1")
    assert evaluate_target(t, [4, 1]) == 7.0
    np.testing.assert_array_equal(evaluate_target_batch(t, [[1, 2], [3, 3]]), [0.3, 2.8])


def test_fig4_target_values():
    t = builtin_target("fig4-target")
    assert t.descriptor(INTRINSIC_KERNELS) == 1
    assert t.descriptor(INTRINSIC_WIDTH) == 3
    assert evaluate_target(t, [1, 0, 0, 0, 0]) == pytest.approx(math.tanh(0.6), abs=1e-15)
    x = np.array([0.3, -1.0, 2.0, 0.5, -0.7])
    want = sum(math.tanh(0.6 * x[j] + 0.8 * x[j + 1] + x[j + 2]) for j in range(3))
    assert evaluate_target(t, x) == pytest.approx(want, rel=1e-14)


@pytest.mark.parametrize("expr, coeffs", [
    ("1", [1, 0, 0]), ("x1", [0, 1, 0]), ("1+x1", [1, 1, 0]), ("x2", [0, 0, 1]),
    ("1+x1+x2", [1, 1, 1]), ("2x2 - 0.5x1", [0, -0.5, 2]), ("3*x1-1", [-1, 3, 0]), ("0", [0, 0, 0]),
])
def test_linear_target_parse(expr, coeffs):
    t = linear_target(expr)
    np.testing.assert_array_equal(t.params, coeffs)
    assert t.name == expr


@pytest.mark.parametrize("bad", ["", "x3", "1+y", "sin(x1)"])
def test_linear_target_rejects(bad):
    with pytest.raises(TargetError):
        linear_target(bad)


def test_get_target_resolution():
    assert get_target("M3") == builtin_target("M3")
    assert get_target("1+x2") == linear_target("1+x2")
    t = builtin_target("M2")
    assert get_target(t) is t
    assert get_target(t.to_dict()) == t
    assert target_id(t.to_dict()) == "M2"
    with pytest.raises(TargetError):
        get_target("M9")


@pytest.mark.parametrize("family, k, key", [
    (linear3(), 2, "nonzero_coefficients"),
    (deep_diagonal(6), 3, "sparsity"),
    (matrix_factorization(5), 2, "matrix_rank"),
    (two_layer_fc(4, 5), 3, "intrinsic_width"),
    (two_layer_cnn(6, 4, 3), 2, "intrinsic_kernels"),
    (two_layer_cnn(6, 4, 3, share=False), 2, "intrinsic_kernels"),
    (two_layer_cnn(4, 2, 2, conv_dims=2), 2, "intrinsic_kernels"),
])
def test_make_target_descriptor(family, k, key):
    t = make_target(family, k, seed=3)
    assert t.descriptor(key) == k
    assert make_target(family, k, seed=3) == t
    assert make_target(family, k, seed=4) != t


def test_make_target_values_expressible():
    fam = two_layer_fc(3, 4)
    t = make_target(fam, 2, seed=1)
    X = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_array_equal(evaluate_target_batch(t, X), evaluate_batch(t.family, t.params, X))
    m = make_target(matrix_factorization(4), 3, seed=2)
    assert np.linalg.matrix_rank(m.matrix) == 3


def test_zero_target():
    t = zero_target(matrix_factorization(3))
    np.testing.assert_array_equal(t.matrix, np.zeros((3, 3)))
    assert t.descriptor(MATRIX_RANK) == 0
    assert evaluate_target(zero_target(two_layer_fc(2, 2)), [1.0, 2.0]) == 0.0


def test_make_target_out_of_range():
    with pytest.raises(TargetError):
        make_target(matrix_factorization(3), 4)
    with pytest.raises(TargetError):
        make_target(two_layer_fc(3, 2), 3)
    with pytest.raises(TargetError):
        make_target(deep_diagonal(3), -1)


def test_degenerate_records_rejected():
    gen = two_layer_fc(2, 2)
    dup = pack(gen, {"a": [1.0, 1.0], "w": [[1.0, 2.0], [-1.0, -2.0]]})
    record = TargetSpec(gen, dup, {INTRINSIC_WIDTH: 2}, "dup").to_dict()
    with pytest.raises(TargetError):
        TargetSpec.from_dict(record)
    bad_rank = TargetSpec(matrix_factorization(2), [1, 2, 2, 4], {MATRIX_RANK: 2}).to_dict()
    with pytest.raises(TargetError):
        TargetSpec.from_dict(bad_rank)
    with pytest.raises(ConfigError):
        TargetSpec.from_dict({"schema": "optrank.target/9"})


def test_param_length_checked():
    with pytest.raises(TargetError):
        TargetSpec(reparam_linear4(), [1.0, 2.0])
