from __future__ import annotations

import numpy as np
import pytest
from scipy.signal import convolve2d

from conftest import SMALL_FAMILIES, family_id, random_inputs
from optrank.errors import FamilyError, ShapeError
from optrank.model_zoo import (
    Kind,
    ModelFamily,
    all_entries,
    conv_as_fc,
    deep_diagonal,
    evaluate,
    evaluate_batch,
    linear3,
    matrix_factorization,
    matrix_of,
    pack,
    param_count,
    param_gradient,
    reparam_linear4,
    two_layer_cnn,
    two_layer_fc,
    unpack,
)


def reference_forward(family, theta, x):
    """Plain numpy forward pass written from the model definitions."""
    x = np.asarray(x, float)
    p = unpack(family, theta)
    kind = family.kind
    if kind == Kind.LINEAR3:
        t = p["theta"]
        return t[0] + t[1] * x[0] + t[2] * x[1]
    if kind == Kind.REPARAM4:
        t = p["theta"]
        return t[0] + t[1] * x[0] + t[2] * t[3] * x[1]
    if kind == Kind.DEEP_DIAGONAL:
        if family.squares:
            return float(np.sum((p["a"] ** 2 - p["b"] ** 2) * x))
        return float(np.sum(np.prod(p["a"], axis=1) * x))
    if kind == Kind.MF:
        return (p["A"] @ p["B"])[int(x[0]) - 1, int(x[1]) - 1]
    if kind == Kind.FC:
        b = p.get("b", np.zeros(family.m))
        return float(p["a"] @ np.tanh(p["w"] @ x + b))
    total = 0.0
    for i in range(family.m_c):
        if family.conv_dims == 1:
            if kind == Kind.CNN:
                z = np.convolve(x, p["K"][i], mode="valid")
            else:
                z = np.array([np.convolve(x, p["K"][i, j], mode="valid")[j] for j in range(family.positions)])
        else:
            X = x.reshape(family.d, family.d)
            s = family.s
            if kind == Kind.CNN:
                z = convolve2d(X, p["K"][i].reshape(s, s), mode="valid").ravel()
            else:
                z = np.array([convolve2d(X, p["K"][i, j].reshape(s, s), mode="valid").ravel()[j]
                              for j in range(family.positions)])
        if family.bias:
            z = z + p["b"][i]
        total += float(p["a"][i] @ np.tanh(z))
    return total


@pytest.mark.parametrize("family", SMALL_FAMILIES, ids=family_id)
def test_forward_matches_reference(family, rng):
    for _ in range(5):
        theta = rng.standard_normal(family.n_params)
        X = random_inputs(family, 6, rng)
        got = evaluate_batch(family, theta, X)
        want = [reference_forward(family, theta, x) for x in X]
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_param_counts():
    assert param_count(linear3()) == 3
    assert param_count(reparam_linear4()) == 4
    assert param_count(deep_diagonal(5, L=3)) == 15
    assert param_count(deep_diagonal(5, squares=True)) == 10
    assert param_count(matrix_factorization(4)) == 32
    assert param_count(two_layer_fc(5, 3)) == 18
    assert param_count(two_layer_fc(5, 3, bias=True)) == 21
    assert param_count(two_layer_cnn(5, 1, 3)) == 6
    assert param_count(two_layer_cnn(5, 1, 3, bias=True)) == 7
    assert param_count(two_layer_cnn(5, 1, 3, share=False)) == 12
    assert param_count(two_layer_cnn(28, 1, 3, conv_dims=2)) == 685
    assert param_count(two_layer_fc(5, 0)) == 0


@pytest.mark.parametrize("kwargs, field", [
    (dict(kind="deep_diagonal", d=3, L=1), "L"),
    (dict(kind="deep_diagonal", d=3, L=3, squares=True), "squares"),
    (dict(kind="linear3", d=3), "d"),
    (dict(kind="mf", d=0), "d"),
    (dict(kind="cnn", d=4, m_c=1, s=5), "s"),
    (dict(kind="cnn", d=4, m_c=1, s=2, conv_dims=3), "conv_dims"),
    (dict(kind="mf", d=3, bias=True), "bias"),
    (dict(kind="fc", d=3, m=-1), "m"),
    (dict(kind="fc", d=2.5, m=1), "d"),
])
def test_family_validation_names_field(kwargs, field):
    with pytest.raises(FamilyError) as info:
        ModelFamily(**kwargs)
    assert info.value.field == field


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        ModelFamily("resnet")


def test_family_dict_round_trip():
    for f in SMALL_FAMILIES:
        assert ModelFamily.from_dict(f.to_dict()) == f
    with pytest.raises(FamilyError):
        ModelFamily.from_dict({"kind": "fc", "d": 2, "m": 1, "depth": 3})


def test_linear_examples():
    assert evaluate(linear3(), [1.0, 2.0, 3.0], [1.0, 1.0]) == 6.0
    assert evaluate(reparam_linear4(), [1.0, 2.0, 3.0, 4.0], [1.0, 1.0]) == 15.0
    np.testing.assert_array_equal(param_gradient(reparam_linear4(), [1.0, 2.0, 3.0, 4.0], [0.5, 2.0]),
                                  [1.0, 0.5, 8.0, 6.0])


def test_matrix_examples():
    f = matrix_factorization(2)
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    B = np.array([[5.0, 6.0], [7.0, 8.0]])
    theta = pack(f, {"A": A, "B": B})
    np.testing.assert_array_equal(matrix_of(f, theta), A @ B)
    assert evaluate(f, theta, [2, 1]) == (A @ B)[1, 0]
    g = param_gradient(f, theta, [2, 1])
    # d(AB)_{21}/dA_{2r} = B_{r1}, d/dB_{r1} = A_{2r}
    want = np.zeros(8)
    want[[2, 3]] = B[:, 0]
    want[[4, 6]] = A[1, :]
    np.testing.assert_array_equal(g, want)


def test_matrix_inputs_validated():
    f = matrix_factorization(3)
    theta = np.ones(18)
    for bad in ([0, 1], [1, 4], [1.5, 2]):
        with pytest.raises(ShapeError):
            evaluate(f, theta, bad)


def test_shape_errors():
    with pytest.raises(ShapeError):
        evaluate(linear3(), [1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ShapeError):
        evaluate(two_layer_fc(3, 1), np.zeros(4), [0.0, 0.0])


def test_all_entries_row_major():
    e = all_entries(2)
    np.testing.assert_array_equal(e, [[1, 1], [1, 2], [2, 1], [2, 2]])


def test_two_dim_inputs_accept_images(rng):
    f = two_layer_cnn(4, 2, 2, conv_dims=2)
    theta = rng.standard_normal(f.n_params)
    images = rng.standard_normal((3, 4, 4))
    np.testing.assert_allclose(evaluate_batch(f, theta, images), evaluate_batch(f, theta, images.reshape(3, 16)))


@pytest.mark.parametrize("family", [f for f in SMALL_FAMILIES if f.kind.value.startswith("cnn")], ids=family_id)
def test_conv_as_fc_same_function(family, rng):
    theta = rng.standard_normal(family.n_params)
    fc, theta_fc = conv_as_fc(family, theta)
    assert fc.m == family.m_c * family.positions
    X = rng.standard_normal((10, family.input_dim))
    np.testing.assert_allclose(evaluate_batch(fc, theta_fc, X), evaluate_batch(family, theta, X), rtol=1e-12)


def test_zero_width_network_is_zero():
    f = two_layer_fc(3, 0)
    assert evaluate(f, np.zeros(0), [1.0, 2.0, 3.0]) == 0.0
