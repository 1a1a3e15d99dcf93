from __future__ import annotations

import numpy as np
import pytest

from optrank.model_zoo import (
    deep_diagonal,
    linear3,
    matrix_factorization,
    reparam_linear4,
    two_layer_cnn,
    two_layer_fc,
)

# One representative of every family/flag combination, small enough for
# finite differences and dense SVDs.
SMALL_FAMILIES = [
    linear3(),
    reparam_linear4(),
    deep_diagonal(3, L=2),
    deep_diagonal(4, L=3),
    deep_diagonal(3, squares=True),
    matrix_factorization(3),
    two_layer_fc(3, 2),
    two_layer_fc(4, 3, bias=True),
    two_layer_cnn(5, 2, 3),
    two_layer_cnn(5, 2, 2, bias=True),
    two_layer_cnn(4, 2, 2, share=False),
    two_layer_cnn(4, 1, 3, share=False, bias=True),
    two_layer_cnn(3, 2, 2, conv_dims=2),
    two_layer_cnn(4, 1, 2, conv_dims=2, bias=True),
    two_layer_cnn(3, 1, 2, conv_dims=2, share=False),
    two_layer_cnn(3, 1, 2, conv_dims=2, share=False, bias=True),
]


def family_id(f) -> str:
    extra = []
    if f.kind.value in ("fc",):
        extra.append(f"m{f.m}")
    if f.kind.value.startswith("cnn"):
        extra.append(f"mc{f.m_c}s{f.s}c{f.conv_dims}")
    if f.kind.value == "deep_diagonal":
        extra.append(f"L{f.L}{'sq' if f.squares else ''}")
    if f.bias:
        extra.append("bias")
    return "-".join([f.kind.value, f"d{f.d}", *extra])


def random_inputs(family, n, rng):
    if family.kind.value == "mf":
        return rng.integers(1, family.d + 1, size=(n, 2)).astype(float)
    return rng.standard_normal((n, family.input_dim))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria append (label, passed, detail) here; printed at session end.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
