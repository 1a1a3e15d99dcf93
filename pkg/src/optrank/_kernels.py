"""Compiled forward/gradient kernels shared by the model zoo and the trainer.

Every family is addressed by an integer kind code and a small ``dims`` vector
so that one jitted gradient-descent loop can drive all of them.

dims layout: [d, L, m, m_c, s, conv_dims, bias, n_params]
"""

import math

import numpy as np
from numba import njit

LINEAR3 = 0
REPARAM4 = 1
DEEP_PRODUCT = 2
DEEP_SQUARES = 3
MATRIX = 4
FC = 5
CNN = 6
CNN_NOSHARE = 7

STATUS_RUNNING = 0
STATUS_CONVERGED = 1
STATUS_DIVERGED = 2
STATUS_MAXITER = 3

DIVERGENCE_MSE = 1e6


@njit(cache=True)
def _conv_index(j, alpha, d, s, conv_dims):
    # Input index read by kernel entry `alpha` at output position `j`.
    # Convolution (flipped kernel) convention: x_{j+s-alpha} in 1-based terms.
    if conv_dims == 1:
        return j + s - 1 - alpha
    P = d + 1 - s
    p = j // P
    q = j - p * P
    a = alpha // s
    b = alpha - a * s
    return (p + s - 1 - a) * d + (q + s - 1 - b)


@njit(cache=True)
def _row(kind, dims, theta, x, jrow):
    """Return f(x; theta) and write d f / d theta into ``jrow``."""
    d = dims[0]
    if kind == LINEAR3:
        jrow[0] = 1.0
        jrow[1] = x[0]
        jrow[2] = x[1]
        return theta[0] + theta[1] * x[0] + theta[2] * x[1]
    if kind == REPARAM4:
        jrow[0] = 1.0
        jrow[1] = x[0]
        jrow[2] = theta[3] * x[1]
        jrow[3] = theta[2] * x[1]
        return theta[0] + theta[1] * x[0] + theta[2] * theta[3] * x[1]
    if kind == DEEP_PRODUCT:
        L = dims[1]
        f = 0.0
        for j in range(d):
            base = j * L
            prod = 1.0
            for l in range(L):
                prod *= theta[base + l]
            f += prod * x[j]
            for l in range(L):
                p = 1.0
                for t in range(L):
                    if t != l:
                        p *= theta[base + t]
                jrow[base + l] = p * x[j]
        return f
    if kind == DEEP_SQUARES:
        f = 0.0
        for j in range(d):
            a = theta[j]
            b = theta[d + j]
            f += (a * a - b * b) * x[j]
            jrow[j] = 2.0 * a * x[j]
            jrow[d + j] = -2.0 * b * x[j]
        return f
    if kind == MATRIX:
        i = int(x[0]) - 1
        k = int(x[1]) - 1
        dd = d * d
        for t in range(2 * dd):
            jrow[t] = 0.0
        f = 0.0
        for r in range(d):
            a = theta[i * d + r]
            b = theta[dd + r * d + k]
            f += a * b
            jrow[i * d + r] = b
            jrow[dd + r * d + k] = a
        return f
    if kind == FC:
        m = dims[2]
        bias = dims[6]
        block = d + 1 + bias
        f = 0.0
        for i in range(m):
            base = i * block
            a = theta[base]
            z = 0.0
            for l in range(d):
                z += theta[base + 1 + l] * x[l]
            if bias == 1:
                z += theta[base + 1 + d]
            t = math.tanh(z)
            f += a * t
            g = a * (1.0 - t * t)
            jrow[base] = t
            for l in range(d):
                jrow[base + 1 + l] = g * x[l]
            if bias == 1:
                jrow[base + 1 + d] = g
        return f
    if kind == CNN:
        m_c = dims[3]
        s = dims[4]
        conv_dims = dims[5]
        bias = dims[6]
        P = (d + 1 - s) ** conv_dims
        S = s ** conv_dims
        block = P + S + bias
        f = 0.0
        for i in range(m_c):
            base = i * block
            kbase = base + P
            for alpha in range(S):
                jrow[kbase + alpha] = 0.0
            gb = 0.0
            for j in range(P):
                z = 0.0
                for alpha in range(S):
                    z += theta[kbase + alpha] * x[_conv_index(j, alpha, d, s, conv_dims)]
                if bias == 1:
                    z += theta[kbase + S]
                t = math.tanh(z)
                a = theta[base + j]
                f += a * t
                jrow[base + j] = t
                g = a * (1.0 - t * t)
                for alpha in range(S):
                    jrow[kbase + alpha] += g * x[_conv_index(j, alpha, d, s, conv_dims)]
                gb += g
            if bias == 1:
                jrow[kbase + S] = gb
        return f
    if kind == CNN_NOSHARE:
        m_c = dims[3]
        s = dims[4]
        conv_dims = dims[5]
        bias = dims[6]
        P = (d + 1 - s) ** conv_dims
        S = s ** conv_dims
        block = 1 + S + bias
        f = 0.0
        for i in range(m_c):
            for j in range(P):
                base = (i * P + j) * block
                z = 0.0
                for alpha in range(S):
                    z += theta[base + 1 + alpha] * x[_conv_index(j, alpha, d, s, conv_dims)]
                if bias == 1:
                    z += theta[base + 1 + S]
                t = math.tanh(z)
                a = theta[base]
                f += a * t
                jrow[base] = t
                g = a * (1.0 - t * t)
                for alpha in range(S):
                    jrow[base + 1 + alpha] = g * x[_conv_index(j, alpha, d, s, conv_dims)]
                if bias == 1:
                    jrow[base + 1 + S] = g
        return f
    raise ValueError("unknown kind code")


@njit(cache=True)
def forward_jacobian(kind, dims, theta, X):
    n = X.shape[0]
    M = dims[7]
    f = np.empty(n)
    J = np.empty((n, M))
    for i in range(n):
        f[i] = _row(kind, dims, theta, X[i], J[i])
    return f, J


@njit(cache=True)
def forward(kind, dims, theta, X):
    n = X.shape[0]
    f = np.empty(n)
    scratch = np.empty(dims[7])
    for i in range(n):
        f[i] = _row(kind, dims, theta, X[i], scratch)
    return f


@njit(cache=True)
def mse_and_grad(kind, dims, theta, X, y, grad):
    """Mean squared error and its gradient (written into ``grad``)."""
    n = X.shape[0]
    M = dims[7]
    scratch = np.empty(M)
    for k in range(M):
        grad[k] = 0.0
    loss = 0.0
    scale = 2.0 / n
    for i in range(n):
        r = _row(kind, dims, theta, X[i], scratch) - y[i]
        loss += r * r
        c = scale * r
        for k in range(M):
            grad[k] += c * scratch[k]
    return loss / n


@njit(cache=True)
def gd_loop(kind, dims, theta, X, y, lr, stop_mse, max_iters, warmup_iters, trace_every):
    """Full-batch gradient descent on the mean squared error.

    Updates ``theta`` in place. Returns (train_mse, iterations, status, trace)
    where ``iterations`` counts parameter updates and ``trace`` holds
    (iteration, mse) pairs sampled every ``trace_every`` updates.
    """
    M = dims[7]
    grad = np.empty(M)
    n_trace = 0
    if trace_every > 0:
        n_trace = max_iters // trace_every + 2
    trace = np.empty((n_trace, 2))
    t_len = 0
    it = 0
    status = STATUS_RUNNING
    mse = 0.0
    while True:
        mse = mse_and_grad(kind, dims, theta, X, y, grad)
        if trace_every > 0 and it % trace_every == 0 and t_len < n_trace:
            trace[t_len, 0] = it
            trace[t_len, 1] = mse
            t_len += 1
        if not math.isfinite(mse) or mse > DIVERGENCE_MSE:
            status = STATUS_DIVERGED
            break
        if mse <= stop_mse:
            status = STATUS_CONVERGED
            break
        if it >= max_iters:
            status = STATUS_MAXITER
            break
        step = lr
        if warmup_iters > 0 and it < warmup_iters:
            step = lr * (it + 1) / warmup_iters
        for k in range(M):
            theta[k] -= step * grad[k]
        it += 1
    if trace_every > 0 and t_len < n_trace and (t_len == 0 or trace[t_len - 1, 0] != it):
        trace[t_len, 0] = it
        trace[t_len, 1] = mse
        t_len += 1
    return mse, it, status, trace[:t_len]
