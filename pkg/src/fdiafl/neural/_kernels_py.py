"""Numpy implementations of the training kernels.

This is the fallback backend; `fdiafl.neural._kernels` is the compiled
equivalent with the same call signatures. Arrays are float64, C-contiguous,
batch-major (B x width).
"""

from __future__ import annotations

import numpy as np


def affine_forward(x, w, b):
    """z = x @ w + b."""
    return x @ w + b


def affine_backward(dz, x, w):
    """Gradients of z = x @ w + b: returns (dx, dw, db)."""
    return dz @ w.T, x.T @ dz, dz.sum(axis=0)


def bn_train_forward(z, gamma, beta, eps):
    """Batch-statistics normalization; returns (out, mean, var, xhat, inv_std)."""
    mean = z.mean(axis=0)
    var = z.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (z - mean) * inv_std
    return gamma * xhat + beta, mean, var, xhat, inv_std


def bn_eval_forward(z, gamma, beta, rmean, rvar, eps):
    """Running-statistics normalization."""
    return gamma * ((z - rmean) / np.sqrt(rvar + eps)) + beta


def bn_backward(dout, xhat, gamma, inv_std):
    """Exact gradient through batch statistics; returns (dz, dgamma, dbeta)."""
    n = dout.shape[0]
    dxhat = dout * gamma
    sum_dxhat = dxhat.sum(axis=0)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=0)
    dz = (inv_std / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dz, (dout * xhat).sum(axis=0), dout.sum(axis=0)


def relu_forward(z):
    return np.maximum(z, 0.0)


def relu_backward(dout, pre):
    return dout * (pre > 0.0)


def sigmoid_forward(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_mean(p, y, lo, hi):
    """Mean binary cross-entropy over all cells, probabilities clamped to [lo, hi]."""
    pc = np.clip(p, lo, hi)
    return float(-(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).mean())


def bce_sigmoid_grad(p, y, lo, hi):
    """Gradient of the clamped mean BCE w.r.t. the pre-sigmoid input.

    Inside the clamp interval the chain collapses to (p - y) / N; outside,
    the clamped loss is locally constant in the input, so the gradient is 0.
    """
    inside = (p > lo) & (p < hi)
    return np.where(inside, p - y, 0.0) / p.size


def adam_update(w, g, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, in place on (w, m, v)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    w -= lr * mhat / (np.sqrt(vhat) + eps)
