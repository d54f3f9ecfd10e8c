# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled training kernels; signature-compatible with `_kernels_py`.

Matrix products go through numpy's BLAS (which beats naive C loops even at
detector sizes); everything elementwise or reduction-shaped is a fused
single-pass C loop, avoiding the fallback's chain of numpy temporaries.
"""

import numpy as np

from libc.math cimport exp, log, log1p, sqrt


def affine_forward(x, w, double[::1] b):
    out_arr = np.matmul(x, w)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n = out.shape[0], dout = out.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(dout):
            out[i, j] += b[j]
    return out_arr


def affine_backward(dz, x, w):
    dx = np.matmul(dz, w.T)
    dw = np.matmul(x.T, dz)
    db_arr = np.zeros(dz.shape[1])
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dzv = dz
    cdef Py_ssize_t n = dzv.shape[0], dout = dzv.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(dout):
            db[j] += dzv[i, j]
    return dx, dw, db_arr


def bn_train_forward(double[:, ::1] z, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    out_arr = np.empty((n, d))
    mean_arr = np.zeros(d)
    var_arr = np.zeros(d)
    xhat_arr = np.empty((n, d))
    inv_std_arr = np.empty(d)
    cdef double[:, ::1] out = out_arr, xhat = xhat_arr
    cdef double[::1] mean = mean_arr, var = var_arr, inv_std = inv_std_arr
    cdef Py_ssize_t i, j
    cdef double dev
    for i in range(n):
        for j in range(d):
            mean[j] += z[i, j]
    for j in range(d):
        mean[j] /= n
    for i in range(n):
        for j in range(d):
            dev = z[i, j] - mean[j]
            var[j] += dev * dev
    for j in range(d):
        var[j] /= n
        inv_std[j] = 1.0 / sqrt(var[j] + eps)
    for i in range(n):
        for j in range(d):
            xhat[i, j] = (z[i, j] - mean[j]) * inv_std[j]
            out[i, j] = gamma[j] * xhat[i, j] + beta[j]
    return out_arr, mean_arr, var_arr, xhat_arr, inv_std_arr


def bn_eval_forward(double[:, ::1] z, double[::1] gamma, double[::1] beta,
                    double[::1] rmean, double[::1] rvar, double eps):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double scale
    for j in range(d):
        scale = gamma[j] / sqrt(rvar[j] + eps)
        for i in range(n):
            out[i, j] = scale * (z[i, j] - rmean[j]) + beta[j]
    return out_arr


def bn_backward(double[:, ::1] dout, double[:, ::1] xhat, double[::1] gamma,
                double[::1] inv_std):
    cdef Py_ssize_t n = dout.shape[0], d = dout.shape[1]
    dz_arr = np.empty((n, d))
    dgamma_arr = np.zeros(d)
    dbeta_arr = np.zeros(d)
    sum_dxhat_arr = np.zeros(d)
    sum_dxhat_xhat_arr = np.zeros(d)
    cdef double[:, ::1] dz = dz_arr
    cdef double[::1] dgamma = dgamma_arr, dbeta = dbeta_arr
    cdef double[::1] sum_dxhat = sum_dxhat_arr, sum_dxhat_xhat = sum_dxhat_xhat_arr
    cdef Py_ssize_t i, j
    cdef double dxh, coef
    for i in range(n):
        for j in range(d):
            dxh = dout[i, j] * gamma[j]
            sum_dxhat[j] += dxh
            sum_dxhat_xhat[j] += dxh * xhat[i, j]
            dgamma[j] += dout[i, j] * xhat[i, j]
            dbeta[j] += dout[i, j]
    for i in range(n):
        for j in range(d):
            coef = inv_std[j] / n
            dz[i, j] = coef * (
                n * dout[i, j] * gamma[j] - sum_dxhat[j] - xhat[i, j] * sum_dxhat_xhat[j]
            )
    return dz_arr, dgamma_arr, dbeta_arr


def relu_forward(double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            out[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0
    return out_arr


def relu_backward(double[:, ::1] dout, double[:, ::1] pre):
    cdef Py_ssize_t n = dout.shape[0], d = dout.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            out[i, j] = dout[i, j] if pre[i, j] > 0.0 else 0.0
    return out_arr


def sigmoid_forward(double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double ez
    for i in range(n):
        for j in range(d):
            if z[i, j] >= 0.0:
                out[i, j] = 1.0 / (1.0 + exp(-z[i, j]))
            else:
                ez = exp(z[i, j])
                out[i, j] = ez / (1.0 + ez)
    return out_arr


def bce_mean(double[:, ::1] p, double[:, ::1] y, double lo, double hi):
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1]
    cdef Py_ssize_t i, j
    cdef double total = 0.0, pc
    for i in range(n):
        for j in range(d):
            pc = p[i, j]
            if pc < lo:
                pc = lo
            elif pc > hi:
                pc = hi
            total += -(y[i, j] * log(pc) + (1.0 - y[i, j]) * log1p(-pc))
    return total / (n * d)


def bce_sigmoid_grad(double[:, ::1] p, double[:, ::1] y, double lo, double hi):
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef double scale = 1.0 / (n * d)
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            if lo < p[i, j] < hi:
                out[i, j] = (p[i, j] - y[i, j]) * scale
            else:
                out[i, j] = 0.0
    return out_arr


def adam_update(double[::1] w, double[::1] g, double[::1] m, double[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = w.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        w[i] -= lr * mhat / (sqrt(vhat) + eps)
