"""Parity between the compiled kernel extension and the numpy fallback."""

import importlib

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fdiafl.rng import substream

py = importlib.import_module("fdiafl.neural._kernels_py")
cy = pytest.importorskip("fdiafl.neural._kernels")

TOL = dict(rtol=1e-12, atol=1e-13)


@pytest.fixture()
def rng():
    return substream(77, "kernels")


def test_affine_forward(rng):
    x = rng.normal(size=(16, 7))
    w = rng.normal(size=(7, 9))
    b = rng.normal(size=9)
    assert_allclose(cy.affine_forward(x, w, b), py.affine_forward(x, w, b), **TOL)


def test_affine_backward(rng):
    x = rng.normal(size=(16, 7))
    w = rng.normal(size=(7, 9))
    dz = rng.normal(size=(16, 9))
    for a, b in zip(cy.affine_backward(dz, x, w), py.affine_backward(dz, x, w)):
        assert_allclose(a, b, **TOL)


def test_bn_train_forward(rng):
    z = rng.normal(size=(32, 5))
    gamma = rng.uniform(0.5, 2.0, 5)
    beta = rng.normal(size=5)
    for a, b in zip(cy.bn_train_forward(z, gamma, beta, 1e-5),
                    py.bn_train_forward(z, gamma, beta, 1e-5)):
        assert_allclose(a, b, **TOL)


def test_bn_eval_forward(rng):
    z = rng.normal(size=(32, 5))
    gamma = rng.uniform(0.5, 2.0, 5)
    beta = rng.normal(size=5)
    rmean = rng.normal(size=5)
    rvar = rng.uniform(0.5, 2.0, 5)
    assert_allclose(
        cy.bn_eval_forward(z, gamma, beta, rmean, rvar, 1e-5),
        py.bn_eval_forward(z, gamma, beta, rmean, rvar, 1e-5),
        **TOL,
    )


def test_bn_backward(rng):
    z = rng.normal(size=(32, 5))
    gamma = rng.uniform(0.5, 2.0, 5)
    beta = rng.normal(size=5)
    _, _, _, xhat, inv_std = py.bn_train_forward(z, gamma, beta, 1e-5)
    dout = rng.normal(size=(32, 5))
    for a, b in zip(cy.bn_backward(dout, xhat, gamma, inv_std),
                    py.bn_backward(dout, xhat, gamma, inv_std)):
        assert_allclose(a, b, **TOL)


def test_relu_pair(rng):
    z = rng.normal(size=(16, 6))
    dout = rng.normal(size=(16, 6))
    assert_allclose(cy.relu_forward(z), py.relu_forward(z), **TOL)
    assert_allclose(cy.relu_backward(dout, z), py.relu_backward(dout, z), **TOL)


def test_sigmoid_extremes(rng):
    z = np.concatenate([rng.normal(size=(4, 3)), np.array([[50.0, -50.0, 0.0]])])
    assert_allclose(cy.sigmoid_forward(z), py.sigmoid_forward(z), **TOL)


def test_bce_pair(rng):
    p = rng.random((12, 4))
    p[0, 0], p[1, 1] = 0.0, 1.0  # exercise the clamp
    y = (rng.random((12, 4)) < 0.5).astype(np.float64)
    lo, hi = 1e-7, 1.0 - 1e-7
    assert cy.bce_mean(p, y, lo, hi) == pytest.approx(py.bce_mean(p, y, lo, hi), rel=1e-12)
    assert_allclose(cy.bce_sigmoid_grad(p, y, lo, hi),
                    py.bce_sigmoid_grad(p, y, lo, hi), **TOL)


def test_adam_update_parity(rng):
    w0 = rng.normal(size=64)
    g = rng.normal(size=64)
    state_a = (w0.copy(), np.zeros(64), np.zeros(64))
    state_b = (w0.copy(), np.zeros(64), np.zeros(64))
    for t in range(1, 6):
        cy.adam_update(state_a[0], g, state_a[1], state_a[2], t, 1e-3, 0.9, 0.999, 1e-8)
        py.adam_update(state_b[0], g, state_b[1], state_b[2], t, 1e-3, 0.9, 0.999, 1e-8)
    assert_allclose(state_a[0], state_b[0], **TOL)
    assert_allclose(state_a[1], state_b[1], **TOL)
    assert_allclose(state_a[2], state_b[2], **TOL)
