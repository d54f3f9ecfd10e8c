"""Multilabel MLP detector: forward, loss, and exact analytic backward.

Hidden blocks run dense -> batch-norm -> ReLU -> (inverted) dropout; the
output layer is dense -> sigmoid, one probability per measurement location.
Training mode normalizes with batch statistics and samples dropout masks
from an explicit generator; eval mode uses running statistics and no
dropout, and is pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels as K
from .params import GradVector, ModelParams

PROB_CLAMP = 1e-7


class DivergenceError(RuntimeError):
    """Raised when activations or losses stop being finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    l2: float = 0.01
    dropout_p: float = 0.4
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    min_delta: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0,1), got {self.dropout_p}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"plateau_factor must be in (0,1), got {self.plateau_factor}")
        if self.batch_size < 1 or self.plateau_patience < 1:
            raise ValueError("batch_size and plateau_patience must be >= 1")


def forward(
    params: ModelParams,
    x: np.ndarray,
    cfg: TrainConfig,
    train: bool,
    rng: np.random.Generator | None = None,
    update_running: bool = True,
):
    """Probabilities (B x I) plus the cache consumed by `backward`."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.n_features:
        raise ValueError(
            f"batch width {x.shape} does not match model input {params.n_features}"
        )
    if train and cfg.dropout_p > 0.0 and rng is None:
        raise ValueError("train-mode forward with dropout needs a generator")
    t = params.t
    a = x
    layers = []
    for li in range(params.layout.n_hidden):
        z = K.affine_forward(a, t[f"w{li}"], t[f"b{li}"])
        if train:
            bn_out, mean, var, xhat, inv_std = K.bn_train_forward(
                z, t[f"gamma{li}"], t[f"beta{li}"], cfg.bn_eps
            )
            if update_running:
                mom = cfg.bn_momentum
                t[f"rmean{li}"][:] = mom * t[f"rmean{li}"] + (1.0 - mom) * mean
                t[f"rvar{li}"][:] = mom * t[f"rvar{li}"] + (1.0 - mom) * var
        else:
            bn_out = K.bn_eval_forward(
                z, t[f"gamma{li}"], t[f"beta{li}"], t[f"rmean{li}"], t[f"rvar{li}"], cfg.bn_eps
            )
            xhat = inv_std = None
        h = K.relu_forward(bn_out)
        mask = None
        if train and cfg.dropout_p > 0.0:
            keep = 1.0 - cfg.dropout_p
            mask = (rng.random(h.shape) >= cfg.dropout_p) / keep
            h = h * mask
        layers.append(
            {"a_in": a, "bn_out": bn_out, "xhat": xhat, "inv_std": inv_std, "mask": mask}
        )
        a = h
    z_out = K.affine_forward(a, t["w_out"], t["b_out"])
    if not np.isfinite(z_out).all():
        raise DivergenceError("numerical divergence: non-finite activations")
    probs = K.sigmoid_forward(z_out)
    cache = {"params": params, "cfg": cfg, "layers": layers, "a_last": a, "probs": probs,
             "train": train}
    return probs, cache


def loss(probs: np.ndarray, labels: np.ndarray, params: ModelParams, l2: float) -> float:
    """Mean clamped BCE over all cells plus l2/2 * sum of squared weights."""
    y = np.ascontiguousarray(labels, dtype=np.float64)
    value = K.bce_mean(probs, y, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if l2 > 0.0:
        penalty = sum(float((params.t[n] ** 2).sum()) for n in params.layout.weight_names())
        value += 0.5 * l2 * penalty
    return value


def backward(cache: dict, labels: np.ndarray) -> GradVector:
    """Exact gradients of `loss` for every trainable tensor."""
    if not cache.get("train"):
        raise ValueError("backward requires a cache from a train-mode forward")
    params: ModelParams = cache["params"]
    cfg: TrainConfig = cache["cfg"]
    y = np.ascontiguousarray(labels, dtype=np.float64)
    if y.shape != cache["probs"].shape:
        raise ValueError("label shape does not match the cached batch")
    grads = GradVector(params.layout)
    g = grads.t
    dz = K.bce_sigmoid_grad(cache["probs"], y, PROB_CLAMP, 1.0 - PROB_CLAMP)
    da, dw, db = K.affine_backward(dz, cache["a_last"], params.t["w_out"])
    g["w_out"][:] = dw
    g["b_out"][:] = db
    if cfg.l2 > 0.0:
        g["w_out"] += cfg.l2 * params.t["w_out"]
    for li in range(params.layout.n_hidden - 1, -1, -1):
        layer = cache["layers"][li]
        if layer["mask"] is not None:
            da = da * layer["mask"]
        dbn = K.relu_backward(da, layer["bn_out"])
        dz, dgamma, dbeta = K.bn_backward(
            dbn, layer["xhat"], params.t[f"gamma{li}"], layer["inv_std"]
        )
        da, dw, db = K.affine_backward(dz, layer["a_in"], params.t[f"w{li}"])
        g[f"w{li}"][:] = dw
        g[f"b{li}"][:] = db
        g[f"gamma{li}"][:] = dgamma
        g[f"beta{li}"][:] = dbeta
        if cfg.l2 > 0.0:
            g[f"w{li}"] += cfg.l2 * params.t[f"w{li}"]
    return grads
