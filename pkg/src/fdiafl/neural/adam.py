"""Bias-corrected Adam over the flat trainable block."""

from __future__ import annotations

import numpy as np

from .backend import kernels as K
from .net import TrainConfig
from .params import GradVector, ModelParams


class AdamState:
    def __init__(self, n_trainable: int):
        self.m = np.zeros(n_trainable)
        self.v = np.zeros(n_trainable)
        self.step = 0


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(params.layout.n_trainable)


def adam_step(
    params: ModelParams, grads: GradVector, state: AdamState, cfg: TrainConfig,
    lr: float | None = None,
) -> tuple[ModelParams, AdamState]:
    """Advance one step in place; returns (params, state) for chaining."""
    state.step += 1
    K.adam_update(
        params.trainable(), grads.vec, state.m, state.v,
        state.step, cfg.lr if lr is None else lr, cfg.beta1, cfg.beta2, cfg.eps_adam,
    )
    return params, state
