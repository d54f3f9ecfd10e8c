"""Flat parameter storage for the detector network.

All tensors live in one contiguous float64 vector with named views:
trainable tensors (weights, biases, batch-norm gain/shift) first, then the
batch-norm running statistics. The flat form makes optimizer updates,
federated aggregation, and checkpointing single-array operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    offset: int
    trainable: bool
    size: int


class ParamLayout:
    """Tensor table for an I -> hidden... -> I architecture."""

    def __init__(self, layer_sizes: tuple[int, ...]):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output widths")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.n_hidden = len(layer_sizes) - 2
        specs: list[TensorSpec] = []
        offset = 0

        def add(name, shape, trainable):
            nonlocal offset
            size = 1
            for dim in shape:
                size *= int(dim)
            specs.append(TensorSpec(name, tuple(shape), offset, trainable, size))
            offset += size

        for t in range(self.n_hidden):
            din, dout = self.layer_sizes[t], self.layer_sizes[t + 1]
            add(f"w{t}", (din, dout), True)
            add(f"b{t}", (dout,), True)
            add(f"gamma{t}", (dout,), True)
            add(f"beta{t}", (dout,), True)
        add("w_out", (self.layer_sizes[-2], self.layer_sizes[-1]), True)
        add("b_out", (self.layer_sizes[-1],), True)
        self.n_trainable = offset
        for t in range(self.n_hidden):
            dout = self.layer_sizes[t + 1]
            add(f"rmean{t}", (dout,), False)
            add(f"rvar{t}", (dout,), False)
        self.size = offset
        self.specs = tuple(specs)
        self.by_name = {s.name: s for s in specs}

    def views(self, vec: np.ndarray) -> dict[str, np.ndarray]:
        return {
            s.name: vec[s.offset : s.offset + s.size].reshape(s.shape)
            for s in self.specs
            if s.offset + s.size <= vec.size
        }

    def weight_names(self) -> list[str]:
        return [f"w{t}" for t in range(self.n_hidden)] + ["w_out"]


@lru_cache(maxsize=None)
def layout_for(layer_sizes: tuple[int, ...]) -> ParamLayout:
    return ParamLayout(layer_sizes)


class ModelParams:
    """All tensors of one model instance, backed by a flat vector."""

    def __init__(self, layer_sizes: tuple[int, ...], vec: np.ndarray | None = None):
        self.layout = layout_for(tuple(int(s) for s in layer_sizes))
        if vec is None:
            vec = np.zeros(self.layout.size)
        if vec.shape != (self.layout.size,):
            raise ValueError(
                f"flat vector length {vec.shape} does not match layout size {self.layout.size}"
            )
        self.vec = vec
        self.t = self.layout.views(vec)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return self.layout.layer_sizes

    @property
    def n_features(self) -> int:
        return self.layout.layer_sizes[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.layer_sizes, self.vec.copy())

    def trainable(self) -> np.ndarray:
        """View of the trainable block (weights, biases, BN gain/shift)."""
        return self.vec[: self.layout.n_trainable]

    def finite(self) -> bool:
        return bool(np.isfinite(self.vec).all())


class GradVector:
    """Gradient w.r.t. the trainable block; same naming as ModelParams."""

    def __init__(self, layout: ParamLayout, vec: np.ndarray | None = None):
        self.layout = layout
        self.vec = np.zeros(layout.n_trainable) if vec is None else vec
        self.t = layout.views(self.vec)


def init_params(layer_sizes: tuple[int, ...], rng: np.random.Generator) -> ModelParams:
    """He-style uniform fan-in init for weights; identity batch-norm."""
    params = ModelParams(tuple(layer_sizes))
    for name in params.layout.weight_names():
        w = params.t[name]
        bound = np.sqrt(6.0 / w.shape[0])
        w[:] = rng.uniform(-bound, bound, w.shape)
    for t in range(params.layout.n_hidden):
        params.t[f"gamma{t}"][:] = 1.0
        params.t[f"rvar{t}"][:] = 1.0
    return params
