"""False-data injection attack construction and per-meter labels.

A stealthy attack adds a = Hc to the measurements for some state error c;
re-estimation then absorbs c into the state, leaving the residual (and hence
the chi-square detector) unchanged. Unstructured attacks corrupt a single
meter by a gross amount and are reliably caught by the residual test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import HMatrix

LABEL_EPS = 1e-6


@dataclass(frozen=True)
class StateError:
    """Sparse error injected into the estimated state."""

    c: np.ndarray
    support: tuple[int, ...]


def make_stealthy(h: HMatrix, c) -> np.ndarray:
    """Attack vector a = Hc; residual-invariant by construction."""
    vec = c.c if isinstance(c, StateError) else np.asarray(c, dtype=float)
    if vec.shape != (h.n_state,):
        raise ValueError(
            f"state error length {vec.shape} does not match state dimension {h.n_state}"
        )
    return h.values @ vec


def sample_state_error(
    rng: np.random.Generator, j: int, sparsity: int, magnitude: float
) -> StateError:
    """Random state error with ``sparsity`` nonzeros of magnitude in [m/2, m]."""
    if not 1 <= sparsity <= j:
        raise ValueError(f"sparsity must be in 1..{j}, got {sparsity}")
    if not magnitude > 0:
        raise ValueError(f"magnitude must be positive, got {magnitude}")
    support = np.sort(rng.choice(j, size=sparsity, replace=False))
    c = np.zeros(j)
    size = rng.uniform(magnitude / 2.0, magnitude, size=sparsity)
    sign = rng.choice((-1.0, 1.0), size=sparsity)
    c[support] = sign * size
    return StateError(c=c, support=tuple(int(k) for k in support))


def make_unstructured(
    rng: np.random.Generator, i: int, gross_sigma_mult: float, noise_sigma: float
) -> np.ndarray:
    """Single-meter gross error of +/- gross_sigma_mult * noise_sigma."""
    if i < 1:
        raise ValueError("need at least one measurement")
    a = np.zeros(i)
    meter = int(rng.integers(i))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    a[meter] = sign * gross_sigma_mult * noise_sigma
    return a


def label_of(a: np.ndarray, eps_label: float = LABEL_EPS) -> np.ndarray:
    """Per-meter compromise labels: bit i set iff |a_i| > eps_label."""
    if not eps_label > 0:
        raise ValueError(f"label threshold must be positive, got {eps_label}")
    return (np.abs(np.asarray(a, dtype=float)) > eps_label).astype(np.uint8)
