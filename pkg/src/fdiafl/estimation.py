"""Weighted least-squares state estimation and chi-square bad-data detection.

The estimator solves the normal equations of min_v [y - Hv]' W [y - Hv] by
Cholesky factorization (falling back to pivoted LU if the factorization
fails). The bad-data statistic is the noise-normalized residual r' W r,
which under Gaussian noise with W = diag(1/sigma^2) follows a chi-square
distribution with I - J degrees of freedom; the unweighted ||r||^2 is also
exposed for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .grid import HMatrix


class EstimationError(RuntimeError):
    """Raised when the normal equations cannot be solved."""


def weight_vector(sigma: float, n_measurements: int) -> np.ndarray:
    """Diagonal of W for homogeneous noise: 1/sigma^2 per measurement."""
    if not sigma > 0:
        raise ValueError(f"noise sigma must be positive, got {sigma}")
    return np.full(n_measurements, 1.0 / sigma**2)


class WlsSolver:
    """Precomputed WLS gain for repeated estimates against a fixed H and W."""

    def __init__(self, h: HMatrix, w_diag: np.ndarray):
        w_diag = np.asarray(w_diag, dtype=float)
        if w_diag.shape != (h.n_measurements,):
            raise ValueError("weight vector length must match measurement count")
        if np.any(w_diag <= 0):
            raise ValueError("weights must be strictly positive")
        self.h = h
        self.w_diag = w_diag
        hw = h.values.T * w_diag  # J x I
        normal = hw @ h.values
        try:
            chol = np.linalg.cholesky(normal)
            z = np.linalg.solve(chol, hw)
            self.gain = np.linalg.solve(chol.T, z)  # J x I, (H'WH)^-1 H'W
        except np.linalg.LinAlgError:
            try:
                self.gain = np.linalg.solve(normal, hw)
            except np.linalg.LinAlgError:
                rank = np.linalg.matrix_rank(normal)
                raise EstimationError(
                    f"estimation failed: rank {rank} normal matrix of size {normal.shape[0]}"
                )

    def estimate(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.h.n_measurements,):
            raise ValueError("measurement vector length mismatch")
        return self.gain @ y

    def estimate_many(self, ys: np.ndarray) -> np.ndarray:
        """Row-wise estimates for an N x I batch of measurement vectors."""
        return np.asarray(ys, dtype=float) @ self.gain.T

    def weighted_residual_many(self, ys: np.ndarray) -> np.ndarray:
        """r' W r for every row of an N x I batch."""
        ys = np.asarray(ys, dtype=float)
        resid = ys - self.estimate_many(ys) @ self.h.values.T
        return (resid**2 * self.w_diag).sum(axis=1)


def wls_estimate(h: HMatrix, w_diag: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Unique minimizer of the weighted squared-residual objective."""
    return WlsSolver(h, w_diag).estimate(y)


def residual_norm_sq(y: np.ndarray, h: HMatrix, v_hat: np.ndarray) -> float:
    """Unweighted ||y - H v_hat||^2."""
    y = np.asarray(y, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    if y.shape != (h.n_measurements,) or v_hat.shape != (h.n_state,):
        raise ValueError("dimension mismatch between y, H, and v_hat")
    r = y - h.values @ v_hat
    return float(r @ r)


def weighted_residual_norm_sq(
    y: np.ndarray, h: HMatrix, v_hat: np.ndarray, w_diag: np.ndarray
) -> float:
    """Noise-normalized r' W r; this is the chi-square test statistic."""
    y = np.asarray(y, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    w_diag = np.asarray(w_diag, dtype=float)
    if y.shape != (h.n_measurements,) or v_hat.shape != (h.n_state,):
        raise ValueError("dimension mismatch between y, H, and v_hat")
    r = y - h.values @ v_hat
    return float(r @ (w_diag * r))


def _chi2_cdf(x: float, dof: int) -> float:
    return float(gammainc(dof / 2.0, x / 2.0))


def compute_threshold(significance: float, dof: int) -> float:
    """(1 - significance) chi-square quantile by bisection on the CDF."""
    if not 0 < significance < 1:
        raise ValueError(f"significance must be in (0,1), got {significance}")
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    target = 1.0 - significance
    lo, hi = 0.0, float(dof) + 10.0
    while _chi2_cdf(hi, dof) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _chi2_cdf(mid, dof) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(hi, 1.0):
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BddConfig:
    """Chi-square bad-data test: flag when r' W r exceeds the threshold."""

    significance: float
    degrees_of_freedom: int
    threshold: float

    @classmethod
    def from_significance(cls, significance: float, dof: int) -> "BddConfig":
        return cls(significance, dof, compute_threshold(significance, dof))


def bdd_test(r_sq: float, cfg: BddConfig) -> bool:
    """True iff the statistic strictly exceeds the threshold."""
    if r_sq < 0:
        raise ValueError(f"residual statistic must be non-negative, got {r_sq}")
    return r_sq > cfg.threshold
