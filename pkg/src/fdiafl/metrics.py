"""Multilabel detection metrics, micro-aggregated over sample x location cells.

Predictions are probability > threshold (strict). Precision and recall are
count-based with degenerate denominators mapping to 0; micro accuracy is the
per-cell hit rate, and subset accuracy is the fraction of samples whose whole
label row is predicted exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    threshold: float
    subset_accuracy: float


def _validate(probs: np.ndarray, labels: np.ndarray, threshold: float):
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs labels {labels.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    return probs, labels


def confusion(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> ConfusionCounts:
    probs, labels = _validate(probs, labels, threshold)
    pred = probs > threshold
    truth = labels.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & truth)),
        fp=int(np.count_nonzero(pred & ~truth)),
        tn=int(np.count_nonzero(~pred & ~truth)),
        fn=int(np.count_nonzero(~pred & truth)),
    )


def precision(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0


def recall(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0


def f1(c: ConfusionCounts) -> float:
    p, r = precision(c), recall(c)
    return 2.0 * p * r / (p + r) if p + r else 0.0


def accuracy(c: ConfusionCounts) -> float:
    return (c.tp + c.tn) / c.total if c.total else 0.0


def subset_accuracy(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    probs, labels = _validate(probs, labels, threshold)
    pred = probs > threshold
    return float((pred == labels.astype(bool)).all(axis=1).mean())


def report(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> MetricReport:
    c = confusion(probs, labels, threshold)
    return MetricReport(
        accuracy=accuracy(c),
        precision=precision(c),
        recall=recall(c),
        f1=f1(c),
        threshold=threshold,
        subset_accuracy=subset_accuracy(probs, labels, threshold),
    )


def per_location_counts(
    probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5
) -> list[ConfusionCounts]:
    """One ConfusionCounts per measurement location (column)."""
    probs, labels = _validate(probs, labels, threshold)
    return [confusion(probs[:, j : j + 1], labels[:, j : j + 1], threshold)
            for j in range(probs.shape[1])]


def macro_report(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> MetricReport:
    """Per-location metrics averaged over locations (macro averaging)."""
    per = per_location_counts(probs, labels, threshold)
    mean = lambda fn: float(np.mean([fn(c) for c in per]))
    return MetricReport(
        accuracy=mean(accuracy),
        precision=mean(precision),
        recall=mean(recall),
        f1=mean(f1),
        threshold=threshold,
        subset_accuracy=subset_accuracy(probs, labels, threshold),
    )
