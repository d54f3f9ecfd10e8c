"""Reduce-on-plateau learning-rate schedule.

The rate is multiplied by `factor` whenever the best loss seen so far has
not improved by more than `min_delta` for `patience` consecutive
observations; the stall counter resets on improvement and after each
reduction.
"""

from __future__ import annotations

import math


class PlateauScheduler:
    def __init__(self, lr: float, factor: float, patience: int, min_delta: float = 1e-6):
        if not 0.0 < factor < 1.0:
            raise ValueError(f"factor must be in (0,1), got {factor}")
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.wait = 0

    def update(self, value: float) -> bool:
        """Record one loss observation; True when a reduction fires."""
        if value < self.best - self.min_delta:
            self.best = value
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.lr *= self.factor
            self.wait = 0
            return True
        return False


def plateau_events(history, factor: float, patience: int, min_delta: float = 1e-6):
    """1-based indices of history entries at which a reduction fires."""
    sched = PlateauScheduler(1.0, factor, patience, min_delta)
    return [i for i, value in enumerate(history, start=1) if sched.update(value)]
