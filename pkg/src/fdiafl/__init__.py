"""Stealthy false-data injection simulation and federated multilabel detection.

Pipeline: build the DC measurement model of a bus system, generate noisy
load scenarios, inject residual-invariant attacks, and train an MLP detector
across simulated edge servers with data-size-weighted aggregation.
"""

__version__ = "0.1.0"
