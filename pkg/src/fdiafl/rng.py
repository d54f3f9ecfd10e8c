"""Seeded random streams.

All randomness in the package flows from one master seed. Components draw
from named substreams so that, e.g., changing how many attack vectors are
sampled never perturbs the model initialization.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path) -> np.random.Generator:
    """Return an independent generator derived from ``seed`` and a label path.

    ``path`` elements may be strings or integers; the same (seed, path) pair
    always yields the same stream, and distinct paths yield statistically
    independent streams.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for part in path:
        if isinstance(part, str):
            entropy.extend(part.encode("utf-8"))
        else:
            entropy.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
