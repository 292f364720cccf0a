"""Counter-based random streams.

Every stochastic component draws from a Philox generator keyed by
(seed, stream), so replicates and folds get independent substreams that are
reproducible regardless of scheduling or worker count.
"""

from __future__ import annotations

import numpy as np


def philox_rng(seed, stream=0):
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be nonnegative")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
