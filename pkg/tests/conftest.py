"""Shared test helpers: definition-level oracles and random instances.

The oracles evaluate the statistics straight from their definitions with
per-step risk-set scans (O(n^2 p)), independently of the production sweep:
no suffix sums, no telescoped integrals.
"""

import numpy as np
import pytest

from hazscreen.data import SurvivalDataset, _dataset_unchecked


def naive_statistics(times, events, Z, tau):
    """d, D, B from the definitions; clamps beyond-horizon rows itself."""
    times = np.asarray(times, dtype=np.float64).copy()
    events = np.asarray(events, dtype=bool).copy()
    Z = np.asarray(Z, dtype=np.float64)
    late = times > tau
    times[late] = tau
    events[late] = False
    n, p = Z.shape
    d = np.zeros(p)
    D = np.zeros((p, p))
    B = np.zeros((p, p))
    prev = 0.0
    for u in np.unique(times):
        at_risk = times >= u
        zbar = Z[at_risk].mean(axis=0)
        dev_risk = Z[at_risk] - zbar
        D += (u - prev) * (dev_risk.T @ dev_risk)
        for i in np.flatnonzero((times == u) & events):
            dev = Z[i] - zbar
            d += dev
            B += np.outer(dev, dev)
        prev = u
    return d / n, D / n, B / n


def random_instance(rng, n_max=60, p_max=8, tau_override=False):
    """Raw (times, events, Z, tau) with ties and censoring."""
    n = int(rng.integers(5, n_max + 1))
    p = int(rng.integers(1, p_max + 1))
    # A coarse grid forces ties; mix of deaths and censorings.
    times = rng.integers(1, max(3, n // 2), size=n) / 2.0
    events = rng.random(n) < 0.7
    if not events.any():
        events[int(rng.integers(0, n))] = True
    Z = rng.standard_normal((n, p))
    tau = float(np.quantile(times, 0.8)) if tau_override else float(times.max())
    if tau_override and not (events & (times <= tau)).any():
        tau = float(times.max())
    return times, events, Z, tau


def raw_dataset(times, events, Z, tau=None):
    """Dataset carrying the exact feature values given (no re-scaling)."""
    return _dataset_unchecked(times, events, Z, tau=tau)


def standardized_dataset(rng, n=40, p=4, tau=None):
    times, events, Z, _ = random_instance(rng, n_max=n, p_max=p)
    return SurvivalDataset.from_arrays(times, events, Z, tau=tau)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
