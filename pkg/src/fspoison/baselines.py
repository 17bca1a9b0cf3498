"""Random label-flip baseline."""

from __future__ import annotations

import numpy as np

from .attack import AttackState
from .learners import Dataset


def random_label_flip(data: Dataset, q: int, seed) -> AttackState:
    """Clone q training points uniformly (with replacement) and flip their labels."""
    if data.n == 0:
        raise ValueError("cannot clone points from an empty dataset")
    if q < 1:
        raise ValueError("q must be at least 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.n, size=q)
    state = AttackState(data.features[idx].copy(), -data.labels[idx])
    state.diagnostics["source_index"] = idx
    return state
