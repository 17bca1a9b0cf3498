"""Security metrics: test error, selected-feature counts and subset stability."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .learners import NONZERO_THRESHOLD, Dataset, LinearModel, classify


@dataclass(frozen=True)
class FeatureSubset:
    mask: np.ndarray
    padded: int = 0

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool).reshape(-1)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_indices(cls, indices, d: int) -> "FeatureSubset":
        mask = np.zeros(d, dtype=bool)
        mask[list(indices)] = True
        return cls(mask)

    @property
    def k(self) -> int:
        return int(self.mask.sum())

    @property
    def d(self) -> int:
        return self.mask.shape[0]

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


@dataclass(frozen=True)
class StabilityReport:
    k: int
    mean_index: float
    std_index: float
    pair_count: int
    padded: int = 0


def classification_error(model: LinearModel, data: Dataset) -> float:
    if data.n == 0:
        raise ValueError("classification error of an empty dataset")
    return float(np.mean(classify(model, data.features) != data.labels))


def selected_features(model: LinearModel, threshold: float = NONZERO_THRESHOLD) -> FeatureSubset:
    return FeatureSubset(np.abs(model.weights) > threshold)


def top_k(model: LinearModel, k: int) -> FeatureSubset:
    """The k largest |w_j|, ties to the lower index.

    Exactly-zero weights are still eligible so the subset always has k
    members; how many of them were zeros is kept in ``padded``.
    """
    d = model.d
    if not 0 < k < d:
        raise ValueError(f"k must satisfy 0 < k < d={d}, got {k}")
    order = np.argsort(-np.abs(model.weights), kind="stable")[:k]
    subset = FeatureSubset.from_indices(order, d)
    padded = int(np.count_nonzero(model.weights[order] == 0.0))
    return FeatureSubset(subset.mask, padded)


def kuncheva_index(a: FeatureSubset, b: FeatureSubset) -> float:
    """Chance-corrected overlap (r*d - k^2) / (k*(d - k)) of two equal-size subsets."""
    if a.d != b.d:
        raise ValueError(f"subsets live in different spaces ({a.d} vs {b.d} features)")
    k, d = a.k, a.d
    if b.k != k:
        raise ValueError(f"subset sizes differ ({k} vs {b.k})")
    if not 0 < k < d:
        raise ValueError(f"index undefined for k={k}, d={d}")
    r = int(np.count_nonzero(a.mask & b.mask))
    return (r * d - k * k) / (k * (d - k))


def average_pairwise_stability(clean: list[FeatureSubset],
                               attacked: list[FeatureSubset]) -> StabilityReport:
    """Mean and std of the index over every (clean, attacked) pair."""
    if not clean or not attacked:
        raise ValueError("both subset lists must be nonempty")
    ks = {s.k for s in itertools.chain(clean, attacked)}
    ds = {s.d for s in itertools.chain(clean, attacked)}
    if len(ks) != 1 or len(ds) != 1:
        raise ValueError(f"mixed subset sizes {sorted(ks)} or dimensions {sorted(ds)}")
    values = np.array([kuncheva_index(a, b) for a, b in itertools.product(clean, attacked)])
    return StabilityReport(k=ks.pop(), mean_index=float(values.mean()), std_index=float(values.std()),
                           pair_count=len(values),
                           padded=sum(s.padded for s in itertools.chain(clean, attacked)))
