"""Loading, normalizing, splitting and synthesizing datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .learners import Dataset

LABEL_COLUMN = "label"


class CSVFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RawDataset:
    """Unnormalized nonnegative features (e.g. keyword counts) and +/-1 labels."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"bad shapes: features {X.shape}, labels {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("raw features must be finite")
        if np.any(X < 0):
            raise ValueError("raw features must be nonnegative")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    train_size: int = 300
    test_size: int = 5000
    surrogate_size: int = 300
    runs: int = 5
    seed: int = 0

    def __post_init__(self):
        if min(self.train_size, self.test_size, self.surrogate_size, self.runs) < 1:
            raise ValueError("split sizes and runs must be positive")

    @property
    def total(self) -> int:
        return self.train_size + self.test_size + self.surrogate_size


def normalize(raw: RawDataset, cap: float = 20.0) -> Dataset:
    """Clip each value at ``cap`` and divide by it."""
    if not cap > 0:
        raise ValueError("cap must be positive")
    X = np.asarray(raw.features, dtype=float)
    if np.any(X < 0):
        raise ValueError("cannot normalize negative values")
    return Dataset(np.minimum(X, cap) / cap, raw.labels, raw.feature_names)


def load_csv(path) -> RawDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVFormatError(f"{path}: empty file") from None
        if LABEL_COLUMN not in header:
            raise CSVFormatError(f"{path}: no '{LABEL_COLUMN}' column in header")
        li = header.index(LABEL_COLUMN)
        names = [h for i, h in enumerate(header) if i != li]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CSVFormatError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            values = []
            for i, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise CSVFormatError(
                        f"{path}:{lineno}: column '{header[i]}' is not numeric: {cell!r}") from None
                if not np.isfinite(v):
                    raise CSVFormatError(f"{path}:{lineno}: column '{header[i]}' is not finite")
                if i == li:
                    if v not in (-1.0, 1.0):
                        raise CSVFormatError(f"{path}:{lineno}: label must be -1 or +1, got {cell!r}")
                    labels.append(v)
                else:
                    if v < 0:
                        raise CSVFormatError(f"{path}:{lineno}: column '{header[i]}' is negative")
                    values.append(v)
            rows.append(values)
    X = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return RawDataset(X, np.array(labels), tuple(names))


def save_csv(data: RawDataset | Dataset, path) -> None:
    """Write with ``%.17g`` so that load_csv reads back identical floats."""
    names = data.feature_names or tuple(f"f{j}" for j in range(data.features.shape[1]))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, LABEL_COLUMN])
        for x, y in zip(data.features, data.labels):
            writer.writerow([*("%.17g" % v for v in x), "%d" % y])


def sample_splits(raw: RawDataset, spec: SplitSpec, cap: float = 20.0) -> list[tuple[Dataset, Dataset, Dataset]]:
    """Draw ``runs`` independent (train, surrogate, test) triples.

    Within a run the three index sets are disjoint; across runs they are
    drawn independently from the whole pool.
    """
    if spec.total > raw.n:
        raise ValueError(f"split needs {spec.total} samples, only {raw.n} available")
    data = normalize(raw, cap)
    out = []
    for run in range(spec.runs):
        rng = np.random.default_rng([spec.seed, run])
        perm = rng.permutation(raw.n)
        tr = perm[:spec.train_size]
        sg = perm[spec.train_size:spec.train_size + spec.surrogate_size]
        te = perm[spec.train_size + spec.surrogate_size:spec.total]
        out.append((data.subset(tr, tag=f"train/{run}"),
                    data.subset(sg, tag=f"surrogate/{run}"),
                    data.subset(te, tag=f"test/{run}")))
    return out


def synthetic_gaussians_2d(n_per_class: int, means=((1.0, 1.0), (-1.0, -1.0)),
                           covariances=None, seed=0, clip: tuple[float, float] | None = None) -> Dataset:
    """Two Gaussian blobs: the first mean is the +1 class, the second the -1 class."""
    if n_per_class < 0:
        raise ValueError("n_per_class must be nonnegative")
    means = [np.asarray(m, dtype=float) for m in means]
    if covariances is None:
        covariances = [np.eye(2) * 0.5, np.eye(2) * 0.5]
    covariances = [np.asarray(c, dtype=float) for c in covariances]
    for c in covariances:
        if c.shape != (2, 2) or not np.allclose(c, c.T) or np.any(np.linalg.eigvalsh(c) <= 0):
            raise ValueError("covariances must be symmetric positive definite 2x2 matrices")
    rng = np.random.default_rng(seed)
    pos = rng.multivariate_normal(means[0], covariances[0], size=n_per_class)
    neg = rng.multivariate_normal(means[1], covariances[1], size=n_per_class)
    X = np.vstack([pos, neg]).reshape(-1, 2)
    if clip is not None:
        X = np.clip(X, *clip)
    y = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class)])
    return Dataset(X, y, ("x1", "x2"))


def synthetic_sparse_linear(n: int, d: int = 114, k_relevant: int = 10, noise: float = 0.0,
                            seed=0, features: str = "uniform", cap: float = 20.0) -> tuple[Dataset, np.ndarray]:
    """Features in [0, 1] labeled by a sparse hyperplane.

    ``features="uniform"`` draws each value from U[0, 1]. ``features="counts"``
    mimics keyword counts: feature j is Poisson with a rate drawn log-uniformly
    in [0.05, 10], clipped at ``cap`` and divided by it, so most features are
    sparse and a few are dense. Labels are sign(w*.(x - E[x]) + noise * N(0, s))
    with w* supported on ``k_relevant`` random coordinates (magnitudes in
    [0.5, 1.5], random signs) and s the standard deviation of the noiseless
    score. Returns the dataset and the sorted true support.
    """
    if n < 1 or d < 1 or not 1 <= k_relevant <= d or noise < 0:
        raise ValueError("need n >= 1, d >= 1, 1 <= k_relevant <= d, noise >= 0")
    if features not in ("uniform", "counts"):
        raise ValueError(f"unknown feature distribution {features!r}")
    rng = np.random.default_rng(seed)
    support = np.sort(rng.choice(d, size=k_relevant, replace=False))
    w = np.zeros(d)
    w[support] = rng.uniform(0.5, 1.5, k_relevant) * rng.choice([-1.0, 1.0], k_relevant)
    if features == "uniform":
        X = rng.random((n, d))
        center = np.full(d, 0.5)
    else:
        rates = np.exp(rng.uniform(np.log(0.05), np.log(10.0), d))
        X = np.minimum(rng.poisson(rates, size=(n, d)), cap) / cap
        center = X.mean(axis=0)
    score = (X - center) @ w
    scale = score.std() if n > 1 and score.std() > 0 else 1.0
    score = score + noise * scale * rng.standard_normal(n)
    y = np.where(score >= 0, 1.0, -1.0)
    return Dataset(X, y, tuple(f"f{j}" for j in range(d))), support
