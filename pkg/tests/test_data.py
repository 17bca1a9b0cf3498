import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fspoison.data import (
    CSVFormatError,
    RawDataset,
    SplitSpec,
    load_csv,
    normalize,
    sample_splits,
    save_csv,
    synthetic_gaussians_2d,
    synthetic_sparse_linear,
)
from fspoison.learners import LearnerConfig, Regularizer, lambda_grid, select_lambda, train
from fspoison.metrics import FeatureSubset, kuncheva_index, top_k


def test_normalize_examples():
    raw = RawDataset([[0, 10, 20], [25, 3, 1]], [1, -1])
    assert normalize(raw).features.tolist() == [[0.0, 0.5, 1.0], [1.0, 0.15, 0.05]]
    assert normalize(raw, cap=10).features[0].tolist() == [0.0, 1.0, 1.0]


@given(arrays(float, (4, 3), elements=st.floats(0, 100)))
def test_normalize_range_and_idempotence(X):
    once = normalize(RawDataset(X, [1, -1, 1, -1]))
    assert np.all((once.features >= 0) & (once.features <= 1))
    twice = normalize(RawDataset(once.features, once.labels), cap=1.0)
    assert np.array_equal(twice.features, once.features)


def test_normalize_rejects_bad_cap():
    with pytest.raises(ValueError):
        normalize(RawDataset([[1.0]], [1]), cap=0)


def test_raw_dataset_validation():
    for X, y in (([[-1.0]], [1]), ([[np.inf]], [1]), ([[1.0]], [0]), ([[1.0], [2.0]], [1])):
        with pytest.raises(ValueError):
            RawDataset(X, y)


def write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_load_csv_fixture(tmp_path):
    raw = load_csv(write(tmp_path, "a,label,b\n1,1,0\n3.5,-1,2\n\n"))
    assert raw.feature_names == ("a", "b")
    assert raw.features.tolist() == [[1.0, 0.0], [3.5, 2.0]]
    assert raw.labels.tolist() == [1.0, -1.0]


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("a,b\n1,2\n", "no 'label'"),
    ("a,label\n1,0\n", r":2: label must be"),
    ("a,label\n1,1\n2\n", r":3: expected 2 cells"),
    ("a,label\nx,1\n", r":2: column 'a' is not numeric"),
    ("a,label\n-1,1\n", r"column 'a' is negative"),
    ("a,label\nnan,1\n", "not finite"),
])
def test_load_csv_errors(tmp_path, text, match):
    with pytest.raises(CSVFormatError, match=match):
        load_csv(write(tmp_path, text))


def test_csv_round_trip(tmp_path, rng):
    raw = RawDataset(rng.random((7, 4)) * 30, np.where(rng.random(7) < 0.5, 1, -1), ("w", "x", "y", "z"))
    save_csv(raw, tmp_path / "r.csv")
    back = load_csv(tmp_path / "r.csv")
    assert np.array_equal(back.features, raw.features)
    assert np.array_equal(back.labels, raw.labels)
    assert back.feature_names == raw.feature_names


def test_splits_disjoint_and_sized():
    n = 200
    raw = RawDataset(np.arange(n, dtype=float)[:, None].repeat(2, axis=1), np.where(np.arange(n) % 2, 1, -1))
    spec = SplitSpec(train_size=50, surrogate_size=30, test_size=100, runs=3, seed=4)
    splits = sample_splits(raw, spec, cap=1000.0)
    assert len(splits) == 3
    for run, (tr, sg, te) in enumerate(splits):
        assert (tr.n, sg.n, te.n) == (50, 30, 100)
        assert (tr.tag, sg.tag, te.tag) == (f"train/{run}", f"surrogate/{run}", f"test/{run}")
        ids = [set((s.features[:, 0] * 1000).round().astype(int)) for s in (tr, sg, te)]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert not np.array_equal(splits[0][0].features, splits[1][0].features)
    again = sample_splits(raw, spec, cap=1000.0)
    assert np.array_equal(again[2][2].features, splits[2][2].features)


def test_splits_need_enough_samples():
    raw = RawDataset(np.ones((10, 1)), np.ones(10))
    with pytest.raises(ValueError, match="needs"):
        sample_splits(raw, SplitSpec(5, 5, 5, 1))


def test_gaussians_statistics():
    data = synthetic_gaussians_2d(4000, seed=1)
    pos, neg = data.features[data.labels > 0], data.features[data.labels < 0]
    assert data.labels[:4000].tolist() == [1.0] * 4000
    assert np.allclose(pos.mean(axis=0), [1, 1], atol=0.05)
    assert np.allclose(neg.mean(axis=0), [-1, -1], atol=0.05)
    assert np.allclose(np.cov(pos.T), 0.5 * np.eye(2), atol=0.05)


def test_gaussians_clip_and_validation():
    data = synthetic_gaussians_2d(50, seed=0, clip=(-0.5, 0.5))
    assert data.features.min() >= -0.5 and data.features.max() <= 0.5
    with pytest.raises(ValueError):
        synthetic_gaussians_2d(5, covariances=[np.eye(2), -np.eye(2)])


@pytest.mark.parametrize("seed", range(3))
def test_sparse_linear_support_is_recoverable(seed):
    data, support = synthetic_sparse_linear(1000, d=40, k_relevant=5, seed=seed)
    reg = Regularizer.lasso()
    lam, _ = select_lambda(data, reg, lambda_grid(data, reg, num=20))
    model = train(data, LearnerConfig(reg, lam))
    assert kuncheva_index(top_k(model, 5), FeatureSubset.from_indices(support, 40)) > 0.8


@pytest.mark.parametrize("features", ["uniform", "counts"])
def test_sparse_linear_shape_and_determinism(features):
    a, sa = synthetic_sparse_linear(300, d=20, k_relevant=4, noise=0.2, seed=9, features=features)
    b, sb = synthetic_sparse_linear(300, d=20, k_relevant=4, noise=0.2, seed=9, features=features)
    assert a.features.shape == (300, 20) and len(sa) == 4
    assert np.all((a.features >= 0) & (a.features <= 1))
    assert set(np.unique(a.labels)) == {-1.0, 1.0}
    assert np.array_equal(a.features, b.features) and np.array_equal(sa, sb)


def test_sparse_linear_rejects():
    with pytest.raises(ValueError):
        synthetic_sparse_linear(10, d=3, k_relevant=4)
    with pytest.raises(ValueError):
        synthetic_sparse_linear(10, features="gaussian")
