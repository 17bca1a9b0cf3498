import itertools

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from fspoison.learners import (
    ConvergenceError,
    Dataset,
    LearnerConfig,
    LinearModel,
    Regularizer,
    classify,
    decision,
    kkt_residual,
    lambda_grid,
    lambda_max,
    objective,
    select_lambda,
    train,
)

LASSO, RIDGE, ENET = Regularizer.lasso(), Regularizer.ridge(), Regularizer.elastic_net(0.5)


def numeric_minimum(data, config):
    """Independent oracle: split w = u - v (u, v >= 0) so the problem is smooth, then L-BFGS-B."""
    X, y, n, d = data.features, data.labels, data.n, data.d
    a, lam = config.regularizer.l1_ratio, config.lam

    def fun(z):
        u, v, b = z[:d], z[d:2 * d], z[-1]
        w = u - v
        r = X @ w + b - y
        f = 0.5 * r @ r / n + lam * (a * (u + v).sum() + (1 - a) * 0.5 * w @ w)
        gw = X.T @ r / n + lam * (1 - a) * w
        g = np.concatenate([gw + lam * a, -gw + lam * a, [r.mean()]])
        return f, g

    bounds = [(0, None)] * (2 * d) + [(None, None)]
    res = scipy.optimize.minimize(fun, np.zeros(2 * d + 1), jac=True, method="L-BFGS-B", bounds=bounds,
                                  options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000})
    return res.fun


# -- train -----------------------------------------------------------------

def test_lasso_above_lambda_max_is_all_zero(rng):
    data = random_dataset(rng, 30, 6)
    lam = lambda_max(data, LASSO)
    model = train(data, LearnerConfig(LASSO, lam * 1.0001))
    assert np.all(model.weights == 0)
    assert model.bias == pytest.approx(data.labels.mean(), abs=1e-12)


def test_ridge_hand_example(toy_ridge_data):
    # stationarity: w + 2b = 1 and 1.5w + b = 1  ->  w = 0.5, b = 0.25
    X, y = toy_ridge_data
    data = Dataset(X, y, binary=False)
    config = LearnerConfig(RIDGE, 0.25)
    model = train(data, config)
    assert model.weights[0] == pytest.approx(0.5, abs=1e-12)
    assert model.bias == pytest.approx(0.25, abs=1e-12)
    assert kkt_residual(data, model, config) <= 1e-10
    assert decision(model, [1.0]) == pytest.approx(0.75)
    assert classify(model, [1.0]) == 1.0


def test_lasso_pm_pair_at_threshold(pm_pair):
    config = LearnerConfig(LASSO, 0.5)
    assert lambda_max(pm_pair, LASSO) == pytest.approx(0.5)
    model = train(pm_pair, config)
    assert model.weights[0] == pytest.approx(0.0, abs=1e-12)
    assert model.bias == pytest.approx(0.0, abs=1e-12)
    # grid oracle over (w, b)
    ws = np.linspace(-1, 1, 401)
    bs = np.linspace(-1, 1, 401)
    W, B = np.meshgrid(ws, bs)
    vals = 0.5 * ((B + 1) ** 2 + (W + B - 1) ** 2) / 2 + 0.5 * np.abs(W)
    i = np.unravel_index(vals.argmin(), vals.shape)
    assert (W[i], B[i]) == pytest.approx((0.0, 0.0), abs=1e-12)


@pytest.mark.parametrize("reg", [LASSO, RIDGE, ENET], ids=lambda r: r.label)
def test_train_meets_kkt_contract(rng, reg):
    for _ in range(5):
        data = random_dataset(rng, int(rng.integers(5, 40)), int(rng.integers(1, 8)))
        config = LearnerConfig(reg, float(rng.uniform(0.001, 0.2)))
        model = train(data, config)
        assert kkt_residual(data, model, config) <= 10 * config.tolerance


@pytest.mark.parametrize("reg", [LASSO, RIDGE, ENET], ids=lambda r: r.label)
def test_train_matches_numeric_oracle(rng, reg):
    for _ in range(8):
        data = random_dataset(rng, int(rng.integers(4, 21)), int(rng.integers(1, 6)))
        config = LearnerConfig(reg, float(rng.uniform(0.005, 0.1)))
        model = train(data, config)
        assert objective(data, model, config) == pytest.approx(numeric_minimum(data, config), abs=1e-6)
        assert objective(data, model, config) <= numeric_minimum(data, config) + 1e-10


def test_ridge_matches_augmented_normal_equations(rng):
    for _ in range(10):
        n, d = int(rng.integers(3, 30)), int(rng.integers(1, 8))
        data = random_dataset(rng, n, d)
        lam = float(rng.uniform(0.01, 1.0))
        Xa = np.hstack([data.features, np.ones((n, 1))])
        P = np.diag([lam] * d + [0.0])
        theta = np.linalg.solve(Xa.T @ Xa / n + P, Xa.T @ data.labels / n)
        model = train(data, LearnerConfig(RIDGE, lam))
        got = np.append(model.weights, model.bias)
        assert np.max(np.abs(got - theta)) <= 1e-8


@pytest.mark.parametrize("reg", [LASSO, ENET], ids=lambda r: r.label)
def test_iterates_never_increase_objective(rng, reg):
    data = random_dataset(rng, 50, 10)
    history = []
    train(data, LearnerConfig(reg, 0.01), history=history)
    assert len(history) > 2
    assert np.all(np.diff(history) <= 1e-12)


def test_warm_start_changes_nothing_but_runtime(rng):
    data = random_dataset(rng, 60, 12)
    config = LearnerConfig(LASSO, 0.005)
    cold = train(data, config)
    warm = train(data, config, warm_start=LinearModel(rng.normal(size=12), 3.0))
    assert np.max(np.abs(cold.weights - warm.weights)) <= 1e-6
    assert train(data, config).weights.tolist() == cold.weights.tolist()


def test_non_convergence_carries_best_iterate(rng):
    data = random_dataset(rng, 40, 10)
    config = LearnerConfig(LASSO, 1e-4, max_iterations=1, tolerance=1e-14)
    with pytest.raises(ConvergenceError) as info:
        train(data, config)
    assert info.value.model.d == 10
    assert info.value.residual > 0


def test_lasso_support_shrinks_with_lambda_on_orthogonal_design():
    # with orthogonal centered columns each weight is an independent soft-threshold
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=float)
    X = (np.vstack([H, H])[:, 1:] + 1) / 2
    y = np.array([1, -1, 1, 1, -1, -1, 1, 1], dtype=float)
    data = Dataset(X, y)
    counts = []
    model = None
    for lam in lambda_grid(data, LASSO, 30, 1e-3):
        model = train(data, LearnerConfig(LASSO, lam), warm_start=model)
        counts.append(int(np.count_nonzero(np.abs(model.weights) > 1e-8)))
    assert counts == sorted(counts)
    assert counts[0] == 0 and counts[-1] == 3


def test_lasso_support_shrinks_with_lambda_random(rng):
    data = random_dataset(rng, 200, 8)
    counts = []
    model = None
    for lam in lambda_grid(data, LASSO, 40, 1e-3):
        model = train(data, LearnerConfig(LASSO, lam), warm_start=model)
        counts.append(int(np.count_nonzero(np.abs(model.weights) > 1e-8)))
    assert counts == sorted(counts)


# -- objective / kkt -------------------------------------------------------

def test_objective_examples(rng):
    data = Dataset(rng.random((5, 3)), np.ones(5))
    config = LearnerConfig(LASSO, 0.3)
    assert objective(data, LinearModel.zeros(3), config) == pytest.approx(0.5)
    assert objective(data, LinearModel(np.zeros(3), 1.0), config) == 0.0


def test_objective_ridge_hand_model(toy_ridge_data):
    X, y = toy_ridge_data
    data = Dataset(X, y, binary=False)
    direct = 0.5 * (0.25 ** 2 + (0.75 - 1) ** 2) / 2 + 0.25 * 0.5 * 0.25
    assert objective(data, LinearModel([0.5], 0.25), LearnerConfig(RIDGE, 0.25)) == pytest.approx(direct, abs=1e-12)


@given(st.floats(0.01, 0.99), st.floats(0.001, 2.0), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=50, deadline=None)
def test_elastic_net_objective_is_convex_combination(rho, lam, seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, 7, 3)
    model = LinearModel(rng.normal(size=3), float(rng.normal()))
    en = objective(data, model, LearnerConfig(Regularizer.elastic_net(rho), lam))
    la = objective(data, model, LearnerConfig(LASSO, lam))
    ri = objective(data, model, LearnerConfig(RIDGE, lam))
    assert en == pytest.approx(rho * la + (1 - rho) * ri, rel=1e-12, abs=1e-14)


def test_kkt_inside_subdifferential(pm_pair):
    # smooth gradient at w = b = 0 is -0.5; |-0.5| <= 0.6
    assert kkt_residual(pm_pair, LinearModel.zeros(1), LearnerConfig(LASSO, 0.6)) == 0.0
    assert kkt_residual(pm_pair, LinearModel.zeros(1), LearnerConfig(LASSO, 0.4)) == pytest.approx(0.1)


def test_kkt_positive_away_from_optimum(rng):
    data = random_dataset(rng, 20, 4)
    config = LearnerConfig(RIDGE, 0.1)
    model = train(data, config)
    moved = LinearModel(model.weights + 1e-3, model.bias)
    assert kkt_residual(data, moved, config) > 1e-5


def test_dimension_mismatch_rejected(pm_pair):
    with pytest.raises(ValueError):
        objective(pm_pair, LinearModel.zeros(2), LearnerConfig(LASSO, 0.1))
    with pytest.raises(ValueError):
        kkt_residual(pm_pair, LinearModel.zeros(2), LearnerConfig(LASSO, 0.1))
    with pytest.raises(ValueError):
        decision(LinearModel.zeros(2), [1.0, 2.0, 3.0])


# -- decision / classify ---------------------------------------------------

def test_decision_tie_goes_positive():
    assert decision(LinearModel.zeros(3), [0.2, 0.4, 0.9]) == 0.0
    assert classify(LinearModel.zeros(3), [0.2, 0.4, 0.9]) == 1.0
    m = LinearModel([1.0, -1.0], 0.0)
    assert decision(m, [0.5, 0.5]) == 0.0
    assert classify(m, [0.5, 0.5]) == 1.0
    assert classify(m, np.array([[0.5, 0.5], [0.0, 1.0]])).tolist() == [1.0, -1.0]


# -- select_lambda ---------------------------------------------------------

def test_select_lambda_single_entry(rng):
    data = random_dataset(rng, 20, 3)
    best, path = select_lambda(data, LASSO, [0.05], folds=4)
    assert best == 0.05 and len(path) == 1


def test_select_lambda_two_fold_matches_manual_folds():
    data = Dataset([[0.1, 0.9], [0.8, 0.3], [0.2, 0.7], [0.9, 0.1]], [-1, 1, -1, 1])
    grid = [0.3, 0.1, 0.01]
    best, path = select_lambda(data, LASSO, grid, folds=2)
    folds = [([2, 3], [0, 1]), ([0, 1], [2, 3])]
    expected = []
    for lam in grid:
        errs = []
        for fit_idx, val_idx in folds:
            model = train(data.subset(fit_idx), LearnerConfig(LASSO, lam))
            errs.append(np.mean(classify(model, data.features[val_idx]) != data.labels[val_idx]))
        expected.append(np.mean(errs))
    assert [e for _, e in path] == expected
    assert best == grid[int(np.argmin(expected))]


def test_select_lambda_prefers_larger_lambda_on_ties(rng):
    data = random_dataset(rng, 30, 2)
    # every lam above lambda_max gives the constant classifier, hence equal CV error
    top = lambda_max(data, LASSO)
    grid = [top * 4, top * 3, top * 2]
    best, path = select_lambda(data, LASSO, grid, folds=3)
    assert best == grid[0]


def test_select_lambda_blob_data():
    rng = np.random.default_rng(7)
    n = 60
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = np.clip(0.5 + 0.2 * y[:, None] * np.array([1, 1, 0, 0]) + 0.05 * rng.normal(size=(n, 4)), 0, 1)
    data = Dataset(X, y)
    grid = lambda_grid(data, LASSO, 20, 1e-3)
    best, path = select_lambda(data, LASSO, grid, folds=5)
    errs = dict(path)
    assert errs[best] <= errs[grid[0]]
    assert errs[best] == min(errs.values())


def test_select_lambda_rejects_bad_input(rng):
    data = random_dataset(rng, 3, 2)
    with pytest.raises(ValueError):
        select_lambda(data, LASSO, [0.1], folds=4)
    with pytest.raises(ValueError):
        select_lambda(data, LASSO, [0.1, 0.2], folds=2)
    with pytest.raises(ValueError):
        select_lambda(data, LASSO, [], folds=2)


def test_single_class_fold_is_well_defined():
    data = Dataset([[0.1], [0.2], [0.8], [0.9]], [1, 1, -1, -1])
    _, path = select_lambda(data, RIDGE, [1.0, 0.1], folds=2)
    for _, err in path:
        assert 0.0 <= err <= 1.0


# -- types -----------------------------------------------------------------

def test_regularizer_validation():
    with pytest.raises(ValueError):
        Regularizer.elastic_net(1.0)
    with pytest.raises(ValueError):
        Regularizer("lasso", 0.5)
    assert Regularizer.parse("elastic_net:0.3").rho == 0.3
    assert Regularizer.parse("ridge").l1_ratio == 0.0


@pytest.mark.parametrize("bad", [dict(lam=0.0), dict(lam=-1.0), dict(lam=1.0, tolerance=0.0)])
def test_learner_config_validation(bad):
    with pytest.raises(ValueError):
        LearnerConfig(LASSO, **bad)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset([[0.0], [1.0]], [0, 1])
    with pytest.raises(ValueError):
        Dataset([[0.0], [1.0]], [1])
    with pytest.raises(ValueError):
        Dataset([[np.nan]], [1])
    with pytest.raises(ValueError):
        LinearModel([np.inf], 0.0)


def test_train_is_deterministic(rng):
    data = random_dataset(rng, 40, 7)
    for reg in (LASSO, RIDGE, ENET):
        a = train(data, LearnerConfig(reg, 0.01))
        b = train(data, LearnerConfig(reg, 0.01))
        assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias


def test_kkt_zero_at_exact_lasso_optimum_for_all_sign_patterns():
    data = Dataset([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]], [1, -1, 1, -1])
    for lam in (0.01, 0.1, 0.2, 0.5):
        config = LearnerConfig(LASSO, lam)
        model = train(data, config)
        assert kkt_residual(data, model, config) <= 10 * config.tolerance
        for s in itertools.product([-1e-3, 1e-3], repeat=2):
            nudged = LinearModel(model.weights + np.array(s), model.bias)
            assert objective(data, nudged, config) >= objective(data, model, config) - 1e-12
