"""Linear learners with quadratic loss and L1 / L2 / elastic-net penalties.

All three learners minimize

    (1/n) sum_i 1/2 (w.x_i + b - y_i)^2 + lam * Omega(w)

with Omega(w) = rho*|w|_1 + (1-rho)/2*|w|_2^2 (rho = 1 for LASSO, rho = 0 for
ridge). The bias is never penalized. Because b only enters the loss, it is
profiled out exactly (b = mean(y) - mean(x).w) and coordinate descent runs on
the centered second-moment matrix. The attack module leans on this: swapping a
single training point is a rank-2 update of a handful of sums.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numba import njit

NONZERO_THRESHOLD = 1e-8


class ConvergenceError(RuntimeError):
    """Raised when the solver exhausts its iteration budget.

    Carries the best iterate and its KKT residual so callers can decide
    whether to keep going with it.
    """

    def __init__(self, message: str, model: "LinearModel", residual: float):
        super().__init__(message)
        self.model = model
        self.residual = residual


class Kind(str, enum.Enum):
    LASSO = "lasso"
    RIDGE = "ridge"
    ELASTIC_NET = "elastic_net"


@dataclass(frozen=True)
class Regularizer:
    kind: Kind
    rho: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.ELASTIC_NET:
            if self.rho is None or not 0.0 < self.rho < 1.0:
                raise ValueError(f"elastic net needs rho in (0, 1), got {self.rho}")
        elif self.rho is not None:
            raise ValueError(f"rho is only meaningful for elastic net, got kind={self.kind.value}")

    @classmethod
    def lasso(cls) -> "Regularizer":
        return cls(Kind.LASSO)

    @classmethod
    def ridge(cls) -> "Regularizer":
        return cls(Kind.RIDGE)

    @classmethod
    def elastic_net(cls, rho: float = 0.5) -> "Regularizer":
        return cls(Kind.ELASTIC_NET, rho)

    @classmethod
    def parse(cls, text: str) -> "Regularizer":
        """Parse ``lasso``, ``ridge``, ``elastic_net`` or ``elastic_net:0.3``."""
        name, _, rho = text.strip().lower().partition(":")
        kind = Kind(name)
        if kind is Kind.ELASTIC_NET:
            return cls(kind, float(rho) if rho else 0.5)
        if rho:
            raise ValueError(f"unexpected rho for {name}")
        return cls(kind)

    @property
    def l1_ratio(self) -> float:
        if self.kind is Kind.LASSO:
            return 1.0
        if self.kind is Kind.RIDGE:
            return 0.0
        return float(self.rho)

    @property
    def label(self) -> str:
        if self.kind is Kind.ELASTIC_NET:
            return f"elastic_net:{self.rho:g}"
        return self.kind.value

    def penalty(self, w: np.ndarray) -> float:
        a = self.l1_ratio
        return a * float(np.abs(w).sum()) + (1.0 - a) * 0.5 * float(w @ w)


@dataclass(frozen=True)
class LearnerConfig:
    regularizer: Regularizer
    lam: float
    max_iterations: int = 10_000
    tolerance: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def l1(self) -> float:
        return self.lam * self.regularizer.l1_ratio

    @property
    def l2(self) -> float:
        return self.lam * (1.0 - self.regularizer.l1_ratio)

    def with_lam(self, lam: float) -> "LearnerConfig":
        return LearnerConfig(self.regularizer, lam, self.max_iterations, self.tolerance)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus +/-1 labels.

    Features are expected in [0, 1] once normalized, but the range is not
    enforced here: the 2-D demo lives in a wider box. ``binary=False`` admits
    arbitrary real targets for using the learners as plain regressors.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] | None = None
    tag: str = field(default="", compare=False)
    binary: bool = field(default=True, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, max(X.size, 1))
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if X.shape[1] < 1:
            raise ValueError("need at least one feature")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if not np.all(np.isfinite(y)):
            raise ValueError("labels must be finite")
        if self.binary and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != X.shape[1]:
                raise ValueError("feature_names length does not match d")
            object.__setattr__(self, "feature_names", names)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, tag: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        if idx.size == 0:
            idx = idx.astype(int)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names,
                       self.tag if tag is None else tag, self.binary)

    def with_points(self, X, y, tag: str | None = None) -> "Dataset":
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        return Dataset(np.vstack([self.features, X]),
                       np.concatenate([self.labels, np.asarray(y, dtype=float).reshape(-1)]),
                       self.feature_names, self.tag if tag is None else tag, self.binary)


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)) or not np.isfinite(self.bias):
            raise ValueError("model parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "LinearModel":
        return cls(np.zeros(d), 0.0)


def decision(model: LinearModel, x) -> np.ndarray | float:
    """w.x + b for a single vector or row-wise for a matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d:
        raise ValueError(f"expected {model.d} features, got {x.shape[-1]}")
    out = x @ model.weights + model.bias
    return float(out) if np.ndim(out) == 0 else out


def classify(model: LinearModel, x) -> np.ndarray | float:
    """Sign of the decision value, with ties going to +1."""
    f = decision(model, x)
    return np.where(np.asarray(f) >= 0.0, 1.0, -1.0) if np.ndim(f) else (1.0 if f >= 0 else -1.0)


def _check_dims(data: Dataset, model: LinearModel) -> None:
    if data.d != model.d:
        raise ValueError(f"dataset has {data.d} features, model has {model.d}")


def objective(data: Dataset, model: LinearModel, config: LearnerConfig) -> float:
    _check_dims(data, model)
    if data.n == 0:
        raise ValueError("objective of an empty dataset")
    resid = data.features @ model.weights + model.bias - data.labels
    return 0.5 * float(resid @ resid) / data.n + config.lam * config.regularizer.penalty(model.weights)


def _kkt_components(grad_smooth: np.ndarray, w: np.ndarray, l1: float) -> np.ndarray:
    zero = np.abs(w) == 0.0
    res = np.abs(grad_smooth + l1 * np.sign(w))
    res[zero] = np.maximum(0.0, np.abs(grad_smooth[zero]) - l1)
    return res


def kkt_residual(data: Dataset, model: LinearModel, config: LearnerConfig) -> float:
    """Max-norm violation of the optimality conditions at ``model``.

    Zero weights only need the smooth gradient inside [-l1, l1]; nonzero
    weights and the bias need plain stationarity.
    """
    _check_dims(data, model)
    if data.n == 0:
        raise ValueError("kkt_residual of an empty dataset")
    resid = data.features @ model.weights + model.bias - data.labels
    grad = data.features.T @ resid / data.n + config.l2 * model.weights
    comp = _kkt_components(grad, model.weights, config.l1)
    return float(max(comp.max(), abs(resid.mean())))


@dataclass(frozen=True)
class GramStats:
    """Sufficient statistics of a dataset for the quadratic loss."""

    n: int
    sxx: np.ndarray
    sx: np.ndarray
    sxy: np.ndarray
    sy: float
    syy: float

    @classmethod
    def from_arrays(cls, X: np.ndarray, y: np.ndarray) -> "GramStats":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        return cls(X.shape[0], X.T @ X, X.sum(axis=0), X.T @ y, float(y.sum()), float(y @ y))

    @classmethod
    def from_data(cls, data: Dataset) -> "GramStats":
        return cls.from_arrays(data.features, data.labels)

    def __add__(self, other: "GramStats") -> "GramStats":
        return GramStats(self.n + other.n, self.sxx + other.sxx, self.sx + other.sx,
                         self.sxy + other.sxy, self.sy + other.sy, self.syy + other.syy)

    def __sub__(self, other: "GramStats") -> "GramStats":
        return GramStats(self.n - other.n, self.sxx - other.sxx, self.sx - other.sx,
                         self.sxy - other.sxy, self.sy - other.sy, self.syy - other.syy)

    def centered(self):
        """Return (C, c, xbar, ybar, var_y) for the bias-profiled problem."""
        n = self.n
        xbar = self.sx / n
        ybar = self.sy / n
        C = self.sxx / n - np.outer(xbar, xbar)
        c = self.sxy / n - xbar * ybar
        var_y = max(self.syy / n - ybar * ybar, 0.0)
        return C, c, xbar, ybar, var_y


@njit(cache=True, nogil=True)
def _coordinate_descent(C, c, l1, l2, w, max_iter, tol, hist, var_y):
    d = w.shape[0]
    Cw = C @ w
    n_hist = 0
    converged = False
    sweeps = 0
    for it in range(max_iter):
        sweeps = it + 1
        max_change = 0.0
        for j in range(d):
            wj = w[j]
            z = c[j] - Cw[j] + C[j, j] * wj
            denom = C[j, j] + l2
            if denom <= 0.0:
                new = 0.0
            elif z > l1:
                new = (z - l1) / denom
            elif z < -l1:
                new = (z + l1) / denom
            else:
                new = 0.0
            delta = new - wj
            if delta != 0.0:
                for k in range(d):
                    Cw[k] += C[k, j] * delta
                w[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        obj = 0.5 * var_y - c @ w + 0.5 * (w @ Cw) + l1 * np.abs(w).sum() + 0.5 * l2 * (w @ w)
        if n_hist < hist.shape[0]:
            hist[n_hist] = obj
            n_hist += 1
        if max_change < tol:
            # recompute from scratch to shed accumulated drift before trusting it
            Cw = C @ w
            worst = 0.0
            for j in range(d):
                g = Cw[j] - c[j] + l2 * w[j]
                if w[j] == 0.0:
                    r = abs(g) - l1
                elif w[j] > 0.0:
                    r = abs(g + l1)
                else:
                    r = abs(g - l1)
                if r > worst:
                    worst = r
            if worst <= tol:
                converged = True
                break
    return sweeps, n_hist, converged


def _profiled_objective(C, c, var_y, w, config: LearnerConfig) -> float:
    return float(0.5 * var_y - c @ w + 0.5 * w @ C @ w
                 + config.l1 * np.abs(w).sum() + 0.5 * config.l2 * w @ w)


def train_stats(stats: GramStats, config: LearnerConfig, warm_start: LinearModel | None = None,
                history: list | None = None) -> LinearModel:
    """Fit from sufficient statistics. See :func:`train`."""
    if stats.n < 1:
        raise ValueError("cannot train on an empty dataset")
    C, c, xbar, ybar, var_y = stats.centered()
    d = C.shape[0]
    w0 = np.zeros(d) if warm_start is None else np.array(warm_start.weights, dtype=float)
    if w0.shape[0] != d:
        raise ValueError(f"warm start has {w0.shape[0]} weights, data has {d} features")

    if config.regularizer.kind is Kind.RIDGE:
        w = scipy.linalg.solve(C + config.l2 * np.eye(d), c, assume_a="pos")
        if history is not None:
            history.extend([_profiled_objective(C, c, var_y, w0, config),
                            _profiled_objective(C, c, var_y, w, config)])
        return LinearModel(w, ybar - xbar @ w)

    w = np.ascontiguousarray(w0)
    hist = np.empty(config.max_iterations if history is not None else 0)
    start = _profiled_objective(C, c, var_y, w, config)
    sweeps, n_hist, converged = _coordinate_descent(
        np.ascontiguousarray(C), c, config.l1, config.l2, w,
        config.max_iterations, config.tolerance, hist, var_y)
    if history is not None:
        history.append(start)
        history.extend(hist[:n_hist].tolist())
    model = LinearModel(w, ybar - xbar @ w)
    if not converged:
        grad = C @ w - c + config.l2 * w
        residual = float(_kkt_components(grad, w, config.l1).max())
        raise ConvergenceError(
            f"coordinate descent did not converge in {sweeps} sweeps (residual {residual:.3g})",
            model, residual)
    return model


def train(data: Dataset, config: LearnerConfig, warm_start: LinearModel | None = None,
          history: list | None = None) -> LinearModel:
    """Minimize the penalized squared loss on ``data``.

    Args:
        data: training set.
        config: penalty kind, lam and solver tolerances.
        warm_start: initial weights; only changes how fast we get there.
        history: if given, objective values of every iterate are appended.

    Raises:
        ConvergenceError: max_iterations sweeps without meeting the tolerance.
    """
    return train_stats(GramStats.from_data(data), config, warm_start, history)


def lambda_max(data: Dataset, regularizer: Regularizer) -> float:
    """Smallest lam that zeroes every weight (L1 part); for ridge, a scale anchor."""
    if data.n == 0:
        raise ValueError("lambda_max of an empty dataset")
    yc = data.labels - data.labels.mean()
    corr = float(np.abs(data.features.T @ yc).max()) / data.n
    a = regularizer.l1_ratio
    if a > 0:
        return corr / a
    # ridge never reaches all-zero; anchor at 100x the largest feature variance
    var = data.features.var(axis=0).max()
    return float(100.0 * var) if var > 0 else 1.0


def lambda_grid(data: Dataset, regularizer: Regularizer, num: int = 50,
                ratio: float = 1e-3) -> list[float]:
    top = lambda_max(data, regularizer)
    if top <= 0:
        top = 1.0
    return np.geomspace(top, top * ratio, num).tolist()


def _fold_slices(n: int, folds: int) -> list[np.ndarray]:
    return np.array_split(np.arange(n), folds)


def select_lambda(data: Dataset, regularizer: Regularizer, grid: list[float] | None = None,
                  folds: int = 5, max_iterations: int = 10_000,
                  tolerance: float = 1e-8) -> tuple[float, list[tuple[float, float]]]:
    """Pick lam by k-fold cross-validated classification error.

    Folds are contiguous blocks in row order; shuffle beforehand if the rows
    are sorted. The path is traversed from the largest lam down with warm
    starts, and ties go to the larger lam.
    """
    if grid is None:
        grid = lambda_grid(data, regularizer)
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("empty lambda grid")
    if any(g <= 0 for g in grid):
        raise ValueError("lambda grid must be positive")
    if any(a <= b for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly descending")
    if folds < 2:
        raise ValueError("need at least two folds")
    if data.n < folds:
        raise ValueError(f"{data.n} samples cannot be split into {folds} folds")

    fold_errors = []
    for held_out in _fold_slices(data.n, folds):
        mask = np.ones(data.n, dtype=bool)
        mask[held_out] = False
        fit_on = data.subset(np.flatnonzero(mask))
        stats = GramStats.from_data(fit_on)
        Xv, yv = data.features[held_out], data.labels[held_out]
        model = None
        errors = []
        for lam in grid:
            config = LearnerConfig(regularizer, lam, max_iterations, tolerance)
            model = train_stats(stats, config, warm_start=model)
            errors.append(np.mean(classify(model, Xv) != yv))
        fold_errors.append(errors)
    cv_error = np.mean(fold_errors, axis=0)
    best = int(np.argmin(cv_error))  # first minimum = largest lam
    return grid[best], list(zip(grid, cv_error.tolist()))
