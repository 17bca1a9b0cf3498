"""Gradient-based poisoning of LASSO / ridge / elastic net.

The attacker maximizes the learner's own penalized loss on clean data it
controls (the training set under perfect knowledge, a surrogate otherwise),
while the learner is refit on that data plus the attack points. The gradient
with respect to one attack point follows from differentiating the learner's
stationarity conditions, which keeps (w, b) on the optimum as x_c moves.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .learners import (
    ConvergenceError,
    Dataset,
    GramStats,
    Kind,
    LearnerConfig,
    LinearModel,
    kkt_residual,
    train_stats,
)

log = logging.getLogger(__name__)

DAMPING = 1e-9


class AttackError(RuntimeError):
    """The inner learner failed while the attack was running."""


@dataclass(frozen=True)
class AttackConfig:
    """Knobs of the projected ascent.

    ``step_size`` scales the gradient before projection; with
    ``normalize=True`` the gradient is first scaled to unit length, which
    keeps the first trial step meaningful when |grad W| is of order 1/n.
    """

    beta: float = 0.5
    sigma: float = 1e-4
    epsilon: float = 1e-6
    box: tuple = (0.0, 1.0)
    max_outer_iterations: int = 500
    max_linesearch_steps: int = 20
    step_size: float = 1.0
    normalize: bool = False
    warm_start: bool = True
    discrete: bool = False
    discrete_step: float = 0.05
    top_t: int | None = None

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.sigma <= 0 or self.epsilon <= 0 or self.step_size <= 0:
            raise ValueError("sigma, epsilon and step_size must be positive")
        if self.max_outer_iterations < 1 or self.max_linesearch_steps < 1:
            raise ValueError("iteration caps must be positive")
        if self.discrete_step <= 0:
            raise ValueError("discrete_step must be positive")
        if self.top_t is not None and self.top_t < 1:
            raise ValueError("top_t must be positive")
        lo, hi = self.box
        if np.any(np.asarray(lo, dtype=float) > np.asarray(hi, dtype=float)):
            raise ValueError("box lower bound exceeds upper bound")

    def bounds(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.box
        return (np.broadcast_to(np.asarray(lo, dtype=float), (d,)).copy(),
                np.broadcast_to(np.asarray(hi, dtype=float), (d,)).copy())


@dataclass
class AttackState:
    points: np.ndarray
    labels: np.ndarray
    model: LinearModel | None = None
    objective_history: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    trajectory: list[tuple[int, np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.array(self.points, dtype=float, ndmin=2)
        self.labels = np.array(self.labels, dtype=float).reshape(-1)
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels disagree in length")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("attack labels must be -1 or +1")

    @property
    def q(self) -> int:
        return self.points.shape[0]


def project_box(x, box) -> np.ndarray:
    lo, hi = box
    return np.clip(np.asarray(x, dtype=float), lo, hi)


def attacker_objective(surrogate: Dataset, model: LinearModel, config: LearnerConfig) -> float:
    """Mean half squared error on the attacker's clean points plus the penalty."""
    if surrogate.d != model.d:
        raise ValueError(f"dataset has {surrogate.d} features, model has {model.d}")
    resid = surrogate.features @ model.weights + model.bias - surrogate.labels
    return 0.5 * float(resid @ resid) / surrogate.n + config.lam * config.regularizer.penalty(model.weights)


def _smooth_gradient(stats: GramStats, w: np.ndarray, b: float) -> np.ndarray:
    return (stats.sxx @ w + b * stats.sx - stats.sxy) / stats.n


def _subgradient_from_grad(grad: np.ndarray, w: np.ndarray, config: LearnerConfig) -> np.ndarray:
    kind = config.regularizer.kind
    if kind is Kind.RIDGE:
        return np.array(w, dtype=float)
    rho = config.regularizer.l1_ratio
    # stationarity: grad + lam*(rho*sub + (1-rho)*w) = 0
    sub = -(grad / config.lam + (1.0 - rho) * w) / rho
    active = w != 0.0
    sub[active] = np.sign(w[active])
    return rho * sub + (1.0 - rho) * w


def optimal_subgradient(poisoned: Dataset, model: LinearModel, config: LearnerConfig,
                        max_residual: float | None = None) -> np.ndarray:
    """The penalty (sub)gradient r pinned down by stationarity at the optimum.

    Ridge gives r = w. For the L1 part the sign is used on active weights and
    the stationarity identity on zero weights.

    Raises:
        ValueError: ``model`` violates the KKT conditions by more than
            ``max_residual`` (default 1e3 * tolerance).
    """
    if max_residual is None:
        max_residual = 1e3 * config.tolerance
    res = kkt_residual(poisoned, model, config)
    if res > max_residual:
        raise ValueError(f"model is not optimal on this data (KKT residual {res:.3g} > {max_residual:.3g})")
    stats = GramStats.from_data(poisoned)
    grad = _smooth_gradient(stats, model.weights, model.bias)
    return _subgradient_from_grad(grad, np.array(model.weights), config)


def kkt_matrix(stats: GramStats, config: LearnerConfig) -> np.ndarray:
    """Left-hand block matrix [[Sigma + lam*v, mu], [mu^T, 1]] of the derivative system."""
    n = stats.n
    d = stats.sx.shape[0]
    A = np.empty((d + 1, d + 1))
    A[:d, :d] = stats.sxx / n + config.l2 * np.eye(d)
    A[:d, d] = A[d, :d] = stats.sx / n
    A[d, d] = 1.0
    return A


def kkt_rhs(n: int, model: LinearModel, x_c: np.ndarray, y_c: float) -> np.ndarray:
    w = model.weights
    d = w.shape[0]
    B = np.empty((d + 1, d))
    B[:d] = np.outer(x_c, w) + (x_c @ w + model.bias - y_c) * np.eye(d)
    B[d] = w
    return -B / n


def _solve_block(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            Z = scipy.linalg.solve(A, B, assume_a="sym")
        scale = np.linalg.norm(B)
        if np.all(np.isfinite(Z)) and (scale == 0 or np.linalg.norm(A @ Z - B) <= 1e-8 * scale):
            return Z, False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        pass
    Z = np.linalg.lstsq(A + DAMPING * np.eye(A.shape[0]), B, rcond=None)[0]
    return Z, True


def solve_kkt_system(poisoned: Dataset, model: LinearModel, config: LearnerConfig,
                     attack_point, diagnostics: dict | None = None):
    """Derivatives of (w, b) with respect to one attack point.

    ``poisoned`` must already contain the attack point. Returns ``(dw, db)``
    with ``dw[j, k] = d w_j / d x_c^k`` (d x d) and ``db[k] = d b / d x_c^k``.
    A singular system is solved in the damped least-squares sense and counted
    under ``diagnostics["damped"]``.
    """
    x_c, y_c = attack_point
    x_c = np.asarray(x_c, dtype=float)
    if x_c.shape != (model.d,) or poisoned.d != model.d:
        raise ValueError("dimension mismatch between data, model and attack point")
    stats = GramStats.from_data(poisoned)
    Z, damped = _solve_block(kkt_matrix(stats, config), kkt_rhs(stats.n, model, x_c, float(y_c)))
    if damped and diagnostics is not None:
        diagnostics["damped"] = diagnostics.get("damped", 0) + 1
    return Z[:-1], Z[-1]


def gradient_W(surrogate: Dataset, model: LinearModel, config: LearnerConfig,
               dw_dxc: np.ndarray, db_dxc: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Chain rule through the refit model: d W / d x_c as a length-d vector."""
    dw_dxc = np.asarray(dw_dxc, dtype=float)
    db_dxc = np.asarray(db_dxc, dtype=float).reshape(-1)
    d = model.d
    if dw_dxc.shape != (d, d) or db_dxc.shape != (d,) or np.shape(r) != (d,) or surrogate.d != d:
        raise ValueError("dimension mismatch in gradient inputs")
    resid = surrogate.features @ model.weights + model.bias - surrogate.labels
    loss_part = (resid @ surrogate.features @ dw_dxc + resid.sum() * db_dxc) / surrogate.n
    return loss_part + config.lam * (np.asarray(r) @ dw_dxc)


class _Problem:
    """Attacker's clean data plus the current attack points, kept as running sums."""

    def __init__(self, data: Dataset, points: np.ndarray, labels: np.ndarray,
                 learner: LearnerConfig, warm: bool):
        self.data = data
        self.learner = learner
        self.warm = warm
        self.base = GramStats.from_data(data)
        self.points = points
        self.labels = labels
        self.damped = 0
        self.retrains = 0
        self.refresh()

    def refresh(self) -> None:
        self.stats = self.base + GramStats.from_arrays(self.points, self.labels)

    def swapped(self, c: int, x_new: np.ndarray) -> GramStats:
        x_old, y = self.points[c], self.labels[c]
        s = self.stats
        return GramStats(s.n, s.sxx - np.outer(x_old, x_old) + np.outer(x_new, x_new),
                         s.sx - x_old + x_new, s.sxy + y * (x_new - x_old), s.sy, s.syy)

    def fit(self, stats: GramStats, start: LinearModel | None) -> LinearModel:
        self.retrains += 1
        try:
            return train_stats(stats, self.learner, start if self.warm else None)
        except ConvergenceError as exc:
            raise AttackError(f"inner learner failed after {self.retrains} refits: {exc}") from exc

    def W(self, model: LinearModel) -> float:
        return attacker_objective(self.data, model, self.learner)

    def gradient(self, c: int, model: LinearModel) -> np.ndarray:
        s = self.stats
        Z, damped = _solve_block(kkt_matrix(s, self.learner),
                                 kkt_rhs(s.n, model, self.points[c], self.labels[c]))
        self.damped += damped
        w = np.array(model.weights)
        r = _subgradient_from_grad(_smooth_gradient(s, w, model.bias), w, self.learner)
        X = self.data.features
        resid = X @ w + model.bias - self.data.labels
        dw, db = Z[:-1], Z[-1]
        return (resid @ X @ dw + resid.sum() * db) / self.data.n + self.learner.lam * (r @ dw)


def _check_start(data: Dataset, initial: AttackState, lo: np.ndarray, hi: np.ndarray) -> None:
    if initial.points.shape[1] != data.d:
        raise ValueError(f"attack points have {initial.points.shape[1]} features, data has {data.d}")
    if initial.q < 1:
        raise ValueError("need at least one attack point")
    if np.any(initial.points < lo - 1e-12) or np.any(initial.points > hi + 1e-12):
        raise ValueError("initial attack points must lie inside the box")


def poison(data: Dataset, initial: AttackState, learner: LearnerConfig, config: AttackConfig,
           record_trajectory: bool = False) -> AttackState:
    """Projected gradient ascent on W, one attack point at a time.

    Each outer iteration sweeps over the q points. For point c the model is
    refit on data plus all current points, the ascent direction
    ``proj(x_c + step*grad) - x_c`` is formed and a backtracking line search
    with sufficient-increase test accepts ``x_c + eta*d``. Stops once W moves
    by less than ``epsilon`` over a sweep, or when every point with a nonzero
    direction failed its line search (reported as stalled).
    """
    if config.discrete:
        return poison_discrete(data, initial, learner, config, record_trajectory)
    lo, hi = config.bounds(data.d)
    _check_start(data, initial, lo, hi)
    prob = _Problem(data, initial.points.copy(), initial.labels.copy(), learner, config.warm_start)
    model = prob.fit(prob.stats, initial.model)
    W = prob.W(model)
    history = [W]
    trajectory = [(c, prob.points[c].copy(), W) for c in range(initial.q)] if record_trajectory else []
    stalled = converged = False
    iterations = 0
    for _ in range(config.max_outer_iterations):
        iterations += 1
        moved = failed = 0
        for c in range(initial.q):
            x = prob.points[c]
            grad = prob.gradient(c, model)
            if config.normalize:
                norm = np.linalg.norm(grad)
                grad = grad / norm if norm > 0 else grad
            direction = project_box(x + config.step_size * grad, (lo, hi)) - x
            dd = float(direction @ direction)
            if dd == 0.0:
                continue
            for k in range(config.max_linesearch_steps):
                eta = config.beta ** k
                x_new = project_box(x + eta * direction, (lo, hi))
                stats_new = prob.swapped(c, x_new)
                model_new = prob.fit(stats_new, model)
                W_new = prob.W(model_new)
                if W_new >= W + config.sigma * eta * dd:
                    prob.points[c] = x_new
                    prob.stats = stats_new
                    model, W = model_new, W_new
                    moved += 1
                    if record_trajectory:
                        trajectory.append((c, x_new.copy(), W))
                    break
            else:
                failed += 1
        # drop accumulated rank-one drift and re-settle the model on exact sums
        prob.refresh()
        model = prob.fit(prob.stats, model)
        W = prob.W(model)
        W_prev = history[-1]
        history.append(W)
        if failed and not moved:
            stalled = True
            break
        if abs(W - W_prev) < config.epsilon:
            converged = True
            break
    log.debug("poison: %d iterations, W %.6g -> %.6g", iterations, history[0], history[-1])
    return AttackState(prob.points, prob.labels, model, history,
                       {"iterations": iterations, "converged": converged, "stalled": stalled,
                        "damped": prob.damped, "retrains": prob.retrains},
                       trajectory)


def snap_to_grid(x, lo: np.ndarray, hi: np.ndarray, step: float) -> np.ndarray:
    k = np.round((np.asarray(x, dtype=float) - lo) / step)
    return np.minimum(lo + k * step, hi)


def _check_grid(lo: np.ndarray, hi: np.ndarray, step: float) -> None:
    cells = (hi - lo) / step
    if np.any(np.abs(cells - np.round(cells)) > 1e-9 * np.maximum(1.0, cells)):
        raise ValueError(f"discrete_step {step} does not divide the box extent")


def poison_discrete(data: Dataset, initial: AttackState, learner: LearnerConfig, config: AttackConfig,
                    record_trajectory: bool = False) -> AttackState:
    """Greedy neighbor search for integer-valued feature grids.

    For each point the gradient ranks features by |grad_k|; the top ones are
    bumped by one grid step each, in the sign of the gradient, and the
    neighbor with the largest W replaces the point if it beats the current W.
    """
    lo, hi = config.bounds(data.d)
    step = config.discrete_step
    _check_grid(lo, hi, step)
    _check_start(data, initial, lo, hi)
    points = np.array([snap_to_grid(p, lo, hi, step) for p in initial.points])
    prob = _Problem(data, points, initial.labels.copy(), learner, config.warm_start)
    model = prob.fit(prob.stats, initial.model)
    W = prob.W(model)
    history = [W]
    trajectory = [(c, prob.points[c].copy(), W) for c in range(initial.q)] if record_trajectory else []
    top_t = data.d if config.top_t is None else min(config.top_t, data.d)
    max_candidates = 0
    converged = False
    iterations = 0
    for _ in range(config.max_outer_iterations):
        iterations += 1
        moved = 0
        for c in range(initial.q):
            x = prob.points[c]
            grad = prob.gradient(c, model)
            order = np.argsort(-np.abs(grad), kind="stable")[:top_t]
            best = None
            n_cand = 0
            for k in order:
                if grad[k] == 0.0:
                    continue
                x_new = x.copy()
                x_new[k] = lo[k] + (round((x[k] - lo[k]) / step) + np.sign(grad[k])) * step
                if x_new[k] < lo[k] - 1e-12 or x_new[k] > hi[k] + 1e-12:
                    continue
                x_new[k] = min(max(x_new[k], lo[k]), hi[k])
                n_cand += 1
                stats_new = prob.swapped(c, x_new)
                model_new = prob.fit(stats_new, model)
                W_new = prob.W(model_new)
                if best is None or W_new > best[0]:
                    best = (W_new, x_new, stats_new, model_new)
            max_candidates = max(max_candidates, n_cand)
            if best is not None and best[0] > W:
                W, x_new, prob.stats, model = best
                prob.points[c] = x_new
                moved += 1
                if record_trajectory:
                    trajectory.append((c, x_new.copy(), W))
        prob.refresh()
        model = prob.fit(prob.stats, model)
        W = prob.W(model)
        W_prev = history[-1]
        history.append(W)
        if not moved or abs(W - W_prev) < config.epsilon:
            converged = True
            break
    return AttackState(prob.points, prob.labels, model, history,
                       {"iterations": iterations, "converged": converged, "stalled": False,
                        "damped": prob.damped, "retrains": prob.retrains,
                        "max_candidates": max_candidates},
                       trajectory)
