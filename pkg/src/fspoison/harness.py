"""Experiment orchestration: poisoning-fraction sweeps over several learners.

One *cell* is a (method, run) pair. Inside a cell lam is chosen once by
cross-validation on the clean training set and reused for every poisoned
refit, so the curves isolate the attack from model selection. Cells are
independent and can run on a thread pool; rows are sorted before writing so
output files do not depend on scheduling.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import attack as attack_mod
from .attack import AttackConfig, AttackError, AttackState, attacker_objective, project_box
from .baselines import random_label_flip
from .data import RawDataset, SplitSpec, load_csv, sample_splits, synthetic_gaussians_2d, synthetic_sparse_linear
from .learners import (
    ConvergenceError,
    Dataset,
    GramStats,
    LearnerConfig,
    Regularizer,
    lambda_grid,
    select_lambda,
    train,
    train_stats,
)
from .metrics import (
    FeatureSubset,
    average_pairwise_stability,
    classification_error,
    selected_features,
    top_k,
)

log = logging.getLogger(__name__)

KNOWLEDGE = ("PK", "LK")
# label policy for attack points: flipped clones or one fixed class
ATTACK_LABELS = {"flip": None, "+1": 1.0, "-1": -1.0}


def attack_count(fraction: float, n: int) -> int:
    """Attack points needed so they make up ``fraction`` of the poisoned set."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must lie in [0, 1), got {fraction}")
    return int(round(fraction * n / (1.0 - fraction)))


@dataclass
class ExperimentSpec:
    dataset: dict
    methods: list[str] = field(default_factory=lambda: ["lasso", "ridge", "elastic_net:0.5"])
    fractions: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.15, 0.2])
    knowledge: str = "PK"
    runs: int = 5
    seed: int = 0
    stability_k: list[int] = field(default_factory=lambda: [30, 50])
    train_size: int = 300
    surrogate_size: int = 300
    test_size: int = 5000
    folds: int = 5
    grid_size: int = 50
    grid_ratio: float = 1e-3
    learner: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    attack_label: str = "flip"
    baseline: bool = False

    def __post_init__(self):
        self.knowledge = self.knowledge.upper()
        if self.knowledge not in KNOWLEDGE:
            raise ValueError(f"knowledge must be PK or LK, got {self.knowledge}")
        self.fractions = [float(p) for p in self.fractions]
        if not self.fractions or self.fractions[0] != 0.0:
            raise ValueError("fractions must start at 0")
        if any(b <= a for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError("fractions must be strictly ascending")
        if self.fractions[-1] > 0.5:
            raise ValueError("fractions must not exceed 0.5")
        if self.runs < 1:
            raise ValueError("runs must be positive")
        if self.attack_label not in ATTACK_LABELS:
            raise ValueError(f"attack_label must be one of {sorted(ATTACK_LABELS)}, got {self.attack_label!r}")
        self.regularizers = [Regularizer.parse(m) for m in self.methods]
        self.learner_config(1.0)
        self.attack_config()

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        if "dataset" not in raw:
            raise ValueError("spec needs a 'dataset' entry")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def learner_config(self, lam: float, regularizer: Regularizer | None = None) -> LearnerConfig:
        return LearnerConfig(regularizer or Regularizer.lasso(), lam, **self.learner)

    def attack_config(self) -> AttackConfig:
        opts = dict(self.attack)
        if "box" in opts:
            opts["box"] = tuple(opts["box"])
        return AttackConfig(**opts)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_size, self.test_size, self.surrogate_size, self.runs, self.seed)


@dataclass
class Row:
    method: str
    knowledge: str
    fraction: float
    run: int
    error: float
    n_selected: int
    stability: dict[int, float]
    q: int = 0
    lam: float = math.nan
    objective_initial: float = math.nan
    objective_final: float = math.nan
    iterations: int = 0
    status: str = "ok"
    wall_time: float = 0.0

    @property
    def key(self):
        return (self.method, self.fraction, self.run)


@dataclass
class ExperimentResult:
    rows: list[Row]
    stability_k: list[int]
    subsets: dict = field(default_factory=dict)

    def aggregates(self) -> list[dict]:
        out = []
        groups: dict = {}
        for row in self.rows:
            groups.setdefault((row.method, row.knowledge, row.fraction), []).append(row)
        for (method, knowledge, fraction), rows in sorted(groups.items()):
            agg = {"method": method, "knowledge": knowledge, "fraction": fraction, "runs": len(rows)}
            for name, values in self._columns(rows).items():
                agg[f"{name}_mean"], agg[f"{name}_std"] = _mean_std(values)
            out.append(agg)
        return out

    def _columns(self, rows: list[Row]) -> dict[str, list[float]]:
        cols = {"error": [r.error for r in rows], "n_selected": [r.n_selected for r in rows]}
        for k in self.stability_k:
            cols[f"stability_k{k}"] = [r.stability.get(k, math.nan) for r in rows]
        return cols

    def mean(self, method: str, fraction: float, column: str) -> float:
        for agg in self.aggregates():
            if agg["method"] == method and agg["fraction"] == fraction:
                return agg[f"{column}_mean"]
        raise KeyError((method, fraction))

    def per_run(self, method: str, fraction: float, column: str = "error") -> list[float]:
        rows = sorted((r for r in self.rows if r.method == method and r.fraction == fraction),
                      key=lambda r: r.run)
        return [self._columns([r])[column][0] for r in rows]


def _mean_std(values) -> tuple[float, float]:
    arr = np.array([v for v in values if not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())


def _load_pool(spec: ExperimentSpec) -> tuple[RawDataset, float]:
    src = spec.dataset
    if "csv" in src:
        return load_csv(src["csv"]), float(src.get("cap", 20.0))
    if "synthetic" in src:
        opts = dict(src["synthetic"])
        opts.setdefault("n", spec.train_size + spec.surrogate_size + spec.test_size)
        data, _ = synthetic_sparse_linear(**opts)
        # already in [0, 1]; a unit cap leaves it untouched
        return RawDataset(data.features, data.labels, data.feature_names), 1.0
    raise ValueError("dataset must name either 'csv' or 'synthetic'")


Crafter = Callable[[Dataset, AttackState, LearnerConfig, AttackConfig], AttackState]


def _craft_poison(attacker_data, initial, learner, attack_cfg) -> AttackState:
    return attack_mod.poison(attacker_data, initial, learner, attack_cfg)


def _craft_random(attacker_data, initial, learner, attack_cfg) -> AttackState:
    return initial


def _run_cell(spec: ExperimentSpec, method_index: int, run: int, split, crafter: Crafter):
    regularizer = spec.regularizers[method_index]
    method = regularizer.label
    train_set, surrogate, test = split
    attacker_data = train_set if spec.knowledge == "PK" else surrogate
    if spec.knowledge == "LK" and not attacker_data.tag.startswith("surrogate"):
        raise AssertionError("limited-knowledge attacker must only see the surrogate set")
    base = spec.learner_config(1.0, regularizer)
    grid = lambda_grid(train_set, regularizer, spec.grid_size, spec.grid_ratio)
    lam, _ = select_lambda(train_set, regularizer, grid, spec.folds, base.max_iterations, base.tolerance)
    learner = base.with_lam(lam)
    attack_cfg = spec.attack_config()
    clean = train(train_set, learner)
    train_stats_clean = GramStats.from_data(train_set)

    rows, models = [], {}
    for fi, fraction in enumerate(spec.fractions):
        t0 = time.perf_counter()
        q = attack_count(fraction, train_set.n)
        row = Row(method, spec.knowledge, fraction, run, math.nan, 0, {}, q=q, lam=lam)
        if q == 0:
            model = clean
            row.objective_initial = row.objective_final = attacker_objective(attacker_data, clean, learner)
        else:
            initial = random_label_flip(attacker_data, q, [spec.seed, run, method_index, fi, 7])
            if spec.attack_label != "flip":
                initial.labels = np.full(q, ATTACK_LABELS[spec.attack_label])
            try:
                state = crafter(attacker_data, initial, learner, attack_cfg)
                if state.objective_history:
                    row.objective_initial = state.objective_history[0]
                    row.objective_final = state.objective_history[-1]
                    row.iterations = state.diagnostics.get("iterations", 0)
                    if state.diagnostics.get("stalled"):
                        row.status = "stalled"
                else:
                    m = train(attacker_data.with_points(initial.points, initial.labels), learner)
                    row.objective_initial = row.objective_final = attacker_objective(attacker_data, m, learner)
                poisoned_stats = train_stats_clean + GramStats.from_arrays(state.points, state.labels)
                model = train_stats(poisoned_stats, learner, warm_start=clean)
            except (AttackError, ConvergenceError) as exc:
                log.warning("%s run %d fraction %g failed: %s", method, run, fraction, exc)
                row.status = f"failed: {exc}".replace(",", ";")
                model = None
        if model is not None:
            row.error = classification_error(model, test)
            row.n_selected = selected_features(model).k
            models[fraction] = model
        row.wall_time = time.perf_counter() - t0
        rows.append(row)
        log.info("%s %s run=%d p=%.3f q=%d err=%.4f sel=%d status=%s (%.1fs)", method, spec.knowledge, run,
                 fraction, q, row.error, row.n_selected, row.status, row.wall_time)
    return method, run, rows, models


def _execute(spec: ExperimentSpec, crafter: Crafter, threads: int = 1) -> ExperimentResult:
    pool, cap = _load_pool(spec)
    splits = sample_splits(pool, spec.split_spec(), cap)
    d = pool.d
    jobs = [(mi, run) for mi in range(len(spec.regularizers)) for run in range(spec.runs)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(lambda j: _run_cell(spec, j[0], j[1], splits[j[1]], crafter), jobs))
    else:
        outs = [_run_cell(spec, mi, run, splits[run], crafter) for mi, run in jobs]

    rows = [row for _, _, cell_rows, _ in outs for row in cell_rows]
    models = {(method, run): m for method, run, _, m in outs}
    ks = [k for k in spec.stability_k if 0 < k < d]
    subsets = {}
    for (method, run), by_fraction in models.items():
        for fraction, model in by_fraction.items():
            for k in ks:
                subsets[(method, fraction, run, k)] = top_k(model, k)
    for row in rows:
        for k in ks:
            attacked = subsets.get((row.method, row.fraction, row.run, k))
            clean = [s for (m, f, _, kk), s in subsets.items() if m == row.method and f == 0.0 and kk == k]
            if attacked is not None and clean:
                row.stability[k] = average_pairwise_stability(clean, [attacked]).mean_index
    rows.sort(key=lambda r: r.key)
    return ExperimentResult(rows, list(spec.stability_k), subsets)


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Gradient-based poisoning at every fraction, for every method and run."""
    return _execute(spec, _craft_poison, threads)


def run_baseline(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Same protocol with random label-flipped clones instead of crafted points."""
    return _execute(spec, _craft_random, threads)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return ""
    return f"{float(x):.10g}"


def write_results(result: ExperimentResult, out_dir, prefix: str = "") -> list[Path]:
    """results.csv, aggregates.csv, diagnostics.csv, plot data and top-k subsets."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    stab_cols = [f"stability_k{k}" for k in result.stability_k]

    path = out / f"{prefix}results.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "knowledge", "fraction", "run", "error", "n_selected", *stab_cols])
        for r in result.rows:
            w.writerow([r.method, r.knowledge, _fmt(r.fraction), r.run, _fmt(r.error), r.n_selected,
                        *(_fmt(r.stability.get(k, math.nan)) for k in result.stability_k)])
    written.append(path)

    path = out / f"{prefix}diagnostics.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "knowledge", "fraction", "run", "q", "lambda", "attack_objective_initial",
                    "attack_objective_final", "iterations", "status"])
        for r in result.rows:
            w.writerow([r.method, r.knowledge, _fmt(r.fraction), r.run, r.q, _fmt(r.lam),
                        _fmt(r.objective_initial), _fmt(r.objective_final), r.iterations, r.status])
    written.append(path)

    aggs = result.aggregates()
    path = out / f"{prefix}aggregates.csv"
    cols = ["method", "knowledge", "fraction", "runs"]
    for name in ["error", "n_selected", *stab_cols]:
        cols += [f"{name}_mean", f"{name}_std"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for agg in aggs:
            w.writerow([_fmt(agg[c]) if not isinstance(agg[c], str) else agg[c] for c in cols])
    written.append(path)

    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    for method in sorted({a["method"] for a in aggs}):
        for name in ["error", "n_selected", *stab_cols]:
            path = plots / f"{prefix}{name}_{method.replace(':', '-')}.txt"
            with path.open("w", encoding="utf-8") as fh:
                fh.write("# fraction mean std\n")
                for agg in aggs:
                    if agg["method"] == method:
                        fh.write(f"{_fmt(agg['fraction'])} {_fmt(agg[name + '_mean'])} {_fmt(agg[name + '_std'])}\n")
            written.append(path)

    subset_dir = out / "subsets"
    subset_dir.mkdir(exist_ok=True)
    for (method, fraction, run, k), subset in sorted(result.subsets.items()):
        path = subset_dir / f"{prefix}{method.replace(':', '-')}_p{fraction:g}_run{run}_k{k}.csv"
        save_subset(subset, path)
        written.append(path)
    return written


def save_subset(subset: FeatureSubset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "selected"])
        for j, sel in enumerate(subset.mask):
            w.writerow([j, int(sel)])


def load_subset(path) -> FeatureSubset:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["feature", "selected"]:
            raise ValueError(f"{path}: expected header 'feature,selected'")
        mask = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 or row[1] not in ("0", "1") or int(row[0]) != len(mask):
                raise ValueError(f"{path}:{lineno}: malformed subset row {row}")
            mask.append(row[1] == "1")
    return FeatureSubset(np.array(mask, dtype=bool))


def write_attack_points(states: list[AttackState], path) -> None:
    """Attack points as ``run,index,label,<features>`` rows."""
    d = states[0].points.shape[1] if states else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "index", "label", *(f"f{j}" for j in range(d))])
        for run, st in enumerate(states):
            for i, (x, y) in enumerate(zip(st.points, st.labels)):
                w.writerow([run, i, int(y), *("%.17g" % v for v in x)])


def grid_local_maxima(values: np.ndarray) -> np.ndarray:
    """Boolean mask of cells no smaller than any of their (up to 8) neighbors."""
    padded = np.pad(values, 1, constant_values=-np.inf)
    ny, nx = values.shape
    is_max = np.ones_like(values, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                is_max &= values >= padded[1 + dy:1 + dy + ny, 1 + dx:1 + dx + nx]
    return is_max


@dataclass
class DemoResult:
    data: Dataset
    test: Dataset
    grid: np.ndarray
    W: np.ndarray
    error: np.ndarray
    state: AttackState
    error_before: float
    error_after: float
    initial_point: np.ndarray


def demo_fig1(output_dir=None, n_per_class: int = 10, lam: float = 0.01, box=(-2.5, 2.5),
              grid_points: int = 51, seed: int = 0, attack: AttackConfig | None = None,
              means=((0.75, 0.75), (-0.75, -0.75))) -> DemoResult:
    """Single attack point against LASSO on two 2-D Gaussian blobs.

    Evaluates W and the test error of the poisoned model on a regular grid
    over the box, runs the attack from a label-flipped clone of a training
    point, and (if ``output_dir`` is given) writes everything as text tables.
    """
    data = synthetic_gaussians_2d(n_per_class, means, seed=seed)
    test = synthetic_gaussians_2d(500, means, seed=seed + 1)
    learner = LearnerConfig(Regularizer.lasso(), lam, tolerance=1e-10, max_iterations=100_000)
    if attack is None:
        attack = AttackConfig(box=box, step_size=0.25, normalize=True, epsilon=1e-9,
                              max_outer_iterations=1000)
    stats = GramStats.from_data(data)
    clean = train_stats(stats, learner)

    axis = np.linspace(box[0], box[1], grid_points)
    initial = random_label_flip(data, 1, seed)
    initial.points = project_box(initial.points, box)
    y_c = float(initial.labels[0])
    W = np.empty((grid_points, grid_points))
    err = np.empty_like(W)
    model = clean
    for i, x2 in enumerate(axis):
        for j, x1 in enumerate(axis):
            model = train_stats(stats + GramStats.from_arrays([[x1, x2]], [y_c]), learner, warm_start=model)
            W[i, j] = attacker_objective(data, model, learner)
            err[i, j] = classification_error(model, test)

    state = attack_mod.poison(data, initial, learner, attack, record_trajectory=True)
    result = DemoResult(data, test, axis, W, err, state, classification_error(clean, test),
                        classification_error(state.model, test), initial.points[0].copy())
    if output_dir is not None:
        _write_demo(result, Path(output_dir))
    return result


def _write_demo(res: DemoResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "dataset.txt").open("w", encoding="utf-8") as fh:
        fh.write("# x1 x2 label\n")
        for x, y in zip(res.data.features, res.data.labels):
            fh.write(f"{x[0]:.10g} {x[1]:.10g} {int(y)}\n")
    with (out / "grid.txt").open("w", encoding="utf-8") as fh:
        fh.write("# x1 x2 W error\n")
        for i, x2 in enumerate(res.grid):
            for j, x1 in enumerate(res.grid):
                fh.write(f"{x1:.10g} {x2:.10g} {res.W[i, j]:.10g} {res.error[i, j]:.10g}\n")
    with (out / "trajectory.txt").open("w", encoding="utf-8") as fh:
        fh.write("# step x1 x2 W\n")
        for step, (_, x, w) in enumerate(res.state.trajectory):
            fh.write(f"{step} {x[0]:.10g} {x[1]:.10g} {w:.10g}\n")
    summary = {
        "error_before": res.error_before,
        "error_after": res.error_after,
        "W_initial": res.state.objective_history[0],
        "W_final": res.state.objective_history[-1],
        "attack_label": int(res.state.labels[0]),
        "initial_point": res.initial_point.tolist(),
        "final_point": res.state.points[0].tolist(),
        "iterations": res.state.diagnostics["iterations"],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
