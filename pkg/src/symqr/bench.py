"""Cross-validated benchmark: models x datasets x folds x quantile levels.

Per fold the model is fit on the training split and scored on the test
split. Fold scores are averaged per dataset with equal weight, then summarised
per (model, tau) as mean and sample SD over datasets. A Friedman test per
(metric, tau) gates pairwise Wilcoxon tests, both Bonferroni corrected.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import fit_linear_quantile, fit_quantile_tree, fit_quantile_tree_grid
from .data import Dataset, DataError, kfold, load_csv, read_table, subsample, synth
from .loss import DegenerateRangeError, check_tau, score
from .models import SymbolicModel
from .search import ConfigError, SearchConfig, evolve
from .stats import bonferroni, friedman_test, wilcoxon_signed_rank

log = logging.getLogger(__name__)

METRICS = ("nql", "ace", "parsimony")
ROW_FIELDS = (
    "model",
    "dataset",
    "fold",
    "tau",
    "nql",
    "ace",
    "coverage",
    "mean_pinball",
    "parsimony",
    "wall_time_ms",
    "status",
    "reason",
)
INTERNAL_KINDS = ("sqr", "sqr10k", "lqr", "qdt", "qdt-grid")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    predictions: str | None = None
    params: dict = field(default_factory=dict, hash=False)

    @classmethod
    def parse(cls, entry) -> ModelSpec:
        if isinstance(entry, str):
            entry = {"name": entry, "kind": entry}
        entry = dict(entry)
        name = entry.pop("name", None)
        kind = entry.pop("kind", None)
        predictions = entry.pop("predictions", None)
        if kind is None:
            kind = "external" if predictions else name
        if kind not in INTERNAL_KINDS + ("external",):
            raise ConfigError(f"unknown model kind {kind!r}")
        if kind == "external" and not predictions:
            raise ConfigError(f"external model {name!r} needs a 'predictions' path template")
        return cls(name or kind, kind, predictions, entry)


@dataclass(frozen=True)
class BenchmarkConfig:
    models: tuple[ModelSpec, ...]
    datasets: tuple[dict, ...]
    taus: tuple[float, ...] = (0.5, 0.9)
    k: int = 5
    seed: int = 0
    search: SearchConfig = field(default_factory=SearchConfig)
    selection: str = "elbow"
    max_train_rows: int = 10_000
    procs: int = 1
    alpha: float = 0.05

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> BenchmarkConfig:
        d = dict(d)
        try:
            models = tuple(ModelSpec.parse(m) for m in d.pop("models"))
            datasets = tuple(_dataset_entry(e, base) for e in d.pop("datasets"))
        except KeyError as exc:
            raise ConfigError(f"benchmark config needs {exc}") from None
        search = SearchConfig.from_mapping(d.pop("search", {}))
        taus = tuple(float(t) for t in d.pop("taus", (0.5, 0.9)))
        for t in taus:
            try:
                check_tau(t)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        known = {"k", "seed", "selection", "max_train_rows", "procs", "alpha"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown benchmark keys: {sorted(unknown)}")
        cfg = cls(models, datasets, taus, search=search, **d)
        if not models or not datasets:
            raise ConfigError("need at least one model and one dataset")
        if cfg.k < 2:
            raise ConfigError("k must be >= 2")
        if cfg.selection not in ("elbow", "best-loss"):
            raise ConfigError(f"unknown selection mode {cfg.selection!r}")
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> BenchmarkConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read benchmark config {path}: {exc}") from exc
        return cls.from_dict(raw, path.parent)


def _dataset_entry(entry, base: Path | None) -> dict:
    if isinstance(entry, str):
        entry = {"path": entry}
    entry = dict(entry)
    if "path" in entry:
        p = Path(entry["path"])
        if base is not None and not p.is_absolute():
            p = base / p
        entry["path"] = str(p)
        entry.setdefault("name", p.stem)
    elif "synth" in entry:
        entry.setdefault("name", f"{entry['synth']}-{entry.get('seed', 0)}")
    else:
        raise ConfigError(f"dataset entry needs 'path' or 'synth': {entry}")
    return entry


def load_dataset(entry: dict) -> Dataset:
    if "path" in entry:
        return load_csv(entry["path"], entry.get("target"))
    params = {k: v for k, v in entry.items() if k not in ("synth", "name", "n", "seed")}
    return synth(entry["synth"], int(entry.get("n", 1000)), seed=entry.get("seed", 0), **params)


# --------------------------------------------------------------------------
# fitting one cell


def fit_model(spec: ModelSpec, train: Dataset, tau: float, seed: int, cfg: BenchmarkConfig):
    """Fit an internal model on ``train``; returns an object with predict/parsimony."""
    if spec.kind in ("sqr", "sqr10k"):
        search = cfg.search.replace(seed=seed, **spec.params.get("search", {}))
        if spec.kind == "sqr10k":
            train = subsample(train, int(spec.params.get("max_train_rows", cfg.max_train_rows)), seed)
        front = evolve(train, tau, search)
        entry = front.select(spec.params.get("selection", cfg.selection))
        return SymbolicModel(entry.expr, tau, train.names, train.target_name)
    if spec.kind == "lqr":
        return fit_linear_quantile(train, tau)
    if spec.kind == "qdt":
        return fit_quantile_tree(train, tau, int(spec.params.get("min_samples_leaf", 5)))
    if spec.kind == "qdt-grid":
        return fit_quantile_tree_grid(train, tau, seed=seed)
    raise ValueError(f"cannot fit model kind {spec.kind!r}")


def external_predictions(spec: ModelSpec, dataset_name: str, tau: float, fold: int, rows: np.ndarray) -> np.ndarray:
    """Read ``row,prediction`` pairs (row = index into the full dataset) for the test rows."""
    path = spec.predictions.format(dataset=dataset_name, tau=tau, fold=fold)
    header, table = read_table(path)
    if header[:2] != ["row", "prediction"]:
        raise DataError(f"{path}: expected columns 'row,prediction'")
    lookup = dict(zip(table[:, 0].astype(int).tolist(), table[:, 1].tolist()))
    missing = [int(r) for r in rows if int(r) not in lookup]
    if missing:
        raise DataError(f"{path}: no prediction for rows {missing[:5]}")
    return np.array([lookup[int(r)] for r in rows])


def _cell_seed(seed: int, dataset_idx: int, fold: int, tau_idx: int) -> int:
    return int(np.random.SeedSequence([seed, dataset_idx, fold, tau_idx]).generate_state(1)[0])


def _run_cell(args) -> dict:
    spec, dataset, ds_name, ds_idx, fold, train_idx, test_idx, tau, tau_idx, cfg = args
    row = {"model": spec.name, "dataset": ds_name, "fold": fold, "tau": tau}
    empty = {k: None for k in ("nql", "ace", "coverage", "mean_pinball", "parsimony", "wall_time_ms")}
    y_test = dataset.target[test_idx]
    if np.ptp(y_test) <= 0:
        return {**row, **empty, "status": "skip", "reason": "degenerate test-fold target range"}
    try:
        if spec.kind == "external":
            elapsed = None
            pred = external_predictions(spec, ds_name, tau, fold, test_idx)
            pars = None
        else:
            start = time.perf_counter()
            model = fit_model(spec, dataset.take(train_idx), tau, _cell_seed(cfg.seed, ds_idx, fold, tau_idx), cfg)
            elapsed = (time.perf_counter() - start) * 1000.0
            pred = model.predict(dataset.features[test_idx])
            pars = model.parsimony
        rec = score(tau, y_test, pred, pars)
    except (DataError, DegenerateRangeError, ValueError, RuntimeError) as exc:
        log.warning("skip %s/%s fold %d tau %s: %s", spec.name, ds_name, fold, tau, exc)
        return {**row, **empty, "status": "skip", "reason": str(exc).splitlines()[0]}
    if not math.isfinite(rec.mean_pinball):
        return {**row, **empty, "status": "skip", "reason": "non-finite predictions"}
    return {
        **row,
        "nql": rec.nql,
        "ace": rec.ace,
        "coverage": rec.coverage,
        "mean_pinball": rec.mean_pinball,
        "parsimony": rec.parsimony,
        "wall_time_ms": elapsed,
        "status": "ok",
        "reason": "",
    }


# --------------------------------------------------------------------------
# report


@dataclass
class BenchmarkReport:
    rows: list[dict]
    models: list[str]
    datasets: list[str]
    taus: list[float]
    alpha: float = 0.05
    aggregates: list[dict] = field(default_factory=list)
    tests: dict = field(default_factory=dict)

    def dataset_means(self, metric: str) -> dict[tuple[str, str, float], float]:
        """Equal-weight average over scored folds per (model, dataset, tau)."""
        groups: dict[tuple, list] = {}
        for r in self.rows:
            groups.setdefault((r["model"], r["dataset"], r["tau"]), []).append(r)
        out = {}
        for key, rs in groups.items():
            values = [r[metric] for r in rs if r["status"] == "ok"]
            if values and all(v is not None for v in values):
                out[key] = float(np.mean(values))
        return out

    def aggregate(self) -> list[dict]:
        aggs = []
        for metric in METRICS + ("coverage", "wall_time_ms"):
            means = self.dataset_means(metric)
            for model, tau in itertools.product(self.models, self.taus):
                vals = [means[(model, ds, tau)] for ds in self.datasets if (model, ds, tau) in means]
                if not vals:
                    continue
                aggs.append(
                    {
                        "model": model,
                        "tau": tau,
                        "metric": metric,
                        "mean": float(np.mean(vals)),
                        "sd": float(np.std(vals, ddof=1)) if len(vals) > 1 else None,
                        "n_datasets": len(vals),
                    }
                )
        self.aggregates = aggs
        return aggs

    def mean(self, model: str, tau: float, metric: str) -> float | None:
        for a in self.aggregates:
            if (a["model"], a["tau"], a["metric"]) == (model, tau, metric):
                return a["mean"]
        return None

    def run_tests(self) -> dict:
        """Friedman per (metric, tau), then gated pairwise Wilcoxon."""
        blocks = []
        for metric, tau in itertools.product(METRICS, self.taus):
            means = self.dataset_means(metric)
            models = [m for m in self.models if any((m, ds, tau) in means for ds in self.datasets)]
            datasets = [ds for ds in self.datasets if all((m, ds, tau) in means for m in models)]
            blocks.append((metric, tau, models, datasets, means))
        testable = [b for b in blocks if len(b[2]) >= 2 and len(b[3]) >= 2]
        alpha_f = bonferroni(self.alpha, max(1, len(testable)))
        n_pairs = sum(math.comb(len(b[2]), 2) for b in testable)
        alpha_w = bonferroni(self.alpha, max(1, n_pairs))
        friedman, pairwise = [], []
        for metric, tau, models, datasets, means in testable:
            matrix = np.array([[means[(m, ds, tau)] for m in models] for ds in datasets])
            res = friedman_test(matrix)
            passed = res.p_value < alpha_f
            friedman.append(
                {
                    "metric": metric,
                    "tau": tau,
                    "models": models,
                    "n_datasets": len(datasets),
                    "statistic": res.statistic,
                    "p_value": res.p_value,
                    "significant": passed,
                }
            )
            if not passed:
                continue
            for i, j in itertools.combinations(range(len(models)), 2):
                w = wilcoxon_signed_rank(matrix[:, i], matrix[:, j])
                mi, mj = matrix[:, i].mean(), matrix[:, j].mean()
                pairwise.append(
                    {
                        "metric": metric,
                        "tau": tau,
                        "model_a": models[i],
                        "model_b": models[j],
                        "statistic": w.statistic,
                        "p_value": w.p_value,
                        "flag": w.flag,
                        "significant": w.p_value < alpha_w,
                        "better": models[i] if mi < mj else models[j] if mj < mi else None,
                    }
                )
        self.tests = {
            "friedman_alpha": alpha_f,
            "wilcoxon_alpha": alpha_w,
            "friedman": friedman,
            "wilcoxon": pairwise,
        }
        return self.tests

    def rows_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: ("" if r[k] is None else r[k]) for k in ROW_FIELDS})
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "models": self.models,
            "datasets": self.datasets,
            "taus": self.taus,
            "aggregates": self.aggregates,
            "tests": self.tests,
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rows.csv").write_text(self.rows_csv(), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8")


def run(cfg: BenchmarkConfig, datasets: list[tuple[str, Dataset]] | None = None) -> BenchmarkReport:
    """Run every (model, dataset, fold, tau) cell and assemble the report.

    ``datasets`` overrides the config's dataset entries with in-memory data.
    """
    if datasets is None:
        datasets = [(e["name"], load_dataset(e)) for e in cfg.datasets]
    cells = []
    for ds_idx, (name, ds) in enumerate(datasets):
        plan = kfold(ds, cfg.k, cfg.seed)
        for fold in range(cfg.k):
            train_idx, test_idx = plan.split(fold)
            for tau_idx, tau in enumerate(cfg.taus):
                for spec in cfg.models:
                    cells.append((spec, ds, name, ds_idx, fold, train_idx, test_idx, tau, tau_idx, cfg))
    if cfg.procs > 1:
        with ProcessPoolExecutor(cfg.procs) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    report = BenchmarkReport(
        rows,
        [m.name for m in cfg.models],
        [name for name, _ in datasets],
        list(cfg.taus),
        cfg.alpha,
    )
    report.aggregate()
    report.run_tests()
    return report
