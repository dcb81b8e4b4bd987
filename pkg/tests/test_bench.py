import numpy as np
import pytest

from symqr.bench import BenchmarkConfig, BenchmarkReport, run
from symqr.data import from_arrays, kfold, synth
from symqr.search import ConfigError

TINY_SEARCH = {"niterations": 2, "populations": 2, "population_size": 12, "ncycles_per_iteration": 20}


def config(models, datasets=({"synth": "linear", "n": 60, "seed": 1},), **kw):
    return BenchmarkConfig.from_dict({"models": list(models), "datasets": list(datasets), **kw})


def test_one_model_one_dataset_five_rows():
    report = run(config(["lqr"], taus=[0.5]))
    assert len(report.rows) == 5
    assert sorted(r["fold"] for r in report.rows) == [0, 1, 2, 3, 4]
    assert all(r["status"] == "ok" for r in report.rows)
    assert {(a["model"], a["tau"]) for a in report.aggregates} == {("lqr", 0.5)}
    assert report.mean("lqr", 0.5, "parsimony") == 3.0


def test_identical_models_identical_aggregates():
    models = [
        {"name": "a", "kind": "sqr", "search": TINY_SEARCH},
        {"name": "b", "kind": "sqr", "search": TINY_SEARCH},
    ]
    report = run(config(models, taus=[0.9]))
    for metric in ("nql", "ace", "parsimony", "coverage"):
        assert report.mean("a", 0.9, metric) == report.mean("b", 0.9, metric)


def test_external_predictions_scored_alongside(tmp_path):
    name = "lin"
    ds = synth("linear", 50, seed=2)
    plan = kfold(ds, 5, 0)
    for fold in range(5):
        _, test = plan.split(fold)
        lines = ["row,prediction"] + [f"{i},{float(ds.target[i])!r}" for i in test]
        (tmp_path / f"{name}_0.5_{fold}.csv").write_text("\n".join(lines) + "\n")
    template = str(tmp_path / "{dataset}_{tau}_{fold}.csv")
    cfg = config(["lqr", {"name": "oracle", "predictions": template}], taus=[0.5])
    report = run(cfg, datasets=[(name, ds)])
    ext = [r for r in report.rows if r["model"] == "oracle"]
    assert len(ext) == 5 and all(r["status"] == "ok" for r in ext)
    assert report.mean("oracle", 0.5, "nql") == 0.0
    assert report.mean("oracle", 0.5, "ace") == 0.5
    assert report.mean("lqr", 0.5, "nql") > 0


def test_missing_external_file_is_skip(tmp_path):
    cfg = config([{"name": "ghost", "predictions": str(tmp_path / "none_{fold}.csv")}], taus=[0.5])
    report = run(cfg)
    assert len(report.rows) == 5
    assert all(r["status"] == "skip" and r["reason"] for r in report.rows)


def test_degenerate_fold_skipped():
    ds = from_arrays(np.arange(20.0)[:, None], np.full(20, 3.0))
    report = run(config(["lqr"], taus=[0.5]), datasets=[("flat", ds)])
    assert len(report.rows) == 5
    assert all(r["status"] == "skip" and "degenerate" in r["reason"] for r in report.rows)
    assert report.aggregates == []


def test_aggregates_recomputable_from_rows():
    datasets = [{"synth": "linear", "n": 50, "seed": s} for s in range(3)]
    report = run(config(["lqr", "qdt"], datasets, taus=[0.5, 0.9]))
    for a in report.aggregates:
        per_ds = []
        for ds in report.datasets:
            vals = [
                r[a["metric"]] for r in report.rows
                if (r["model"], r["dataset"], r["tau"], r["status"]) == (a["model"], ds, a["tau"], "ok")
            ]
            per_ds.append(sum(vals) / len(vals))
        assert a["mean"] == pytest.approx(np.mean(per_ds), abs=1e-12)
        assert a["sd"] == pytest.approx(np.std(per_ds, ddof=1), abs=1e-12)


def test_report_files(tmp_path):
    report = run(config(["lqr"], taus=[0.5]))
    report.write(tmp_path)
    rows = (tmp_path / "rows.csv").read_text().splitlines()
    assert rows[0].startswith("model,dataset,fold,tau,nql,ace,coverage")
    assert len(rows) == 6
    assert (tmp_path / "summary.json").exists()


def _fake_rows(nql_by_model, ace=0.1):
    rows = []
    for model, values in nql_by_model.items():
        for i, v in enumerate(values):
            rows.append(
                {"model": model, "dataset": f"d{i}", "fold": 0, "tau": 0.5, "nql": v, "ace": ace,
                 "coverage": 0.5, "mean_pinball": v, "parsimony": 3, "wall_time_ms": 1.0, "status": "ok", "reason": ""}
            )
    return rows


class TestGating:
    def report(self, values):
        r = BenchmarkReport(_fake_rows(values), list(values), [f"d{i}" for i in range(10)], [0.5])
        r.aggregate()
        return r.run_tests()

    def test_pairwise_only_after_friedman_passes(self):
        tests = self.report({"A": [0.1] * 10, "B": [0.2] * 10, "C": [0.3] * 10})
        passed = {(f["metric"], f["tau"]) for f in tests["friedman"] if f["significant"]}
        assert passed == {("nql", 0.5)}
        assert len(tests["wilcoxon"]) == 3
        assert {(w["metric"], w["tau"]) for w in tests["wilcoxon"]} == passed
        assert tests["friedman_alpha"] == pytest.approx(0.05 / 3)
        assert tests["wilcoxon_alpha"] == pytest.approx(0.05 / 9)

    def test_no_pairwise_when_friedman_fails(self):
        # rotating winners: every model has the same rank sum
        cycle = [[0.1, 0.2, 0.3], [0.2, 0.3, 0.1], [0.3, 0.1, 0.2]]
        rows = [cycle[i % 3] for i in range(9)] + [[0.2, 0.2, 0.2]]
        tests = self.report({m: [r[j] for r in rows] for j, m in enumerate("ABC")})
        assert not any(f["significant"] for f in tests["friedman"])
        assert tests["wilcoxon"] == []


class TestConfig:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            config(["gbm"])

    def test_bad_tau(self):
        with pytest.raises(ConfigError):
            config(["lqr"], taus=[1.5])

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            config(["lqr"], folds=3)

    def test_file(self, tmp_path):
        p = tmp_path / "bench.json"
        p.write_text('{"models": ["lqr"], "datasets": ["data.csv"], "k": 3}')
        cfg = BenchmarkConfig.from_file(p)
        assert cfg.k == 3
        assert cfg.datasets[0]["path"] == str(tmp_path / "data.csv")
        assert cfg.datasets[0]["name"] == "data"
