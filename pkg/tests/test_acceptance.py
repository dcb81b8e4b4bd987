"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Criteria 7, 8 and 10 run real searches and take several minutes in total.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from symqr import expr as ex
from symqr.baselines import fit_linear_quantile
from symqr.bench import BenchmarkConfig, run
from symqr.cli import main
from symqr.constopt import get_constants, optimize_constants, set_constants, smoothed_pinball_gradient
from symqr.data import from_arrays, kfold, synth_heteroskedastic, write_csv
from symqr.loss import mean_pinball, pinball, score
from symqr.pareto import ParetoFront
from symqr.search import SearchConfig, evolve
from symqr.stats import bonferroni, friedman_test, wilcoxon_signed_rank

from oracles import (
    friedman_by_rank_sums,
    lexical_parsimony,
    lp_vertex_quantile_fit,
    pareto_brute_force,
    signed_rank_p_by_enumeration,
)

MEDIAN_FUEL = "7.216*GCD + 0.003*GCD*(TP + 0.045*GCD - 7.22*AWC) + 1676.6"


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion straight to the terminal, then assert."""

    def report(number, ok, detail, limit_s=None, started=None):
        elapsed = None if started is None else time.perf_counter() - started
        timing = "" if elapsed is None else f" [{elapsed:.1f}s / limit {limit_s}s]"
        within = elapsed is None or elapsed < limit_s
        status = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\ncriterion {number}: {status}: {detail}{timing}")
        assert ok, detail
        assert within, f"criterion {number} took {elapsed:.1f}s, limit {limit_s}s"

    return report


def test_criterion_01_pinball_asymmetry(verdict):
    t0 = time.perf_counter()
    exact = Fraction(9, 10)
    ratio_exact = pinball(exact, 1, 0) / pinball(exact, 0, 1)
    ratio_float = pinball(0.9, 1.0, 0.0) / pinball(0.9, 0.0, 1.0)
    rng = np.random.default_rng(0)
    zeros = all(pinball(float(t), float(y), float(y)) == 0 for t, y in zip(rng.uniform(0.001, 0.999, 1000), rng.normal(0, 100, 1000)))
    ok = ratio_exact == 9 and math.isclose(ratio_float, 9.0, rel_tol=1e-12) and zeros
    verdict(1, ok, f"ratio exact={ratio_exact} float={ratio_float!r}; zero at exact fit for 1000 draws={zeros}", 1, t0)


def test_criterion_02_quantile_dependence_constants(verdict):
    t0 = time.perf_counter()
    y = np.zeros(100)
    half = mean_pinball(0.5, y, np.r_[-np.ones(50), np.ones(50)])
    ninth = mean_pinball(0.9, y, np.r_[-np.ones(10), np.ones(90)])
    tau = Fraction(9, 10)
    ninth_exact = (10 * pinball(tau, 0, -1) + 90 * pinball(tau, 0, 1)) / 100
    half_exact = (50 * pinball(Fraction(1, 2), 0, -1) + 50 * pinball(Fraction(1, 2), 0, 1)) / 100
    ok = half == 0.5 and half_exact == Fraction(1, 2) and ninth_exact == Fraction(18, 100) and math.isclose(ninth, 0.18, rel_tol=1e-12)
    verdict(2, ok, f"tau=.5 mean={half!r}; tau=.9 mean exact={ninth_exact} float={ninth!r}", 1, t0)


def test_criterion_03_parsimony_fixture(verdict):
    t0 = time.perf_counter()
    tree = ex.parse(MEDIAN_FUEL, ["GCD", "TP", "AWC"])
    score_tree, score_lex = ex.parsimony(tree), lexical_parsimony(MEDIAN_FUEL)
    rng = np.random.default_rng(3)
    additive = 0
    for _ in range(1000):
        e = ex.random_expr(3, 20, rng)
        additive += all(
            ex.parsimony(n) == ex.DEFAULT_COMPLEXITY[n.token] + sum(ex.parsimony(c) for c in n.children) for n in ex.walk(e)
        )
    ok = score_tree == 19 and score_lex == 19 and additive == 1000
    verdict(3, ok, f"tree={score_tree} lexical oracle={score_lex}; additivity {additive}/1000", 5, t0)


def test_criterion_04_pareto_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    front = ParetoFront(0.5)
    seen = []
    strict = True
    leaf = ex.constant(0.0)
    for _ in range(10_000):
        c, loss = int(rng.integers(1, 21)), float(rng.integers(0, 500)) / 100
        seen.append((c, loss))
        front.update(leaf, loss, c)
        losses = [e.loss for e in front]
        strict &= all(a > b for a, b in zip(losses, losses[1:]))
    matches = {(e.complexity, e.loss) for e in front} == pareto_brute_force(seen)
    verdict(4, strict and matches, f"front equals brute force={matches}; strict decrease every step={strict}", 10, t0)


def test_criterion_05_linear_quantile_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(20):
        X = rng.normal(size=(50, 2))
        y = X @ rng.normal(size=2) + rng.standard_t(3, 50)
        tau = float(rng.uniform(0.1, 0.9))
        model = fit_linear_quantile(from_arrays(X, y), tau)
        _, best = lp_vertex_quantile_fit(X, y, tau)
        worst = max(worst, abs(mean_pinball(tau, y, model.predict(X)) - best))
    verdict(5, worst <= 1e-6, f"max objective gap over 20 instances={worst:.3g}", 30, t0)


def test_criterion_06_constant_recovery(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 2, 200)
    y = 2 + 3 * x + rng.standard_normal(200)
    beta, _ = lp_vertex_quantile_fit(x[:, None], y, 0.5)
    fitted = optimize_constants(ex.parse("1.0 + 1.0 * x0"), x[:, None], y, 0.5, iterations=100, rng=np.random.default_rng(0))
    err = float(np.max(np.abs(get_constants(fitted) - beta)))
    worse = 0
    for _ in range(500):
        e = ex.random_expr(2, 12, rng)
        X = rng.uniform(-2, 2, (30, 2))
        t = rng.normal(size=30) + X[:, 0]
        tau = float(rng.uniform(0.05, 0.95))
        before = mean_pinball(tau, t, ex.evaluate(e, X))
        after = mean_pinball(tau, t, ex.evaluate(optimize_constants(e, X, t, tau, rng=rng), X))
        worse += after > before
    verdict(6, err < 0.1 and worse == 0, f"max coefficient error vs LP={err:.4f}; loss increased in {worse}/500", 60, t0)


@pytest.fixture(scope="module")
def heteroskedastic_runs():
    ds, _ = synth_heteroskedastic(2000, seed=0)
    train_idx, test_idx = kfold(ds, 5, 0).split(0)
    train, test = ds.take(train_idx), ds.take(test_idx)
    started = time.perf_counter()
    out = {}
    for tau in (0.5, 0.9):
        entry = evolve(train, tau, SearchConfig(seed=0)).select("elbow")
        out[tau] = (entry, score(tau, test.target, ex.evaluate(entry.expr, test.features), entry.complexity))
    return out, time.perf_counter() - started


def test_criterion_07_end_to_end_recovery(verdict, heteroskedastic_runs):
    runs, elapsed = heteroskedastic_runs
    (e5, r5), (e9, r9) = runs[0.5], runs[0.9]
    ok = r5.nql < 0.05 and r5.ace < 0.09 and r9.ace < 0.08 and elapsed < 600
    detail = (
        f"tau=.5 {ex.format_expr(e5.expr)} nql={r5.nql:.4f} ace={r5.ace:.4f}; "
        f"tau=.9 {ex.format_expr(e9.expr)} ace={r9.ace:.4f} [{elapsed:.0f}s / limit 600s]"
    )
    verdict(7, ok, detail)


def test_search_example_coverage_at_ninetieth(heteroskedastic_runs):
    """Held-out coverage error of the selected tau=.9 model stays under 0.05."""
    runs, _ = heteroskedastic_runs
    assert runs[0.9][1].ace < 0.05


ORDERING_SEARCH = {"populations": 8, "niterations": 8}


def test_criterion_08_ordering_over_suite(verdict):
    t0 = time.perf_counter()
    datasets = [{"synth": kind, "n": 500, "seed": s} for kind in ("linear", "heteroskedastic", "trig") for s in (1, 2)]
    cfg = BenchmarkConfig.from_dict(
        {"models": ["sqr", "lqr"], "datasets": datasets, "taus": [0.5, 0.9], "k": 5, "seed": 0, "search": ORDERING_SEARCH}
    )
    report = run(cfg)
    parts, ok = [], True
    for tau in (0.5, 0.9):
        sqr, lqr = report.mean("sqr", tau, "nql"), report.mean("lqr", tau, "nql")
        ok &= sqr is not None and lqr is not None and sqr <= lqr
        parts.append(f"tau={tau} sqr={sqr:.4f} lqr={lqr:.4f}")
    verdict(8, ok, "; ".join(parts), 1800, t0)


def test_criterion_09_statistics(verdict):
    t0 = time.perf_counter()
    w = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    _, p_enum = signed_rank_p_by_enumeration([1, 2, 3, 4, 5])
    rng = np.random.default_rng(9)
    agree = 0
    for _ in range(100):
        S = rng.integers(0, 5, (int(rng.integers(3, 12)), int(rng.integers(2, 6)))).astype(float)
        S[0, 0] += 0.5  # keep at least one row untied
        agree += math.isclose(friedman_test(S).statistic, friedman_by_rank_sums(S), rel_tol=1e-10, abs_tol=1e-12)
    b6, b18 = bonferroni(0.05, 6), bonferroni(0.05, 18)
    ok = w.statistic == 0 and w.p_value == 0.0625 and p_enum == 0.0625 and agree == 100 and round(b6, 5) == 0.00833 and round(b18, 5) == 0.00278
    verdict(9, ok, f"wilcoxon T={w.statistic} p={w.p_value} (enumeration {p_enum}); friedman {agree}/100; bonferroni {b6:.5f} {b18:.5f}", 10, t0)


def test_criterion_10_deterministic_fit(verdict, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    X = rng.uniform(-1, 1, (300, 2))
    data = tmp_path / "d.csv"
    write_csv(from_arrays(X, X[:, 0] * X[:, 1] + 0.1 * rng.normal(size=300)), data)
    cfg = tmp_path / "search.cfg"
    cfg.write_text("niterations = 4\npopulations = 4\n")
    fronts = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = main(["fit", str(data), "--tau", "0.9", "--seed", "42", "--config", str(cfg), "--out", str(out), "--deterministic"])
        fronts.append((code, (out / "front.csv").read_bytes()))
    ok = fronts[0][0] == fronts[1][0] == 0 and fronts[0][1] == fronts[1][1]
    verdict(10, ok, f"exit codes {fronts[0][0]},{fronts[1][0]}; fronts byte-identical={fronts[0][1] == fronts[1][1]} ({len(fronts[0][1])} bytes)", 120, t0)


def test_criterion_11_gradient_check(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    e = ex.parse("1.0 + 1.0 * sin(1.0 * x0) + 1.0 * x1")
    X = rng.uniform(-2, 2, (60, 2))
    y = 3 * rng.normal(size=60)
    worst, checked = 0.0, 0
    while checked < 100:
        c = rng.normal(size=4)
        if np.min(np.abs(y - ex.evaluate(set_constants(e, c), X))) < 1e-2:
            continue  # too close to a kink
        g1 = smoothed_pinball_gradient(e, c, X, y, 0.7, h=1e-6)
        g2 = smoothed_pinball_gradient(e, c, X, y, 0.7, h=1e-5)
        worst = max(worst, float(np.max(np.abs(g1 - g2) / np.maximum(np.abs(g2), 1e-12))))
        checked += 1
    t = np.arange(20.0)
    tau, level = 0.8, 13.5
    above, below = np.mean(t > level), np.mean(t < level)
    g = smoothed_pinball_gradient(ex.parse("1.0"), [level], np.zeros((20, 1)), t, tau, h=1e-5)[0]
    analytic = -above * tau + below * (1 - tau)
    ok = worst < 1e-5 and abs(g - analytic) < 1e-6
    verdict(11, ok, f"max relative disagreement={worst:.2e}; constant gradient {g:.6f} vs analytic {analytic:.6f}", 5, t0)
