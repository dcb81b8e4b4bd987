"""Transparent comparison models: linear quantile regression and a quantile tree."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .data import Dataset
from .expr import ArityError


def _check_arity(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != d:
        raise ArityError(f"model expects {d} features, got {X.shape[1]}")
    return X


def order_statistic_quantile(values, tau: float) -> float:
    """Lower order statistic ``y_(ceil(tau*m))``, no interpolation."""
    v = np.sort(np.asarray(values, dtype=float))
    return float(v[_quantile_rank(v.size, tau) - 1])


def _quantile_rank(m: int, tau: float) -> int:
    # round() guards against tau*m landing a hair above an integer
    return max(1, math.ceil(round(tau * m, 9)))


# --------------------------------------------------------------------------
# linear quantile regression


@dataclass(frozen=True)
class LinearQuantileModel:
    coefficients: tuple[float, ...]
    intercept: float
    tau: float
    rank_deficient: bool = False

    @property
    def parsimony(self) -> int:
        return len(self.coefficients) + 1

    def predict(self, X) -> np.ndarray:
        X = _check_arity(X, len(self.coefficients))
        return X @ np.asarray(self.coefficients) + self.intercept

    def to_dict(self) -> dict:
        return {
            "type": "lqr",
            "tau": self.tau,
            "coefficients": list(self.coefficients),
            "intercept": self.intercept,
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LinearQuantileModel:
        return cls(tuple(d["coefficients"]), d["intercept"], d["tau"], d.get("rank_deficient", False))


def fit_linear_quantile(dataset: Dataset, tau: float) -> LinearQuantileModel:
    """Exact linear-programming fit of the affine tau-quantile predictor.

    ``min tau*sum(u) + (1-tau)*sum(v)`` subject to ``X b + b0 + u - v = y``,
    ``u, v >= 0``. Rank-deficient designs still return a minimiser, flagged.
    """
    X, y = dataset.features, dataset.target
    n, d = X.shape
    A = np.column_stack([np.ones(n), X])
    rank_deficient = bool(np.linalg.matrix_rank(A) < d + 1)
    eye = sparse.identity(n, format="csr")
    A_eq = sparse.hstack([sparse.csr_matrix(A), eye, -eye], format="csr")
    cost = np.concatenate([np.zeros(d + 1), np.full(n, tau), np.full(n, 1.0 - tau)]) / n
    bounds = [(None, None)] * (d + 1) + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"quantile LP failed: {res.message}")
    beta = res.x[: d + 1]
    return LinearQuantileModel(tuple(float(b) for b in beta[1:]), float(beta[0]), tau, rank_deficient)


# --------------------------------------------------------------------------
# quantile decision tree


@dataclass(frozen=True)
class Leaf:
    value: float
    n: int


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


def _count_nodes(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 1
    return 1 + _count_nodes(node.left) + _count_nodes(node.right)


def _route(node: TreeNode, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    if isinstance(node, Leaf):
        out[rows] = node.value
        return
    go_left = X[rows, node.feature] < node.threshold
    _route(node.left, X, rows[go_left], out)
    _route(node.right, X, rows[~go_left], out)


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"value": node.value, "n": node.n}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "value" in d:
        return Leaf(d["value"], d["n"])
    return Split(d["feature"], d["threshold"], _node_from_dict(d["left"]), _node_from_dict(d["right"]))


@dataclass(frozen=True)
class QuantileTreeModel:
    root: TreeNode
    d: int
    tau: float
    min_samples_leaf: int

    @property
    def parsimony(self) -> int:
        return _count_nodes(self.root)

    def predict(self, X) -> np.ndarray:
        """Route rows to leaves; ``x < t`` goes left, ``x >= t`` right."""
        X = _check_arity(X, self.d)
        out = np.empty(X.shape[0])
        _route(self.root, X, np.arange(X.shape[0]), out)
        return out

    def to_dict(self) -> dict:
        return {
            "type": "qdt",
            "tau": self.tau,
            "d": self.d,
            "min_samples_leaf": self.min_samples_leaf,
            "root": _node_to_dict(self.root),
        }

    @classmethod
    def from_dict(cls, d: dict) -> QuantileTreeModel:
        return cls(_node_from_dict(d["root"]), d["d"], d["tau"], d["min_samples_leaf"])


def _leaf_loss(sorted_y: np.ndarray, tau: float) -> float:
    m = sorted_y.size
    r = _quantile_rank(m, tau)
    q = sorted_y[r - 1]
    below = (r - 1) * q - sorted_y[: r - 1].sum()
    above = sorted_y[r:].sum() - (m - r) * q
    return tau * above + (1.0 - tau) * below


class _Fenwick:
    """Counts and sums over value ranks, for running order statistics."""

    def __init__(self, values: np.ndarray):
        self.values = values.tolist()
        self.n = len(self.values)
        self.count = [0] * (self.n + 1)
        self.total = [0.0] * (self.n + 1)
        self.log = 1 << (self.n.bit_length() - 1) if self.n else 0

    def add(self, rank: int) -> None:
        v = self.values[rank]
        i = rank + 1
        while i <= self.n:
            self.count[i] += 1
            self.total[i] += v
            i += i & -i

    def kth(self, k: int) -> tuple[int, float]:
        """Rank of the k-th smallest present value (1-based k), and the sum of the k-1 below it."""
        pos, acc, step = 0, 0.0, self.log
        while step:
            nxt = pos + step
            if nxt <= self.n and self.count[nxt] < k:
                pos = nxt
                k -= self.count[nxt]
                acc += self.total[nxt]
            step >>= 1
        return pos, acc


def _prefix_losses(y_ranked: np.ndarray, ranks: np.ndarray, tau: float) -> np.ndarray:
    """Quantile-leaf pinball loss of every prefix ``y[:k]``, k = 1..m."""
    tree = _Fenwick(y_ranked)
    values = tree.values
    out = np.empty(len(ranks))
    total = 0.0
    for k, rank in enumerate(ranks.tolist(), start=1):
        tree.add(rank)
        total += values[rank]
        r = _quantile_rank(k, tau)
        qrank, below_sum = tree.kth(r)
        q = values[qrank]
        below = (r - 1) * q - below_sum
        above = (total - below_sum - q) - (k - r) * q
        out[k - 1] = tau * above + (1.0 - tau) * below
    return out


def _best_split(X: np.ndarray, y: np.ndarray, tau: float, min_leaf: int):
    m = y.size
    order_y = np.argsort(y, kind="stable")
    y_ranked = y[order_y]
    rank_of = np.empty(m, dtype=int)
    rank_of[order_y] = np.arange(m)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ranks = rank_of[order]
        left = _prefix_losses(y_ranked, ranks, tau)
        right = _prefix_losses(y_ranked, ranks[::-1], tau)[::-1]
        # split after position k-1 (left has k rows): k in [min_leaf, m - min_leaf]
        k = np.arange(min_leaf, m - min_leaf + 1)
        if k.size == 0:
            continue
        valid = xs[k - 1] < xs[k]
        if not valid.any():
            continue
        k = k[valid]
        totals = left[k - 1] + right[k]
        i = int(np.argmin(totals))
        if best is None or totals[i] < best[0]:
            kk = int(k[i])
            best = (float(totals[i]), j, 0.5 * (xs[kk - 1] + xs[kk]))
    return best


def _grow(X, y, tau, min_leaf, depth, max_depth) -> TreeNode:
    sorted_y = np.sort(y)
    leaf = Leaf(float(sorted_y[_quantile_rank(y.size, tau) - 1]), int(y.size))
    if y.size < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
        return leaf
    parent = _leaf_loss(sorted_y, tau)
    found = _best_split(X, y, tau, min_leaf)
    scale = max(1.0, float(np.abs(sorted_y).max()))
    if found is None or found[0] >= parent - 1e-12 * scale * y.size:
        return leaf
    _, j, t = found
    mask = X[:, j] < t
    return Split(
        j,
        float(t),
        _grow(X[mask], y[mask], tau, min_leaf, depth + 1, max_depth),
        _grow(X[~mask], y[~mask], tau, min_leaf, depth + 1, max_depth),
    )


def fit_quantile_tree(
    dataset: Dataset, tau: float, min_samples_leaf: int = 5, max_depth: int | None = None
) -> QuantileTreeModel:
    """Greedy top-down tree minimising total pinball loss of the children.

    Leaves predict the lower order-statistic tau-quantile of their rows.
    Growth stops when no split lowers the loss or the leaf size would drop
    below ``min_samples_leaf``.
    """
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be positive")
    root = _grow(dataset.features, dataset.target, tau, min_samples_leaf, 0, max_depth)
    return QuantileTreeModel(root, dataset.d, tau, min_samples_leaf)


def fit_quantile_tree_grid(
    dataset: Dataset,
    tau: float,
    grid=(1, 2, 5, 10, 20, 50),
    k: int = 3,
    seed: int | None = 0,
) -> QuantileTreeModel:
    """Pick ``min_samples_leaf`` from ``grid`` by inner k-fold pinball loss, then refit."""
    from .data import kfold
    from .loss import mean_pinball

    plan = kfold(dataset, k=min(k, dataset.n), seed=seed)
    best_leaf, best_score = grid[0], math.inf
    for leaf in grid:
        losses = []
        for f in range(plan.k):
            train, test = plan.split(f)
            if train.size < 2 * leaf:
                break
            model = fit_quantile_tree(dataset.take(train), tau, leaf)
            losses.append(mean_pinball(tau, dataset.target[test], model.predict(dataset.features[test])))
        else:
            score = float(np.mean(losses))
            if score < best_score:
                best_leaf, best_score = leaf, score
    return fit_quantile_tree(dataset, tau, best_leaf)
