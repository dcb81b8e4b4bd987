"""Local refinement of the numeric constants in a fixed expression structure."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize

from .expr import Node, evaluate_unchecked
from .loss import mean_pinball


def get_constants(expr: Node) -> np.ndarray:
    """Constant values in left-to-right (pre-order) tree order."""
    out = []
    stack = [expr]
    while stack:
        node = stack.pop()
        if node.kind == "constant":
            out.append(node.value)
        stack.extend(reversed(node.children))
    return np.array(out, dtype=float)


def set_constants(expr: Node, values) -> Node:
    """Write ``values`` back into the constant slots, keeping the structure."""
    it = iter(np.asarray(values, dtype=float).tolist())

    def rebuild(node: Node) -> Node:
        if node.kind == "constant":
            return Node("constant", value=next(it))
        if not node.children:
            return node
        return Node(node.kind, node.symbol, children=tuple(rebuild(c) for c in node.children))

    out = rebuild(expr)
    if next(it, None) is not None:
        raise ValueError("more values than constant slots")
    return out


def smoothing_band(y: np.ndarray) -> float:
    spread = float(np.max(y) - np.min(y))
    return 1e-6 * (spread if spread > 0 else 1.0)


def smoothed_pinball(tau: float, residuals: np.ndarray, delta: float) -> float:
    """Mean pinball loss with the kink replaced by a quadratic on ``|r| <= delta``.

    Each branch is shifted by ``delta/2`` so value and slope are continuous.
    """
    r = residuals
    slope = np.where(r >= 0, tau, 1.0 - tau)
    quad = slope * r * r / (2.0 * delta)
    lin = np.where(r >= 0, tau * (r - 0.5 * delta), (tau - 1.0) * (r + 0.5 * delta))
    return float(np.mean(np.where(np.abs(r) <= delta, quad, lin)))


class _Objective:
    def __init__(self, expr: Node, X: np.ndarray, y: np.ndarray, tau: float, delta: float):
        self.expr, self.X, self.y, self.tau, self.delta = expr, X, y, tau, delta

    def __call__(self, c: np.ndarray) -> float:
        pred = evaluate_unchecked(set_constants(self.expr, c), self.X)
        if not np.all(np.isfinite(pred)):
            return math.inf
        return smoothed_pinball(self.tau, self.y - pred, self.delta)

    def gradient(self, c: np.ndarray, h: float | None = None) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        grad = np.empty_like(c)
        for i in range(c.size):
            step = h if h is not None else 1e-7 * max(1.0, abs(c[i]))
            up, down = c.copy(), c.copy()
            up[i] += step
            down[i] -= step
            grad[i] = (self(up) - self(down)) / (2.0 * step)
        return grad


def smoothed_pinball_gradient(
    expr: Node, constants, X, y, tau: float, h: float, delta: float | None = None
) -> np.ndarray:
    """Central-difference gradient of the smoothed loss w.r.t. the constants."""
    if h <= 0:
        raise ValueError("step h must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if delta is None:
        delta = smoothing_band(y)
    return _Objective(expr, X, y, tau, delta).gradient(np.asarray(constants, dtype=float), h)


def optimize_constants_with_loss(
    expr: Node,
    X: np.ndarray,
    y: np.ndarray,
    tau: float,
    iterations: int = 8,
    nrestarts: int = 2,
    rng: np.random.Generator | None = None,
    perturbation_factor: float = 0.076,
    loss: float | None = None,
) -> tuple[Node, float]:
    """As :func:`optimize_constants`, also returning the exact training loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if loss is None:
        loss = mean_pinball(tau, y, evaluate_unchecked(expr, X))
    c0 = get_constants(expr)
    if c0.size == 0:
        return expr, loss
    rng = rng if rng is not None else np.random.default_rng()
    objective = _Objective(expr, X, y, tau, smoothing_band(y))
    starts = [c0] + [c0 * (1.0 + perturbation_factor * rng.standard_normal(c0.size)) for _ in range(nrestarts)]
    best_expr, best_loss = expr, loss
    for start in starts:
        if not math.isfinite(objective(start)):
            continue
        with np.errstate(all="ignore"):
            res = minimize(
                objective,
                start,
                jac=objective.gradient,
                method="BFGS",
                options={"maxiter": iterations, "gtol": 1e-8},
            )
        if not np.all(np.isfinite(res.x)):
            continue
        candidate = set_constants(expr, res.x)
        cand_loss = mean_pinball(tau, y, evaluate_unchecked(candidate, X))
        if cand_loss < best_loss:
            best_expr, best_loss = candidate, cand_loss
    return best_expr, best_loss


def optimize_constants(
    expr: Node,
    X,
    y,
    tau: float,
    iterations: int = 8,
    nrestarts: int = 2,
    rng: np.random.Generator | None = None,
    perturbation_factor: float = 0.076,
) -> Node:
    """BFGS on the smoothed pinball loss from the current constants plus
    ``nrestarts`` perturbed starts. Returns the input unchanged unless the
    exact pinball loss improves.
    """
    return optimize_constants_with_loss(expr, X, y, tau, iterations, nrestarts, rng, perturbation_factor)[0]
