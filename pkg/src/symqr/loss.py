"""Pinball loss and the quantile evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateRangeError(ValueError):
    """Raised when the target has zero range, so nql is undefined."""


def check_tau(tau) -> float:
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in the open interval (0, 1), got {tau}")
    return tau


def pinball(tau, y, yhat):
    """Pinball loss of one prediction.

    Slope ``tau`` when the prediction is below the target and ``1 - tau``
    above it. Plain arithmetic, so exact rationals (``fractions.Fraction``)
    stay exact. Non-finite inputs give ``inf``.
    """
    check_tau(tau)
    if isinstance(y, float) or isinstance(yhat, float):
        if not (math.isfinite(y) and math.isfinite(yhat)):
            return math.inf
    err = y - yhat
    return tau * err if err >= 0 else (tau - 1) * err


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise ValueError("need at least one observation")
    return y, yhat


def pinball_losses(tau: float, y, yhat) -> np.ndarray:
    y, yhat = _pair(y, yhat)
    err = y - yhat
    return np.where(err >= 0, tau * err, (tau - 1) * err)


def mean_pinball(tau: float, y, yhat) -> float:
    """Mean pinball loss; ``inf`` if any prediction is non-finite."""
    check_tau(tau)
    y, yhat = _pair(y, yhat)
    if not np.all(np.isfinite(yhat)):
        return math.inf
    return float(np.mean(pinball_losses(tau, y, yhat)))


def normalized_quantile_loss(tau: float, y, yhat) -> float:
    """Mean pinball loss divided by the target range of the same sample."""
    y, yhat = _pair(y, yhat)
    spread = float(np.max(y) - np.min(y))
    if spread <= 0:
        raise DegenerateRangeError("target vector is constant; nql undefined")
    return mean_pinball(tau, y, yhat) / spread


def empirical_coverage(y, yhat) -> float:
    """Fraction of targets at or below their prediction (ties are covered)."""
    y, yhat = _pair(y, yhat)
    return float(np.mean(y <= yhat))


def absolute_coverage_error(tau: float, coverage: float) -> float:
    return abs(coverage - tau)


@dataclass(frozen=True)
class MetricRecord:
    nql: float
    ace: float
    coverage: float
    mean_pinball: float
    parsimony: int | None = None


def score(tau: float, y, yhat, parsimony: int | None = None) -> MetricRecord:
    check_tau(tau)
    cov = empirical_coverage(y, yhat)
    return MetricRecord(
        nql=normalized_quantile_loss(tau, y, yhat),
        ace=absolute_coverage_error(tau, cov),
        coverage=cov,
        mean_pinball=mean_pinball(tau, y, yhat),
        parsimony=parsimony,
    )
