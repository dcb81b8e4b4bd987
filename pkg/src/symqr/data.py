"""Tabular datasets: CSV ingestion, k-fold plans, subsampling, synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm


class DataError(ValueError):
    """Unreadable or invalid tabular input."""


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    names: tuple[str, ...]
    target_name: str = "y"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.target, dtype=float).ravel()
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if X.shape[1] < 1:
            raise DataError("need at least one feature column")
        if len(self.names) != X.shape[1]:
            raise DataError("one name per feature column required")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("non-finite values in dataset")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> Dataset:
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features[rows], self.target[rows], self.names, self.target_name)


def from_arrays(X, y, names: Sequence[str] | None = None, target_name: str = "y") -> Dataset:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = [f"x{i}" for i in range(X.shape[1])]
    return Dataset(X, y, tuple(names), target_name)


def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a headed numeric CSV. Rejects empty, missing or non-finite cells."""
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        rows = []
        bad = []
        for row in reader:
            if not row:
                continue
            line = reader.line_num
            if len(row) != len(header):
                bad.append(f"line {line}: expected {len(header)} cells, got {len(row)}")
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                bad.append(f"line {line}: non-numeric or missing cell")
                continue
            if not all(math.isfinite(v) for v in values):
                bad.append(f"line {line}: non-finite value")
                continue
            rows.append(values)
    if bad:
        raise DataError(f"{path}: rejected rows\n  " + "\n  ".join(bad))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def load_csv(path: str | Path, target: str | None = None) -> Dataset:
    """Load a dataset; the target is the last column unless named."""
    header, table = read_table(path)
    if len(header) < 2:
        raise DataError(f"{path}: need at least one feature and one target column")
    if target is None:
        t = len(header) - 1
    elif target in header:
        t = header.index(target)
    else:
        raise DataError(f"{path}: no column named {target!r}")
    cols = [i for i in range(len(header)) if i != t]
    if table.shape[0] < 2:
        raise DataError(f"{path}: need at least two rows")
    return Dataset(table[:, cols], table[:, t], tuple(header[i] for i in cols), header[t])


def write_csv(dataset: Dataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([*dataset.names, dataset.target_name])
        for row, t in zip(dataset.features, dataset.target):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(t))])


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int | None

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """Row indices (train, test) for one fold, each in ascending order."""
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def kfold(n: int | Dataset, k: int = 5, seed: int | None = 0) -> FoldPlan:
    """Shuffled k-fold assignment; fold sizes differ by at most one."""
    if isinstance(n, Dataset):
        n = n.n
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=int)
    assignments[perm] = np.arange(n) % k
    return FoldPlan(k, assignments, seed)


def subsample(dataset: Dataset, max_n: int, seed: int | None = 0) -> Dataset:
    """Uniform row sample without replacement; identity when ``n <= max_n``."""
    if max_n < 1:
        raise ValueError("max_n must be positive")
    if dataset.n <= max_n:
        return dataset
    rows = np.random.default_rng(seed).choice(dataset.n, size=max_n, replace=False)
    return dataset.take(np.sort(rows))


# --------------------------------------------------------------------------
# synthetic generators

QuantileFn = Callable[[np.ndarray, float], np.ndarray]


def synth_heteroskedastic(
    n: int, beta: float = 2.0, sigma: float = 1.0, seed: int | None = 0
) -> tuple[Dataset, QuantileFn]:
    """``y = beta*x + x*sigma*eps`` with ``x ~ U(0, 1)``, ``eps ~ N(0, 1)``.

    Also returns the exact conditional quantile ``q(X, tau)``.
    """
    if n < 10 or sigma <= 0:
        raise ValueError("need n >= 10 and sigma > 0")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    y = beta * x + x * sigma * rng.standard_normal(n)

    def quantile(X, tau):
        x0 = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        return beta * x0 + x0 * sigma * norm.ppf(tau)

    return from_arrays(x[:, None], y), quantile


def synth_linear(
    n: int, d: int = 2, noise: float = 0.5, seed: int | None = 0
) -> tuple[Dataset, QuantileFn]:
    """Homoskedastic linear target with Gaussian noise."""
    rng = np.random.default_rng(seed)
    coef = rng.uniform(-3.0, 3.0, d)
    intercept = float(rng.uniform(-2.0, 2.0))
    X = rng.uniform(-2.0, 2.0, (n, d))
    y = X @ coef + intercept + noise * rng.standard_normal(n)

    def quantile(Xq, tau):
        return np.asarray(Xq, dtype=float) @ coef + intercept + noise * norm.ppf(tau)

    return from_arrays(X, y), quantile


def synth_trig(
    n: int, amplitude: float = 2.0, noise: float = 0.3, seed: int | None = 0
) -> tuple[Dataset, QuantileFn]:
    """``y = amplitude*sin(x0) + x1 + noise`` on ``x0 ~ U(-3, 3)``, ``x1 ~ U(0, 1)``."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(-3.0, 3.0, n), rng.uniform(0.0, 1.0, n)])
    y = amplitude * np.sin(X[:, 0]) + X[:, 1] + noise * rng.standard_normal(n)

    def quantile(Xq, tau):
        Xq = np.asarray(Xq, dtype=float)
        return amplitude * np.sin(Xq[:, 0]) + Xq[:, 1] + noise * norm.ppf(tau)

    return from_arrays(X, y), quantile


SYNTH_KINDS = {
    "heteroskedastic": synth_heteroskedastic,
    "linear": synth_linear,
    "trig": synth_trig,
}


def synth(kind: str, n: int, seed: int | None = 0, **kwargs) -> Dataset:
    try:
        generator = SYNTH_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {sorted(SYNTH_KINDS)}") from None
    return generator(n, seed=seed, **kwargs)[0]
