"""Fitted-model wrappers shared by the CLI and the benchmark harness."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .baselines import LinearQuantileModel, QuantileTreeModel
from .expr import ArityError, Node, evaluate, format_expr, max_feature_index, parse, parsimony


class Model(Protocol):
    tau: float

    @property
    def parsimony(self) -> int | None: ...

    def predict(self, X) -> np.ndarray: ...

    def to_dict(self) -> dict: ...


@dataclass(frozen=True)
class SymbolicModel:
    expr: Node
    tau: float
    features: tuple[str, ...] = ()
    target: str = "y"
    selection: str = "elbow"
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def d(self) -> int:
        return len(self.features) if self.features else max_feature_index(self.expr) + 1

    @property
    def parsimony(self) -> int:
        return parsimony(self.expr)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.features and X.shape[1] != len(self.features):
            raise ArityError(f"model expects {len(self.features)} features, got {X.shape[1]}")
        return evaluate(self.expr, X)

    def to_dict(self) -> dict:
        return {
            "type": "sqr",
            "tau": self.tau,
            "expression": format_expr(self.expr, self.features or None),
            "features": list(self.features),
            "target": self.target,
            "selection": self.selection,
            "complexity": self.parsimony,
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SymbolicModel:
        features = tuple(d.get("features") or ())
        return cls(parse(d["expression"], features or None), d["tau"], features, d.get("target", "y"), d.get("selection", "elbow"))


def model_from_dict(d: dict):
    kind = d.get("type")
    if kind == "sqr":
        return SymbolicModel.from_dict(d)
    if kind == "lqr":
        return LinearQuantileModel.from_dict(d)
    if kind == "qdt":
        return QuantileTreeModel.from_dict(d)
    raise ValueError(f"unknown model type {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    try:
        return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot load model {path}: {exc}") from exc


def model_features(model) -> Sequence[str]:
    return getattr(model, "features", ()) or ()


def model_arity(model) -> int:
    if isinstance(model, LinearQuantileModel):
        return len(model.coefficients)
    return model.d
