"""Loss-versus-complexity Pareto front and model selection from it."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import Node, format_expr, parse, parsimony


@dataclass(frozen=True)
class FrontEntry:
    complexity: int
    loss: float
    expr: Node


@dataclass
class ParetoFront:
    """Best expression per complexity level, kept non-dominated.

    Sorted by complexity, losses are strictly decreasing.
    """

    tau: float
    entries: dict[int, FrontEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.sorted())

    def sorted(self) -> list[FrontEntry]:
        return [self.entries[c] for c in sorted(self.entries)]

    def update(self, expr: Node, loss: float, complexity: int | None = None) -> bool:
        """Offer a candidate; return True if it made it onto the front."""
        if not math.isfinite(loss):
            return False
        c = parsimony(expr) if complexity is None else complexity
        # dominated by a simpler-or-equal entry with lower-or-equal loss
        for e in self.entries.values():
            if e.complexity <= c and e.loss <= loss:
                return False
        self.entries[c] = FrontEntry(c, float(loss), expr)
        for k in [k for k, e in self.entries.items() if k > c and e.loss >= loss]:
            del self.entries[k]
        return True

    def merge(self, other: ParetoFront) -> None:
        for e in other.sorted():
            self.update(e.expr, e.loss, e.complexity)

    def select(self, mode: str = "elbow") -> FrontEntry:
        """Pick one entry: ``"best-loss"`` or ``"elbow"``.

        The elbow is the entry farthest from the chord joining the simplest
        and the most accurate entries, on min-max normalised axes. Ties go to
        the lower complexity.
        """
        items = self.sorted()
        if not items:
            raise ValueError("cannot select from an empty front")
        if mode in ("best-loss", "best"):
            return min(items, key=lambda e: (e.loss, e.complexity))
        if mode != "elbow":
            raise ValueError(f"unknown selection mode {mode!r}")
        if len(items) <= 2:
            return items[0]
        c = np.array([e.complexity for e in items], dtype=float)
        loss = np.array([e.loss for e in items], dtype=float)
        c = (c - c[0]) / (c[-1] - c[0])
        loss = (loss - loss[-1]) / (loss[0] - loss[-1])
        # chord from (0, 1) to (1, 0): x + y - 1 = 0
        dist = np.abs(c + loss - 1.0) / math.sqrt(2.0)
        return items[int(np.argmax(dist))]

    def to_csv(self, names: Sequence[str] | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["complexity", "loss", "expression"])
        for e in self.sorted():
            writer.writerow([e.complexity, repr(e.loss), format_expr(e.expr, names)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, tau: float, names: Sequence[str] | None = None) -> ParetoFront:
        front = cls(tau)
        for row in csv.DictReader(io.StringIO(text)):
            front.update(parse(row["expression"], names), float(row["loss"]), int(row["complexity"]))
        return front
