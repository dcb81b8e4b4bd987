"""Expression trees: evaluation, complexity scoring, simplification and text I/O.

Trees are immutable. Feature leaves hold integer column indices; readable
names are supplied separately when parsing or formatting.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterator, Mapping, Sequence

import numpy as np

BINARY_OPS = ("add", "sub", "mul", "div")
UNARY_OPS = ("square", "sin", "cos", "exp", "log", "sqrt")

#: Token complexity weights (feature and constant leaves included).
DEFAULT_COMPLEXITY: Mapping[str, int] = MappingProxyType(
    {
        "add": 1,
        "sub": 1,
        "mul": 1,
        "feature": 1,
        "constant": 1,
        "div": 2,
        "square": 2,
        "sin": 3,
        "cos": 3,
        "exp": 4,
        "log": 4,
        "sqrt": 4,
    }
)

_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}


class ExpressionError(ValueError):
    """Base class for malformed expressions and bad evaluation inputs."""


class ArityError(ExpressionError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownOperatorError(ExpressionSyntaxError):
    pass


class UnknownFeatureError(ExpressionSyntaxError):
    pass


@dataclass(frozen=True, slots=True)
class Node:
    """One token plus its ordered subtrees.

    ``kind`` is one of ``"binary"``, ``"unary"``, ``"feature"``, ``"constant"``.
    """

    kind: str
    symbol: str = ""
    index: int = -1
    value: float = 0.0
    children: tuple[Node, ...] = ()

    def __post_init__(self):
        if self.kind == "binary":
            ok = self.symbol in BINARY_OPS and len(self.children) == 2
        elif self.kind == "unary":
            ok = self.symbol in UNARY_OPS and len(self.children) == 1
        elif self.kind == "feature":
            ok = self.index >= 0 and not self.children
        elif self.kind == "constant":
            ok = not self.children
        else:
            ok = False
        if not ok:
            raise ExpressionError(f"malformed node: {self.kind} {self.symbol!r}")

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def token(self) -> str:
        """Key into a complexity table."""
        return self.symbol if self.children else self.kind

    @property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    @property
    def depth(self) -> int:
        return 1 + max((c.depth for c in self.children), default=0)

    def __str__(self) -> str:
        return format_expr(self)


def feature(index: int) -> Node:
    return Node("feature", index=int(index))


def constant(value: float) -> Node:
    return Node("constant", value=float(value))


def unary(symbol: str, child: Node) -> Node:
    return Node("unary", symbol, children=(child,))


def binary(symbol: str, left: Node, right: Node) -> Node:
    return Node("binary", symbol, children=(left, right))


def walk(expr: Node) -> Iterator[Node]:
    """Pre-order traversal."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def replace_at(expr: Node, position: int, new: Node) -> Node:
    """Return a copy of ``expr`` with the pre-order node ``position`` swapped for ``new``."""
    if position == 0:
        return new
    offset = 1
    children = list(expr.children)
    for i, child in enumerate(children):
        n = child.size
        if position < offset + n:
            children[i] = replace_at(child, position - offset, new)
            return Node(expr.kind, expr.symbol, expr.index, expr.value, tuple(children))
        offset += n
    raise IndexError(position)


def max_feature_index(expr: Node) -> int:
    return max((n.index for n in walk(expr) if n.kind == "feature"), default=-1)


def parsimony(expr: Node, table: Mapping[str, int] = DEFAULT_COMPLEXITY) -> int:
    """Sum of token weights over the whole tree."""
    return sum(table[n.token] for n in walk(expr))


# --------------------------------------------------------------------------
# evaluation

_UNARY_FUNCS = {
    "square": np.square,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}
_BINARY_FUNCS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def _eval(node: Node, X: np.ndarray):
    if node.kind == "feature":
        return X[:, node.index]
    if node.kind == "constant":
        return node.value
    if node.kind == "unary":
        return _UNARY_FUNCS[node.symbol](_eval(node.children[0], X))
    left, right = node.children
    return _BINARY_FUNCS[node.symbol](_eval(left, X), _eval(right, X))


def evaluate_unchecked(expr: Node, X: np.ndarray) -> np.ndarray:
    """Fast path for callers that already validated ``X`` (2-D float, right arity)."""
    with np.errstate(all="ignore"):
        out = _eval(expr, X)
    if np.ndim(out) == 0:
        return np.full(X.shape[0], float(out))
    return out


def evaluate(expr: Node, X) -> np.ndarray:
    """Evaluate ``expr`` on each row of ``X``.

    Domain violations (log of a negative, division by zero, overflow) are not
    raised; they show up as ``nan``/``inf`` entries and callers check with
    :func:`numpy.isfinite`.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ExpressionError("features must be a non-empty 2-D matrix")
    k = max_feature_index(expr)
    if k >= X.shape[1]:
        raise ArityError(f"expression uses x{k} but data has {X.shape[1]} features")
    return np.array(evaluate_unchecked(expr, X), dtype=float)


# --------------------------------------------------------------------------
# simplification


def _const(node: Node, value: float | None = None) -> bool:
    return node.kind == "constant" and (value is None or node.value == value)


def _fold(node: Node) -> Node | None:
    if not all(c.kind == "constant" for c in node.children):
        return None
    args = [np.float64(c.value) for c in node.children]
    with np.errstate(all="ignore"):
        if node.kind == "unary":
            v = _UNARY_FUNCS[node.symbol](args[0])
        else:
            v = _BINARY_FUNCS[node.symbol](*args)
    v = float(v)
    return constant(v) if math.isfinite(v) else None


def _merge_constants(node: Node) -> Node | None:
    # c1 op (e op c2) -> e op (c1 op c2) for associative add/mul
    sym = node.symbol
    a, b = node.children
    if _const(a) and not _const(b):
        c, inner = a, b
    elif _const(b) and not _const(a):
        c, inner = b, a
    else:
        return None
    if inner.kind != "binary" or inner.symbol != sym:
        return None
    p, q = inner.children
    if _const(q) and not _const(p):
        e, c2 = p, q
    elif _const(p) and not _const(q):
        e, c2 = q, p
    else:
        return None
    merged = _fold(binary(sym, c, c2))
    return None if merged is None else binary(sym, e, merged)


def _simplify_node(node: Node) -> Node:
    folded = _fold(node)
    if folded is not None:
        return folded
    if node.kind != "binary":
        return node
    a, b = node.children
    sym = node.symbol
    if sym == "add":
        if _const(b, 0.0):
            return a
        if _const(a, 0.0):
            return b
    elif sym == "sub":
        if _const(b, 0.0):
            return a
        # 0 - (0 - e) -> e
        if _const(a, 0.0) and b.kind == "binary" and b.symbol == "sub" and _const(b.children[0], 0.0):
            return b.children[1]
    elif sym == "mul":
        if _const(b, 1.0):
            return a
        if _const(a, 1.0):
            return b
        if _const(a, 0.0) or _const(b, 0.0):
            return constant(0.0)
    elif sym == "div":
        if _const(b, 1.0):
            return a
    if sym in ("add", "mul"):
        merged = _merge_constants(node)
        if merged is not None:
            return _simplify_node(merged)
    return node


def simplify(expr: Node) -> Node:
    """Bottom-up constant folding and identity elimination.

    Never increases parsimony. ``x*0 -> 0`` may differ from the original
    where ``x`` itself is non-finite.
    """
    if expr.is_leaf:
        return expr
    children = tuple(simplify(c) for c in expr.children)
    if children != expr.children:
        expr = Node(expr.kind, expr.symbol, children=children)
    return _simplify_node(expr)


# --------------------------------------------------------------------------
# random construction


def _random_leaf(d: int, rng: np.random.Generator, p_feature: float) -> Node:
    if rng.random() < p_feature:
        return feature(int(rng.integers(d)))
    return constant(float(rng.standard_normal()))


def random_tree(size: int, d: int, rng: np.random.Generator, p_feature: float = 0.5) -> Node:
    """Random tree with exactly ``size`` nodes."""
    if size <= 1:
        return _random_leaf(d, rng, p_feature)
    if size == 2 or rng.random() < 0.3:
        op = UNARY_OPS[int(rng.integers(len(UNARY_OPS)))]
        return unary(op, random_tree(size - 1, d, rng, p_feature))
    left = int(rng.integers(1, size - 1))
    op = BINARY_OPS[int(rng.integers(len(BINARY_OPS)))]
    return binary(
        op,
        random_tree(left, d, rng, p_feature),
        random_tree(size - 1 - left, d, rng, p_feature),
    )


def random_expr(d: int, max_size: int, rng: np.random.Generator) -> Node:
    """Draw a size uniformly from ``1..max_size``, then a tree of that size."""
    if d < 1 or max_size < 1:
        raise ValueError("need d >= 1 and max_size >= 1")
    size = int(rng.integers(1, max_size + 1))
    return random_tree(size, d, rng)


# --------------------------------------------------------------------------
# text grammar

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_FEATURE_RE = re.compile(r"x(\d+)\Z")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, names: Sequence[str] | None):
        self.tokens = _tokenize(text)
        self.i = 0
        self.names = {n: i for i, n in enumerate(names)} if names else {}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            raise ExpressionSyntaxError(f"expected {value!r}, got {text or 'end of input'!r}", pos)

    def parse(self) -> Node:
        node = self.sum()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected {text!r}", pos)
        return node

    def sum(self) -> Node:
        node = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = binary("add" if op == "+" else "sub", node, self.product())
        return node

    def product(self) -> Node:
        node = self.signed()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = binary("mul" if op == "*" else "div", node, self.signed())
        return node

    def signed(self) -> Node:
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            operand = self.signed()
            if operand.kind == "constant":
                return constant(-operand.value)
            return binary("sub", constant(0.0), operand)
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        while self.peek()[1] == "^":
            self.take()
            kind, text, pos = self.take()
            if kind != "num" or float(text) != 2.0:
                raise UnknownOperatorError(f"only '^2' is supported, got '^{text}'", pos)
            node = unary("square", node)
        return node

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return constant(float(text))
        if text == "(":
            node = self.sum()
            self.expect(")")
            return node
        if kind == "name":
            if self.peek()[1] == "(":
                self.take()
                if text not in UNARY_OPS:
                    raise UnknownOperatorError(f"unknown operator {text!r}", pos)
                arg = self.sum()
                self.expect(")")
                return unary(text, arg)
            if text in self.names:
                return feature(self.names[text])
            m = _FEATURE_RE.match(text)
            if m:
                return feature(int(m.group(1)))
            raise UnknownFeatureError(f"unknown feature {text!r}", pos)
        raise ExpressionSyntaxError(f"unexpected {text or 'end of input'!r}", pos)


def parse(text: str, names: Sequence[str] | None = None) -> Node:
    """Parse infix text such as ``"2.5*x0 + sin(x1)^2"``.

    Feature identifiers are ``x<k>`` or entries of ``names``. A leading minus
    on a numeric literal yields a negative constant; on anything else it is
    read as ``0 - (...)``.
    """
    return _Parser(text, names).parse()


def _fmt(node: Node, names: Sequence[str] | None) -> tuple[str, int]:
    if node.kind == "feature":
        if names is not None and node.index < len(names):
            return names[node.index], 4
        return f"x{node.index}", 4
    if node.kind == "constant":
        return repr(node.value), 4
    if node.kind == "unary":
        child = node.children[0]
        inner, prec = _fmt(child, names)
        if node.symbol == "square":
            if prec < 3 or (child.kind == "constant" and math.copysign(1.0, child.value) < 0):
                inner = f"({inner})"
            return f"{inner}^2", 3
        return f"{node.symbol}({inner})", 4
    prec = _PREC[node.symbol]
    left, lp = _fmt(node.children[0], names)
    right, rp = _fmt(node.children[1], names)
    if lp < prec:
        left = f"({left})"
    if rp <= prec:
        right = f"({right})"
    return f"{left} {_INFIX[node.symbol]} {right}", prec


def format_expr(expr: Node, names: Sequence[str] | None = None) -> str:
    """Canonical infix text; ``parse(format_expr(e)) == e``."""
    return _fmt(expr, names)[0]
