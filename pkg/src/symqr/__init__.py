"""Symbolic quantile regression: evolve closed-form expressions that minimise
the pinball loss at a chosen quantile level."""

__version__ = "0.1.0"

from .expr import Node, evaluate, format_expr, parse, parsimony, simplify
from .loss import empirical_coverage, mean_pinball, normalized_quantile_loss, pinball
from .pareto import ParetoFront
from .search import SearchConfig, evolve

__all__ = [
    "Node",
    "ParetoFront",
    "SearchConfig",
    "empirical_coverage",
    "evaluate",
    "evolve",
    "format_expr",
    "mean_pinball",
    "normalized_quantile_loss",
    "parse",
    "parsimony",
    "pinball",
    "simplify",
]
