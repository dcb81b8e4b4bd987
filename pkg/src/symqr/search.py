"""Multi-population evolutionary search for pinball-loss expressions.

One *cycle* produces one offspring (two for crossover) inside one
population and ages every surviving member by one. An *iteration* is
``ncycles_per_iteration`` cycles in every population followed by a barrier:
simplification, constant optimisation, hall-of-fame merge and migration.
Populations only interact at barriers and always in index order, so results
do not depend on whether populations ran in parallel.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import expr as ex
from .constopt import get_constants, optimize_constants_with_loss
from .data import Dataset
from .expr import Node, parsimony
from .loss import check_tau, mean_pinball
from .pareto import ParetoFront

WORST = math.inf
FRECENCY_DECAY = 0.99

MUTATIONS = (
    "add_node",
    "insert_node",
    "delete_node",
    "do_nothing",
    "mutate_constant",
    "mutate_operator",
    "swap_operands",
    "randomize",
    "simplify",
)


class ConfigError(ValueError):
    pass


@dataclass
class SearchConfig:
    """Search hyperparameters. Field names follow the PySR parameter names,
    except ``parsimony_coefficient`` (file key ``parsimony``) and ``seed``
    (file key ``random_state``)."""

    niterations: int = 40
    populations: int = 15
    population_size: int = 33
    ncycles_per_iteration: int = 550
    maxsize: int = 20
    parsimony_coefficient: float = 0.0032
    adaptive_parsimony_scaling: float = 20.0
    weight_add_node: float = 0.79
    weight_insert_node: float = 5.1
    weight_delete_node: float = 1.7
    weight_do_nothing: float = 0.21
    weight_mutate_constant: float = 0.048
    weight_mutate_operator: float = 0.47
    weight_swap_operands: float = 0.1
    weight_randomize: float = 0.00023
    weight_simplify: float = 0.0020
    crossover_probability: float = 0.066
    annealing: bool = False
    alpha: float = 0.1
    perturbation_factor: float = 0.076
    tournament_selection_n: int = 10
    tournament_selection_p: float = 0.86
    fraction_replaced: float = 0.000364
    fraction_replaced_hof: float = 0.035
    topn: int = 12
    optimize_probability: float = 0.14
    optimizer_iterations: int = 8
    optimizer_nrestarts: int = 2
    should_simplify: bool = True
    should_optimize_constants: bool = True
    migration: bool = True
    hof_migration: bool = True
    procs: int = 1
    seed: int | None = 0

    _ALIASES = {"parsimony": "parsimony_coefficient", "random_state": "seed"}

    def __post_init__(self):
        self.validate()

    @property
    def mutation_weights(self) -> dict[str, float]:
        return {name: getattr(self, f"weight_{name}") for name in MUTATIONS}

    def validate(self) -> None:
        w = self.mutation_weights.values()
        problems = []
        if any(v < 0 for v in w) or not any(v > 0 for v in w):
            problems.append("mutation weights must be >= 0 with at least one > 0")
        if not 0 < self.tournament_selection_p <= 1:
            problems.append("tournament_selection_p must lie in (0, 1]")
        for name in ("populations", "population_size", "niterations", "maxsize", "tournament_selection_n"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.tournament_selection_n > self.population_size:
            problems.append("tournament_selection_n cannot exceed population_size")
        for name in ("crossover_probability", "fraction_replaced", "fraction_replaced_hof", "optimize_probability"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        if self.ncycles_per_iteration < 0 or self.topn < 0 or self.procs < 1:
            problems.append("ncycles_per_iteration and topn must be >= 0, procs >= 1")
        if self.alpha <= 0 or self.adaptive_parsimony_scaling < 0 or self.parsimony_coefficient < 0:
            problems.append("alpha must be > 0; parsimony and adaptive_parsimony_scaling >= 0")
        if problems:
            raise ConfigError("; ".join(problems))

    def replace(self, **changes) -> SearchConfig:
        return dataclasses.replace(self, **changes)

    # -- key/value file -----------------------------------------------------

    @classmethod
    def from_mapping(cls, mapping: dict) -> SearchConfig:
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for raw_key, raw in mapping.items():
            key = cls._ALIASES.get(raw_key, raw_key)
            if key not in types:
                raise ConfigError(f"unknown search parameter {raw_key!r}")
            kwargs[key] = _coerce(key, types[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> SearchConfig:
        """Read ``name = value`` lines; a ``[search]`` header is optional."""
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if not text.lstrip().startswith("["):
            text = "[search]\n" + text
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        values = {}
        for section in parser.sections():
            values.update(parser.items(section))
        return cls.from_mapping(values)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            key = {v: k for k, v in self._ALIASES.items()}.get(f.name, f.name)
            lines.append(f"{key} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(key: str, typ: str, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if typ == "bool":
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if typ == "int":
            return int(text)
        if typ == "int | None":
            return None if text.lower() == "none" else int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


# --------------------------------------------------------------------------
# individuals and populations


@dataclass(slots=True)
class Individual:
    expr: Node
    raw_loss: float
    complexity: int
    age: int = 0
    birth: int = 0
    penalized_fitness: float = WORST


@dataclass
class Population:
    members: list[Individual]
    rng: np.random.Generator
    frecency: np.ndarray
    births: int = 0
    hof: dict[int, tuple[float, Node]] = field(default_factory=dict)

    def record(self, ind: Individual) -> None:
        """Count a newly created member in the frecency table and local hall of fame."""
        self.frecency[ind.complexity] += 1.0
        if math.isfinite(ind.raw_loss):
            best = self.hof.get(ind.complexity)
            if best is None or ind.raw_loss < best[0]:
                self.hof[ind.complexity] = (ind.raw_loss, ind.expr)


class _Problem:
    """Training data plus the bits of config every fitness call needs."""

    def __init__(self, dataset: Dataset, tau: float, cfg: SearchConfig):
        self.X = np.ascontiguousarray(dataset.features)
        self.y = np.asarray(dataset.target)
        self.d = dataset.d
        self.tau = tau
        self.cfg = cfg

    def raw_loss(self, expr: Node) -> float:
        pred = ex.evaluate_unchecked(expr, self.X)
        if not np.all(np.isfinite(pred)):
            return WORST
        return mean_pinball(self.tau, self.y, pred)

    def make(self, expr: Node, pop: Population, raw_loss: float | None = None) -> Individual:
        ind = Individual(expr, self.raw_loss(expr) if raw_loss is None else raw_loss, parsimony(expr), 0, pop.births)
        pop.births += 1
        return ind


# --------------------------------------------------------------------------
# fitness and acceptance


def adaptive_parsimony_penalty(complexity: int, frecency, scaling: float) -> float:
    """``exp(scaling * share)`` where share is this complexity's fraction of the decayed counts."""
    frecency = np.asarray(frecency, dtype=float)
    total = float(frecency.sum())
    if total <= 0 or scaling == 0 or complexity >= frecency.size:
        return 1.0
    return math.exp(scaling * frecency[complexity] / total)


def penalized(raw_loss: float, complexity: int, frecency, cfg: SearchConfig) -> float:
    if not math.isfinite(raw_loss):
        return WORST
    return (
        raw_loss * adaptive_parsimony_penalty(complexity, frecency, cfg.adaptive_parsimony_scaling)
        + cfg.parsimony_coefficient * complexity
    )


def fitness(ind: Individual, dataset: Dataset, tau: float, cfg: SearchConfig, frecency=None) -> float:
    """Penalised fitness of ``ind`` on ``dataset`` (lower is better)."""
    pred = ex.evaluate(ind.expr, dataset.features)
    raw = mean_pinball(tau, dataset.target, pred)
    ind.raw_loss = raw
    ind.complexity = parsimony(ind.expr)
    freq = np.zeros(cfg.maxsize + 1) if frecency is None else frecency
    ind.penalized_fitness = penalized(raw, ind.complexity, freq, cfg)
    return ind.penalized_fitness


def _population_fitness(members: list[Individual], frecency: np.ndarray, cfg: SearchConfig) -> np.ndarray:
    raw = np.array([m.raw_loss for m in members])
    comp = np.array([m.complexity for m in members])
    total = frecency.sum()
    share = frecency[comp] / total if total > 0 else np.zeros(comp.size)
    with np.errstate(invalid="ignore", over="ignore"):
        fit = raw * np.exp(cfg.adaptive_parsimony_scaling * share) + cfg.parsimony_coefficient * comp
    fit[~np.isfinite(raw)] = WORST
    for m, f in zip(members, fit.tolist()):
        m.penalized_fitness = f
    return fit


def anneal_accept(
    old_fit: float,
    new_fit: float,
    temperature: float,
    alpha: float,
    rng: np.random.Generator,
    annealing: bool = True,
) -> bool:
    if new_fit <= old_fit:
        return True
    if not annealing or temperature <= 0 or not math.isfinite(new_fit):
        return False
    return bool(rng.random() < math.exp(-(new_fit - old_fit) / (alpha * temperature)))


# --------------------------------------------------------------------------
# selection


def _rank_order(members: list[Individual], idx) -> list[int]:
    return sorted(idx, key=lambda i: (members[i].penalized_fitness, members[i].complexity, members[i].birth))


def tournament_weights(n: int, p: float) -> np.ndarray:
    w = p * (1.0 - p) ** np.arange(n)
    return w / w.sum()


def tournament_select(
    members: list[Individual], n: int, p: float, rng: np.random.Generator, weights: np.ndarray | None = None
) -> Individual:
    """Sample ``n`` members without replacement; return rank k with prob ``∝ p(1-p)^k``.

    Ranking uses each member's current ``penalized_fitness``.
    """
    if not members:
        raise ValueError("empty population")
    idx = rng.choice(len(members), size=n, replace=False)
    ranked = _rank_order(members, idx.tolist())
    if weights is None:
        weights = tournament_weights(n, p)
    k = 0 if p >= 1.0 else int(rng.choice(n, p=weights))
    return members[ranked[k]]


# --------------------------------------------------------------------------
# variation operators


def choose_mutation(weights: dict[str, float], rng: np.random.Generator) -> str:
    names = list(weights)
    w = np.array([weights[k] for k in names], dtype=float)
    return names[int(rng.choice(len(names), p=w / w.sum()))]


def _applicable(expr: Node, weights: dict[str, float]) -> dict[str, float]:
    nodes = list(ex.walk(expr))
    has_op = any(not n.is_leaf for n in nodes)
    out = dict(weights)
    if not any(n.kind == "constant" for n in nodes):
        out["mutate_constant"] = 0.0
    if not has_op:
        out["mutate_operator"] = 0.0
        out["delete_node"] = 0.0
    if not any(n.kind == "binary" for n in nodes):
        out["swap_operands"] = 0.0
    if sum(out.values()) <= 0:
        out["do_nothing"] = 1.0
    return out


def _random_op(rng) -> tuple[str, int]:
    ops = ex.BINARY_OPS + ex.UNARY_OPS
    sym = ops[int(rng.integers(len(ops)))]
    return sym, 2 if sym in ex.BINARY_OPS else 1


def _wrap(sym: str, arity: int, child: Node, d: int, rng) -> Node:
    if arity == 1:
        return ex.unary(sym, child)
    other = ex.random_tree(1, d, rng)
    if rng.random() < 0.5:
        return ex.binary(sym, child, other)
    return ex.binary(sym, other, child)


def perturb_constant(value: float, perturbation_factor: float, temperature: float, rng) -> float:
    """Multiplicative jitter: factor ``(1 + pf*T + 0.1)^u``, ``u ~ U(0,1)``, inverted half the time."""
    max_change = perturbation_factor * temperature + 1.1
    factor = max_change ** rng.random()
    if rng.random() < 0.5:
        factor = 1.0 / factor
    out = value * factor
    if rng.random() < 0.01:
        out = -out
    return out


def apply_mutation(kind: str, expr: Node, d: int, rng: np.random.Generator, cfg: SearchConfig, temperature: float = 1.0) -> Node | None:
    """One structural edit. Returns None when the edit does not apply."""
    nodes = list(ex.walk(expr))
    if kind == "do_nothing":
        return expr
    if kind == "mutate_constant":
        pos = [i for i, n in enumerate(nodes) if n.kind == "constant"]
        if not pos:
            return None
        i = pos[int(rng.integers(len(pos)))]
        value = perturb_constant(nodes[i].value, cfg.perturbation_factor, temperature, rng)
        if not math.isfinite(value):
            return None
        return ex.replace_at(expr, i, ex.constant(value))
    if kind == "mutate_operator":
        pos = [i for i, n in enumerate(nodes) if not n.is_leaf]
        if not pos:
            return None
        i = pos[int(rng.integers(len(pos)))]
        node = nodes[i]
        pool = ex.BINARY_OPS if node.kind == "binary" else ex.UNARY_OPS
        sym = pool[int(rng.integers(len(pool)))]
        return ex.replace_at(expr, i, ex.Node(node.kind, sym, children=node.children))
    if kind == "swap_operands":
        pos = [i for i, n in enumerate(nodes) if n.kind == "binary"]
        if not pos:
            return None
        i = pos[int(rng.integers(len(pos)))]
        a, b = nodes[i].children
        return ex.replace_at(expr, i, ex.binary(nodes[i].symbol, b, a))
    if kind == "add_node":
        # grow at a leaf: the leaf becomes one operand of a new operator
        pos = [i for i, n in enumerate(nodes) if n.is_leaf]
        i = pos[int(rng.integers(len(pos)))]
        sym, arity = _random_op(rng)
        return ex.replace_at(expr, i, _wrap(sym, arity, nodes[i], d, rng))
    if kind == "insert_node":
        i = int(rng.integers(len(nodes)))
        sym, arity = _random_op(rng)
        return ex.replace_at(expr, i, _wrap(sym, arity, nodes[i], d, rng))
    if kind == "delete_node":
        pos = [i for i, n in enumerate(nodes) if not n.is_leaf]
        if not pos:
            return None
        i = pos[int(rng.integers(len(pos)))]
        kids = nodes[i].children
        return ex.replace_at(expr, i, kids[int(rng.integers(len(kids)))])
    if kind == "randomize":
        return ex.random_tree(int(rng.integers(1, cfg.maxsize + 1)), d, rng)
    if kind == "simplify":
        return ex.simplify(expr)
    raise ValueError(f"unknown mutation {kind!r}")


def mutate(
    ind: Individual,
    cfg: SearchConfig,
    rng: np.random.Generator,
    d: int,
    temperature: float = 1.0,
    max_attempts: int = 10,
) -> tuple[Node, str]:
    """Draw a mutation kind by weight and apply it, retrying up to
    ``max_attempts`` times when the result breaks ``maxsize``; after that the
    parent is returned unchanged (``do_nothing``)."""
    weights = _applicable(ind.expr, cfg.mutation_weights)
    kind = choose_mutation(weights, rng)
    for _ in range(max_attempts):
        out = apply_mutation(kind, ind.expr, d, rng, cfg, temperature)
        if out is not None and parsimony(out) <= cfg.maxsize:
            return out, kind
    return ind.expr, "do_nothing"


def crossover(
    a: Node, b: Node, rng: np.random.Generator, maxsize: int = 20, max_attempts: int = 10
) -> tuple[Node, Node]:
    """Swap one uniformly chosen subtree of ``a`` with one of ``b``.

    Falls back to returning the parents when every attempt breaks ``maxsize``.
    """
    na, nb = list(ex.walk(a)), list(ex.walk(b))
    for _ in range(max_attempts):
        i = int(rng.integers(len(na)))
        j = int(rng.integers(len(nb)))
        c1 = ex.replace_at(a, i, nb[j])
        c2 = ex.replace_at(b, j, na[i])
        if parsimony(c1) <= maxsize and parsimony(c2) <= maxsize:
            return c1, c2
    return a, b


# --------------------------------------------------------------------------
# population dynamics


def _replace_oldest(pop: Population, newcomer: Individual, topn: int) -> None:
    members = pop.members
    elite = set(_rank_order(members, range(len(members)))[:topn]) if topn < len(members) else set()
    candidates = [i for i in range(len(members)) if i not in elite] or list(range(len(members)))
    victim = max(candidates, key=lambda i: (members[i].age, members[i].penalized_fitness, -members[i].birth))
    members[victim] = newcomer


def _age(members: list[Individual], newborn: tuple[Individual, ...]) -> None:
    for m in members:
        if not any(m is n for n in newborn):
            m.age += 1


def evolve_cycle(pop: Population, problem: _Problem, temperature: float) -> None:
    cfg = problem.cfg
    rng = pop.rng
    _population_fitness(pop.members, pop.frecency, cfg)
    weights = tournament_weights(cfg.tournament_selection_n, cfg.tournament_selection_p)
    pick = lambda: tournament_select(pop.members, cfg.tournament_selection_n, cfg.tournament_selection_p, rng, weights)

    if rng.random() < cfg.crossover_probability:
        p1, p2 = pick(), pick()
        c1, c2 = crossover(p1.expr, p2.expr, rng, cfg.maxsize)
        babies = (problem.make(c1, pop), problem.make(c2, pop))
    else:
        parent = pick()
        child_expr, _ = mutate(parent, cfg, rng, problem.d, temperature)
        child = problem.make(child_expr, pop)
        child.penalized_fitness = penalized(child.raw_loss, child.complexity, pop.frecency, cfg)
        if not anneal_accept(parent.penalized_fitness, child.penalized_fitness, temperature, cfg.alpha, rng, cfg.annealing):
            child = problem.make(parent.expr, pop, parent.raw_loss)
        babies = (child,)

    for baby in babies:
        baby.penalized_fitness = penalized(baby.raw_loss, baby.complexity, pop.frecency, cfg)
        _replace_oldest(pop, baby, cfg.topn)
    _age(pop.members, babies)
    pop.frecency *= FRECENCY_DECAY
    for baby in babies:
        pop.record(baby)


def _refresh(pop: Population, problem: _Problem) -> None:
    """Barrier-time pass: simplify and occasionally optimise constants."""
    cfg = problem.cfg
    for i, m in enumerate(pop.members):
        expr, loss = m.expr, m.raw_loss
        if cfg.should_simplify:
            simpler = ex.simplify(expr)
            if simpler != expr:
                expr, loss = simpler, problem.raw_loss(simpler)
        if cfg.should_optimize_constants and pop.rng.random() < cfg.optimize_probability and get_constants(expr).size:
            expr, loss = optimize_constants_with_loss(
                expr,
                problem.X,
                problem.y,
                problem.tau,
                cfg.optimizer_iterations,
                cfg.optimizer_nrestarts,
                pop.rng,
                cfg.perturbation_factor,
                loss,
            )
        if expr is not m.expr:
            updated = Individual(expr, loss, parsimony(expr), m.age, m.birth)
            pop.members[i] = updated
            if math.isfinite(loss):
                best = pop.hof.get(updated.complexity)
                if best is None or loss < best[0]:
                    pop.hof[updated.complexity] = (loss, expr)


def run_iteration(pop: Population, problem: _Problem) -> Population:
    """All cycles of one iteration for one population, then its barrier refresh."""
    ncycles = problem.cfg.ncycles_per_iteration
    for cycle in range(ncycles):
        temperature = 1.0 - cycle / ncycles if problem.cfg.annealing else 1.0
        evolve_cycle(pop, problem, temperature)
    _refresh(pop, problem)
    return pop


def _run_iteration_remote(args):
    pop, dataset, tau, cfg = args
    return run_iteration(pop, _Problem(dataset, tau, cfg))


def init_population(problem: _Problem, rng: np.random.Generator) -> Population:
    cfg = problem.cfg
    pop = Population([], rng, np.zeros(cfg.maxsize + 1))
    start_size = max(1, min(cfg.maxsize, 5))
    while len(pop.members) < cfg.population_size:
        expr = ex.random_expr(problem.d, start_size, rng)
        if parsimony(expr) > cfg.maxsize:
            continue
        ind = problem.make(expr, pop)
        pop.members.append(ind)
        pop.record(ind)
    return pop


@dataclass
class SearchState:
    """What an iteration callback sees."""

    iteration: int
    populations: list[Population]
    hall_of_fame: dict[int, tuple[float, Node]]


def _migrate(pops: list[Population], hof: dict[int, tuple[float, Node]], problem: _Problem) -> None:
    cfg = problem.cfg
    snapshot = [list(p.members) for p in pops]
    hof_items = [hof[c] for c in sorted(hof)]
    for i, pop in enumerate(pops):
        donors = None
        if cfg.migration and len(pops) > 1:
            src = snapshot[(i - 1) % len(pops)]
            _population_fitness(src, pops[(i - 1) % len(pops)].frecency, cfg)
            donors = [src[k] for k in _rank_order(src, range(len(src)))[: max(1, cfg.topn)]]
        for j in range(len(pop.members)):
            if donors is not None and pop.rng.random() < cfg.fraction_replaced:
                donor = donors[int(pop.rng.integers(len(donors)))]
                pop.members[j] = problem.make(donor.expr, pop, donor.raw_loss)
                pop.record(pop.members[j])
            if cfg.hof_migration and hof_items and pop.rng.random() < cfg.fraction_replaced_hof:
                loss, expr = hof_items[int(pop.rng.integers(len(hof_items)))]
                pop.members[j] = problem.make(expr, pop, loss)
                pop.record(pop.members[j])


def evolve(
    dataset: Dataset,
    tau: float,
    cfg: SearchConfig | None = None,
    callback: Callable[[SearchState], None] | None = None,
    deterministic: bool = False,
) -> ParetoFront:
    """Run the full search and return the Pareto front of training losses.

    ``deterministic`` forces single-process execution; the output is the same
    either way for a given seed and population count.
    """
    cfg = cfg or SearchConfig()
    cfg.validate()
    check_tau(tau)
    if np.unique(dataset.target).size < 2:
        raise ValueError("target must contain at least two distinct values")
    problem = _Problem(dataset, tau, cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.populations)
    pops = [init_population(problem, np.random.default_rng(s)) for s in seeds]
    hof: dict[int, tuple[float, Node]] = {}
    procs = 1 if deterministic else min(cfg.procs, cfg.populations)
    executor = ProcessPoolExecutor(procs) if procs > 1 else None
    try:
        for iteration in range(cfg.niterations):
            if executor is None:
                pops = [run_iteration(p, problem) for p in pops]
            else:
                pops = list(executor.map(_run_iteration_remote, [(p, dataset, tau, cfg) for p in pops]))
            for pop in pops:
                for c, (loss, expr) in sorted(pop.hof.items()):
                    if c not in hof or loss < hof[c][0]:
                        hof[c] = (loss, expr)
            _migrate(pops, hof, problem)
            if callback is not None:
                callback(SearchState(iteration, pops, dict(hof)))
    finally:
        if executor is not None:
            executor.shutdown()
    front = ParetoFront(tau)
    for c in sorted(hof):
        loss, expr = hof[c]
        front.update(expr, loss, c)
    return front
