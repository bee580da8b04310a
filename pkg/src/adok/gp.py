"""Genetic-programming search over expression trees.

The engine evolves a population under one of three fitness kinds (profile,
strong-form rate, weak-form dynamic) and maintains a hall of fame: the best
expression seen at every complexity level.  Each individual gets a cheap
inline constant tune before scoring; the expensive two-stage parameter
estimation is reserved for the hall-of-fame finalists.

Randomness is drawn from per-(generation, slot) substreams, so the outcome
is a pure function of the seed regardless of evaluation order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from . import expressions as ex
from . import fitting as fi
from . import kinetics as kin

__all__ = [
    "GpConfig",
    "HallOfFame",
    "ProfileFitness",
    "StrongFitness",
    "WeakFitness",
    "evolve",
    "finalists",
    "random_tree",
    "profile_gp_config",
    "strong_gp_config",
    "weak_gp_config",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GpConfig:
    population: int = 500
    generations: int = 100
    tournament_size: int = 5
    p_crossover: float = 0.7
    p_subtree_mutation: float = 0.15
    p_point_mutation: float = 0.1
    p_constant_jitter: float = 0.05
    complexity_cap: int | None = None  # None: use the grammar's cap
    polish_evals: int = 50
    seed: int = 0

    def __post_init__(self):
        probs = (
            self.p_crossover,
            self.p_subtree_mutation,
            self.p_point_mutation,
            self.p_constant_jitter,
        )
        if any(not 0.0 <= p <= 1.0 for p in probs) or sum(probs) > 1.0 + 1e-12:
            raise ValueError("operator probabilities must lie in [0,1] and sum to <= 1")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.complexity_cap is not None and self.complexity_cap < 1:
            raise ValueError("complexity_cap must be >= 1")


def profile_gp_config(**overrides) -> GpConfig:
    return GpConfig(population=500, generations=100, complexity_cap=15, **overrides)


def strong_gp_config(**overrides) -> GpConfig:
    return GpConfig(population=500, generations=100, complexity_cap=25, **overrides)


def weak_gp_config(**overrides) -> GpConfig:
    # Every weak evaluation integrates an ODE system, so the defaults trade
    # population size for runtime and cap the inline tune tighter.
    return GpConfig(
        population=200, generations=40, complexity_cap=25, polish_evals=12, **overrides
    )


class HallOfFame:
    """Best expression and raw fitness per exact complexity level."""

    def __init__(self, complexity_cap: int):
        self.complexity_cap = complexity_cap
        self._entries: dict[int, tuple[ex.Expr, float]] = {}

    def update(self, expr: ex.Expr, fitness: float) -> None:
        if not math.isfinite(fitness):
            return
        level = expr.size
        if level > self.complexity_cap:
            return
        current = self._entries.get(level)
        if current is None or fitness < current[1]:
            self._entries[level] = (expr, fitness)

    def entries(self) -> list[tuple[int, ex.Expr, float]]:
        return [(k, e, f) for k, (e, f) in sorted(self._entries.items())]

    def best(self) -> tuple[ex.Expr, float]:
        if not self._entries:
            raise ValueError("hall of fame is empty")
        return min(self._entries.values(), key=lambda pair: pair[1])

    def __len__(self) -> int:
        return len(self._entries)

    def to_json(self, variables: Sequence[str]) -> dict:
        return {
            str(level): {"expression": ex.format_expr(expr, variables), "rss": fitness}
            for level, (expr, fitness) in sorted(self._entries.items())
        }

    def write_json(self, path: str | Path, variables: Sequence[str]) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(variables), fh, indent=2)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Fitness kinds


class _FitnessBase:
    """Shared inline-tune logic; subclasses provide objectives and finalize."""

    n_vars: int

    def objective_for(self, template: ex.ParamTemplate) -> Callable:
        raise NotImplementedError

    def finalize(self, template: ex.ParamTemplate, budget: fi.FitBudget, init_points=()):
        raise NotImplementedError

    def score(self, expr: ex.Expr, polish_evals: int) -> tuple[float, ex.Expr]:
        """Raw RSS after a bounded constant tune; returns the tuned tree."""
        template = ex.extract_template(expr)
        objective = self.objective_for(template)
        theta0 = np.asarray(ex.constants(expr), dtype=float)
        value0 = objective(theta0)
        if template.dimension == 0 or polish_evals <= 0:
            return value0, expr
        if not math.isfinite(value0):
            return value0, expr

        def capped(theta):
            v = objective(theta)
            return v if math.isfinite(v) else 1e50

        result = optimize.minimize(
            capped,
            theta0,
            method="Nelder-Mead",
            options={"maxfev": polish_evals, "xatol": 1e-6, "fatol": 1e-10},
        )
        value1 = objective(np.asarray(result.x, dtype=float))
        if math.isfinite(value1) and value1 < value0:
            return value1, ex.substitute(template, result.x)
        return value0, expr


@dataclass
class ProfileFitness(_FitnessBase):
    """Concentration-vs-time regression for a single species series."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have matching shapes")
        self.n_vars = 1

    def objective_for(self, template):
        return fi.profile_objective(template, self.times, self.values)

    def finalize(self, template, budget, init_points=()):
        return fi.fit_profile(
            template, self.times, self.values, budget, init_points=init_points
        )


@dataclass
class StrongFitness(_FitnessBase):
    """Rate regression against pooled rate estimates."""

    states: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] != self.targets.shape[0]:
            raise ValueError("need one rate target per state row")
        self.n_vars = self.states.shape[1]

    def objective_for(self, template):
        return fi.strong_objective(template, self.states, self.targets)

    def finalize(self, template, budget, init_points=()):
        return fi.fit_rate_strong(
            template, self.states, self.targets, budget, init_points=init_points
        )


@dataclass
class WeakFitness(_FitnessBase):
    """Dynamic fitness: candidate rate laws are integrated and compared."""

    stoich: Sequence[float]
    dataset: kin.Dataset
    settings: kin.IntegratorSettings = field(
        default_factory=lambda: kin.FITTING_SETTINGS
    )

    def __post_init__(self):
        self.n_vars = len(self.dataset.species)

    def objective_for(self, template):
        return fi.weak_objective(template, self.stoich, self.dataset, self.settings)

    def finalize(self, template, budget, init_points=()):
        return fi.fit_rate_weak(
            template,
            self.stoich,
            self.dataset,
            self.settings,
            budget,
            init_points=init_points,
        )


# ---------------------------------------------------------------------------
# Tree generation and variation


def _random_leaf(grammar: ex.ExprGrammar, rng: np.random.Generator) -> ex.Expr:
    if rng.random() < 0.5:
        lo, hi = grammar.constant_range
        return ex.Const(float(rng.uniform(lo, hi)))
    return ex.Var(int(rng.integers(len(grammar.variables))))


def random_tree(
    grammar: ex.ExprGrammar,
    rng: np.random.Generator,
    depth: int,
    method: str = "grow",
) -> ex.Expr:
    """Grow/full tree sampler used for initialization and subtree mutation."""
    if depth <= 0 or (method == "grow" and rng.random() < 0.3):
        return _random_leaf(grammar, rng)
    op = grammar.operators[int(rng.integers(len(grammar.operators)))]
    if ex.OPERATOR_ARITY[op] == 1:
        return ex.Unary(op, random_tree(grammar, rng, depth - 1, method))
    return ex.Binary(
        op,
        random_tree(grammar, rng, depth - 1, method),
        random_tree(grammar, rng, depth - 1, method),
    )


def _initial_tree(
    grammar: ex.ExprGrammar, rng: np.random.Generator, slot: int, cap: int
) -> ex.Expr:
    # Ramped half-and-half: depth cycles 1..4, method alternates.
    depth = 1 + slot % 4
    method = "full" if (slot // 4) % 2 == 0 else "grow"
    for _ in range(20):
        tree = random_tree(grammar, rng, depth, method)
        if tree.size <= cap:
            return tree
    return _random_leaf(grammar, rng)


def _subtree_at(expr: ex.Expr, index: int) -> ex.Expr:
    found = []

    def walk(node: ex.Expr, at: int) -> int:
        if at == index:
            found.append(node)
            return at + 1
        at += 1
        if isinstance(node, ex.Unary):
            return walk(node.child, at)
        if isinstance(node, ex.Binary):
            at = walk(node.left, at)
            if found:
                return at
            return walk(node.right, at)
        return at

    walk(expr, 0)
    return found[0]


def _replace_at(expr: ex.Expr, index: int, replacement: ex.Expr) -> ex.Expr:
    counter = [0]

    def walk(node: ex.Expr) -> ex.Expr:
        at = counter[0]
        counter[0] += 1
        if at == index:
            _skip(node)
            return replacement
        if isinstance(node, ex.Unary):
            return ex.Unary(node.op, walk(node.child))
        if isinstance(node, ex.Binary):
            left = walk(node.left)
            return ex.Binary(node.op, left, walk(node.right))
        return node

    def _skip(node: ex.Expr) -> None:
        counter[0] += node.size - 1

    return walk(expr)


def _crossover(a: ex.Expr, b: ex.Expr, rng: np.random.Generator, cap: int) -> ex.Expr:
    for _ in range(10):
        i = int(rng.integers(a.size))
        j = int(rng.integers(b.size))
        child = _replace_at(a, i, _subtree_at(b, j))
        if child.size <= cap:
            return child
    return a


def _subtree_mutation(
    expr: ex.Expr, grammar: ex.ExprGrammar, rng: np.random.Generator, cap: int
) -> ex.Expr:
    for _ in range(10):
        i = int(rng.integers(expr.size))
        child = _replace_at(expr, i, random_tree(grammar, rng, 2, "grow"))
        if child.size <= cap:
            return child
    return expr


def _point_mutation(
    expr: ex.Expr, grammar: ex.ExprGrammar, rng: np.random.Generator
) -> ex.Expr:
    i = int(rng.integers(expr.size))
    node = _subtree_at(expr, i)
    if isinstance(node, (ex.Const, ex.Var)):
        return _replace_at(expr, i, _random_leaf(grammar, rng))
    if isinstance(node, ex.Binary):
        options = [op for op in grammar.binary_operators if op != node.op]
        if not options:
            return expr
        op = options[int(rng.integers(len(options)))]
        return _replace_at(expr, i, ex.Binary(op, node.left, node.right))
    return expr  # single unary operator: nothing to point-mutate to


def _constant_jitter(expr: ex.Expr, rng: np.random.Generator) -> ex.Expr:
    def walk(node: ex.Expr) -> ex.Expr:
        if isinstance(node, ex.Const):
            scale = abs(node.value) if node.value != 0.0 else 1.0
            return ex.Const(node.value + 0.1 * scale * rng.standard_normal())
        if isinstance(node, ex.Unary):
            return ex.Unary(node.op, walk(node.child))
        if isinstance(node, ex.Binary):
            return ex.Binary(node.op, walk(node.left), walk(node.right))
        return node

    return walk(expr)


def _tournament(
    population: list[ex.Expr],
    fitnesses: list[float],
    rng: np.random.Generator,
    size: int,
) -> ex.Expr:
    contenders = rng.integers(len(population), size=size)
    best = min(contenders, key=lambda i: (fitnesses[int(i)], int(i)))
    return population[int(best)]


# ---------------------------------------------------------------------------
# Evolution loop


def evolve(
    grammar: ex.ExprGrammar,
    fitness: _FitnessBase,
    config: GpConfig,
    log_path: str | Path | None = None,
) -> HallOfFame:
    """Run the evolutionary search and return the per-complexity archive."""
    if fitness.n_vars != len(grammar.variables):
        raise ValueError(
            f"fitness expects {fitness.n_vars} variables, grammar has "
            f"{len(grammar.variables)}"
        )
    cap = config.complexity_cap or grammar.complexity_cap
    hof = HallOfFame(cap)
    cache: dict[str, tuple[float, ex.Expr]] = {}

    def evaluate(expr: ex.Expr) -> tuple[float, ex.Expr]:
        key = ex.format_expr(expr, grammar.variables)
        hit = cache.get(key)
        if hit is None:
            hit = fitness.score(expr, config.polish_evals)
            cache[key] = hit
        hof.update(hit[1], hit[0])
        return hit

    population: list[ex.Expr] = []
    fitnesses: list[float] = []
    for i in range(config.population):
        rng = np.random.default_rng((config.seed, 0, i))
        tree = _initial_tree(grammar, rng, i, cap)
        value, tuned = evaluate(tree)
        population.append(tuned)
        fitnesses.append(value)

    log_rows = []
    if log_path is not None:
        best_expr, best_rss = hof.best() if len(hof) else (None, math.inf)
        log_rows.append((0, best_expr.size if best_expr else 0, best_rss))

    for gen in range(1, config.generations + 1):
        thresholds = np.cumsum(
            [
                config.p_crossover,
                config.p_subtree_mutation,
                config.p_point_mutation,
                config.p_constant_jitter,
            ]
        )
        next_population = []
        next_fitnesses = []
        for i in range(config.population):
            rng = np.random.default_rng((config.seed, gen, i))
            parent = _tournament(population, fitnesses, rng, config.tournament_size)
            roll = rng.random()
            if roll < thresholds[0]:
                donor = _tournament(population, fitnesses, rng, config.tournament_size)
                child = _crossover(parent, donor, rng, cap)
            elif roll < thresholds[1]:
                child = _subtree_mutation(parent, grammar, rng, cap)
            elif roll < thresholds[2]:
                child = _point_mutation(parent, grammar, rng)
            elif roll < thresholds[3]:
                child = _constant_jitter(parent, rng)
            else:
                child = parent
            value, tuned = evaluate(child)
            next_population.append(tuned)
            next_fitnesses.append(value)
        population = next_population
        fitnesses = next_fitnesses
        if log_path is not None and len(hof):
            best_expr, best_rss = hof.best()
            log_rows.append((gen, best_expr.size, best_rss))

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["generation", "best_complexity", "best_rss"])
            writer.writerows(log_rows)
    return hof


def finalists(
    hof: HallOfFame,
    fitness: _FitnessBase,
    budget: fi.FitBudget = fi.FitBudget(),
) -> list[fi.FittedModel]:
    """Fully re-estimate every hall-of-fame entry (one per complexity level).

    Entries whose estimation finds no feasible parameters are dropped with a
    logged reason.
    """
    if len(hof) == 0:
        raise ValueError("hall of fame is empty")
    models = []
    for level, expr, _raw in hof.entries():
        template = ex.extract_template(expr)
        try:
            model = fitness.finalize(
                template, budget, init_points=[ex.constants(expr)]
            )
        except fi.UnfittableModelError as err:
            log.warning("dropping complexity-%d finalist: %s", level, err)
            continue
        models.append(model)
    return models
