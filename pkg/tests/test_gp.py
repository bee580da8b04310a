import math

import numpy as np
import pytest

from adok import expressions as ex
from adok import fitting as fi
from adok import gp
from adok import kinetics as kin


def linear_strong_fitness(k=0.4, n=20):
    c_a = np.linspace(0.1, 2.0, n)
    states = c_a[:, None]
    targets = k * c_a
    return gp.StrongFitness(states, targets)


SMALL_GP = gp.GpConfig(population=60, generations=12, complexity_cap=7, seed=0, polish_evals=30)


def test_config_validation():
    with pytest.raises(ValueError):
        gp.GpConfig(population=1)
    with pytest.raises(ValueError):
        gp.GpConfig(p_crossover=0.9, p_subtree_mutation=0.5)
    with pytest.raises(ValueError):
        gp.GpConfig(complexity_cap=0)


def test_random_tree_respects_grammar():
    grammar = ex.rate_grammar(("C_A", "C_B"), complexity_cap=9)
    rng = np.random.default_rng(0)
    for _ in range(200):
        tree = gp.random_tree(grammar, rng, 3)
        for op in _collect_ops(tree):
            assert op in grammar.operators


def _collect_ops(tree):
    if isinstance(tree, ex.Unary):
        return [tree.op] + _collect_ops(tree.child)
    if isinstance(tree, ex.Binary):
        return [tree.op] + _collect_ops(tree.left) + _collect_ops(tree.right)
    return []


def test_evolve_recovers_linear_rate():
    grammar = ex.rate_grammar(("C_A",), complexity_cap=3)
    fitness = linear_strong_fitness()
    hof = gp.evolve(grammar, fitness, SMALL_GP)
    levels = dict((k, (e, f)) for k, e, f in hof.entries())
    assert 3 in levels
    expr, value = levels[3]
    assert value < 1e-8


def test_hall_of_fame_contains_clone_population():
    grammar = ex.rate_grammar(("C_A",), complexity_cap=5)
    fitness = linear_strong_fitness()
    config = gp.GpConfig(
        population=10,
        generations=1,
        complexity_cap=5,
        seed=1,
        polish_evals=0,
        p_crossover=0.0,
        p_subtree_mutation=0.0,
        p_point_mutation=0.0,
        p_constant_jitter=0.0,
    )
    hof = gp.HallOfFame(5)
    clone = ex.Binary(ex.MUL, ex.Const(0.25), ex.Var(0))
    value = fitness.score(clone, 0)[0]
    hof.update(clone, value)
    assert hof.entries()[0][1] == clone


def test_evolve_is_reproducible():
    grammar = ex.rate_grammar(("C_A",), complexity_cap=5)
    fitness = linear_strong_fitness()
    a = gp.evolve(grammar, fitness, SMALL_GP)
    b = gp.evolve(grammar, fitness, SMALL_GP)
    assert [(k, ex.format_expr(e, ("C_A",)), f) for k, e, f in a.entries()] == [
        (k, ex.format_expr(e, ("C_A",)), f) for k, e, f in b.entries()
    ]


def test_hall_of_fame_entries_respect_cap_and_exact_complexity():
    grammar = ex.rate_grammar(("C_A", "C_B"), complexity_cap=9)
    c = np.linspace(0.1, 2.0, 15)
    states = np.stack([c, 2 * c], axis=1)
    fitness = gp.StrongFitness(states, c * 2.0 / (c + 1.0))
    config = gp.GpConfig(population=80, generations=10, complexity_cap=9, seed=3)
    hof = gp.evolve(grammar, fitness, config)
    assert len(hof) >= 1
    for level, expr, value in hof.entries():
        assert expr.size == level
        assert level <= 9
        assert math.isfinite(value)
        for op in _collect_ops(expr):
            assert op in grammar.operators


def test_hof_fitness_never_increases_with_more_generations():
    grammar = ex.rate_grammar(("C_A",), complexity_cap=5)
    fitness = linear_strong_fitness()
    short = gp.evolve(grammar, fitness, gp.GpConfig(
        population=40, generations=3, complexity_cap=5, seed=7))
    longer = gp.evolve(grammar, fitness, gp.GpConfig(
        population=40, generations=9, complexity_cap=5, seed=7))
    short_map = {k: f for k, _, f in short.entries()}
    longer_map = {k: f for k, _, f in longer.entries()}
    for level, value in short_map.items():
        assert longer_map.get(level, value) <= value + 1e-15


def test_unfittable_levels_absent_from_finalists(caplog):
    grammar = ex.rate_grammar(("C_A",), complexity_cap=5)
    fitness = linear_strong_fitness()
    hof = gp.HallOfFame(5)
    hof.update(ex.Binary(ex.MUL, ex.Const(0.4), ex.Var(0)), 1e-12)
    # a division that is singular at every data point
    singular = ex.Binary(ex.DIV, ex.Const(1.0), ex.Binary(ex.SUB, ex.Var(0), ex.Var(0)))
    assert not math.isfinite(fitness.score(singular, 0)[0])
    hof.update(singular, math.inf)  # ignored: non-finite never enters
    assert len(hof) == 1
    models = gp.finalists(hof, fitness, fi.FitBudget(global_evals=200, local_max_iters=40, restarts=1))
    assert len(models) == 1
    assert models[0].d == 1
    assert models[0].theta[0] == pytest.approx(0.4, abs=1e-6)


def test_finalists_constant_template_is_mean():
    grammar = ex.rate_grammar(("C_A",), complexity_cap=3)
    targets = np.array([1.0, 2.0, 3.0, 4.0])
    fitness = gp.StrongFitness(np.ones((4, 1)), targets)
    hof = gp.HallOfFame(3)
    hof.update(ex.Const(9.0), fitness.score(ex.Const(9.0), 0)[0])
    models = gp.finalists(hof, fitness, fi.FitBudget(global_evals=200, local_max_iters=40, restarts=1))
    assert len(models) == 1
    assert models[0].d == 1
    assert models[0].theta[0] == pytest.approx(2.5, abs=1e-6)


def test_finalists_empty_hof_raises():
    with pytest.raises(ValueError):
        gp.finalists(gp.HallOfFame(5), linear_strong_fitness(), fi.FitBudget())


def test_profile_fitness_round_trip():
    times = np.linspace(0, 10, 30)
    values = np.exp(-0.5 * times) + 1.0
    fitness = gp.ProfileFitness(times, values)
    grammar = ex.profile_grammar(complexity_cap=11)
    config = gp.GpConfig(population=150, generations=25, complexity_cap=11, seed=5)
    hof = gp.evolve(grammar, fitness, config)
    best_expr, best_rss = hof.best()
    assert best_rss < 1e-2


def test_weak_fitness_failures_get_infinite_score():
    system, experiments, _ = kin.make_case_study("isomerization")
    ds = kin.generate_dataset(system, experiments, kin.NoiseSpec(0.0), seed=0)
    fitness = gp.WeakFitness(system.stoich, ds)
    singular = ex.Binary(ex.DIV, ex.Const(1.0), ex.Binary(ex.SUB, ex.Var(0), ex.Var(0)))
    value, _ = fitness.score(singular, 10)
    assert value == math.inf


def test_evolution_log_csv(tmp_path):
    grammar = ex.rate_grammar(("C_A",), complexity_cap=5)
    fitness = linear_strong_fitness()
    path = tmp_path / "log.csv"
    gp.evolve(grammar, fitness, gp.GpConfig(population=30, generations=4, complexity_cap=5, seed=2), log_path=path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "generation,best_complexity,best_rss"
    assert len(lines) == 6  # header + init + 4 generations
