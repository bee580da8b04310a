import numpy as np
import pytest

from adok import expressions as ex


def build_random_expr(grammar: ex.ExprGrammar, rng: np.random.Generator, depth: int) -> ex.Expr:
    """Test-local tree sampler, independent of the search engine's own."""
    lo, hi = grammar.constant_range
    if depth <= 0 or rng.random() < 0.3:
        if rng.random() < 0.5:
            return ex.Const(round(float(rng.uniform(lo, hi)), 3))
        return ex.Var(int(rng.integers(len(grammar.variables))))
    ops = grammar.operators
    op = ops[int(rng.integers(len(ops)))]
    if ex.OPERATOR_ARITY[op] == 1:
        return ex.Unary(op, build_random_expr(grammar, rng, depth - 1))
    return ex.Binary(
        op,
        build_random_expr(grammar, rng, depth - 1),
        build_random_expr(grammar, rng, depth - 1),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
