import numpy as np
import pytest

from adok import design
from adok import expressions as ex
from adok import fitting as fi
from adok import kinetics as kin


def as_model(text, species):
    grammar = ex.rate_grammar(species)
    expr = ex.parse_expr(text, grammar)
    template = ex.extract_template(expr)
    return fi.FittedModel(
        template=template,
        theta=tuple(ex.constants(expr)),
        rss=0.0,
        nll=0.0,
        criteria={},
        context="weak",
        n=1,
    )


def test_design_space_validation():
    with pytest.raises(ValueError):
        design.DesignSpace((0.0,), (1.0, 2.0))
    with pytest.raises(ValueError):
        design.DesignSpace((1.0,), (0.5,))
    with pytest.raises(ValueError):
        design.DesignSpace((-0.1,), (1.0,))


def test_design_space_around_experiments():
    experiments = [kin.Experiment((2, 0)), kin.Experiment((10, 2))]
    space = design.DesignSpace.around_experiments(experiments)
    assert space.lower == (0.0, 0.0)
    assert space.upper == (12.5, 2.5)


def test_discrepancy_identical_models_is_zero():
    model = as_model("2*C_A", ("C_A",))
    assert design.discrepancy(model, model, (1.0,), (1.0,)) == 0.0


def test_discrepancy_constant_rates_analytic_value():
    a = as_model("1", ("C_A",))
    b = as_model("2", ("C_A",))
    value = design.discrepancy(a, b, (1.0,), (0.0,), window=(0.0, 1.0))
    assert value == pytest.approx(1.0 / 3.0, rel=1e-3)


def test_discrepancy_is_symmetric():
    a = as_model("0.5*C_A", ("C_A", "C_B"))
    b = as_model("0.2*C_A+0.1", ("C_A", "C_B"))
    stoich = (-1.0, 1.0)
    d_ab = design.discrepancy(a, b, stoich, (2.0, 0.0))
    d_ba = design.discrepancy(b, a, stoich, (2.0, 0.0))
    assert d_ab == pytest.approx(d_ba, rel=1e-12)
    assert d_ab > 0


def test_discrepancy_quadrature_convergence():
    a = as_model("0.5*C_A", ("C_A", "C_B"))
    b = as_model("0.3*C_A", ("C_A", "C_B"))
    stoich = (-1.0, 1.0)
    coarse = design.discrepancy(a, b, stoich, (2.0, 0.0), quadrature_points=101)
    fine = design.discrepancy(a, b, stoich, (2.0, 0.0), quadrature_points=201)
    assert abs(fine - coarse) / coarse < 1e-3


def test_discrepancy_failed_model_contributes_common_prefix_only():
    a = as_model("1/(1-C_A)", ("C_A",))  # blows up once C_A approaches 1
    b = as_model("0.1", ("C_A",))
    value = design.discrepancy(a, b, (1.0,), (0.9,), window=(0.0, 10.0))
    assert np.isfinite(value) and value >= 0.0


def test_propose_identical_models_degenerate():
    model = as_model("2*C_A", ("C_A",))
    space = design.DesignSpace((0.0,), (5.0,))
    proposal = design.propose_experiment(model, model, (1.0,), space, n_starts=4)
    assert proposal.degenerate
    assert proposal.objective == 0.0
    assert 0.0 <= proposal.x0[0] <= 5.0


def test_propose_beats_existing_initial_conditions():
    a = as_model("(7*C_A-3*C_B)/(4*C_A+2*C_B+6)", ("C_A", "C_B"))
    b = as_model("(8*C_A-2*C_B)/(5*C_A+3*C_B+2)", ("C_A", "C_B"))
    stoich = (-1.0, 1.0)
    ics = [(2.0, 0.0), (10.0, 2.0), (2.0, 2.0), (10.0, 1.0)]
    space = design.DesignSpace((0.0, 0.0), (12.5, 2.5))
    proposal = design.propose_experiment(
        a, b, stoich, space, n_starts=8, seed=1, extra_starts=ics
    )
    assert not proposal.degenerate
    for ic in ics:
        at_ic = design.discrepancy(a, b, stoich, ic, space.window, space.quadrature_points)
        assert proposal.objective >= at_ic - 1e-12
    assert all(lo <= v <= hi for v, lo, hi in zip(proposal.x0, space.lower, space.upper))


def test_propose_matches_dense_grid_in_one_dimension():
    a = as_model("0.8*C_A/(1+C_A)", ("C_A",))
    b = as_model("0.5*C_A", ("C_A",))
    space = design.DesignSpace((0.0,), (4.0,), quadrature_points=61)
    proposal = design.propose_experiment(a, b, (-1.0,), space, n_starts=8, seed=0)
    grid = np.linspace(0.0, 4.0, 1000)
    values = [
        design.discrepancy(a, b, (-1.0,), (x,), space.window, space.quadrature_points)
        for x in grid
    ]
    best = grid[int(np.argmax(values))]
    scale = space.upper[0] - space.lower[0]
    assert abs(proposal.x0[0] - best) <= 0.01 * scale or proposal.objective >= max(values)


def test_propose_is_deterministic():
    a = as_model("0.8*C_A/(1+C_A)", ("C_A",))
    b = as_model("0.5*C_A", ("C_A",))
    space = design.DesignSpace((0.0,), (4.0,), quadrature_points=41)
    p1 = design.propose_experiment(a, b, (-1.0,), space, n_starts=6, seed=3)
    p2 = design.propose_experiment(a, b, (-1.0,), space, n_starts=6, seed=3)
    assert p1.x0 == p2.x0 and p1.objective == p2.objective


def test_enlarging_space_never_hurts():
    a = as_model("0.8*C_A/(1+C_A)", ("C_A",))
    b = as_model("0.5*C_A", ("C_A",))
    small = design.DesignSpace((0.0,), (2.0,), quadrature_points=41)
    big = design.DesignSpace((0.0,), (6.0,), quadrature_points=41)
    p_small = design.propose_experiment(a, b, (-1.0,), small, n_starts=8, seed=0)
    p_big = design.propose_experiment(
        a, b, (-1.0,), big, n_starts=8, seed=0, extra_starts=[p_small.x0]
    )
    assert p_big.objective >= p_small.objective - 1e-12


def test_proposal_json(tmp_path):
    a = as_model("1", ("C_A",))
    b = as_model("2", ("C_A",))
    space = design.DesignSpace((0.0,), (1.0,), quadrature_points=21)
    proposal = design.propose_experiment(a, b, (1.0,), space, n_starts=3)
    path = tmp_path / "proposal.json"
    design.write_proposal(path, proposal)
    import json

    loaded = json.loads(path.read_text())
    assert loaded["x0"] == list(proposal.x0)
    assert len(loaded["trace"]) == 3
