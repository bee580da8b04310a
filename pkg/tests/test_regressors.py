import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from adok import kinetics as kin
from adok.regressors import (
    SymbolicKineticsRegressor,
    SymbolicProfileRegressor,
    SymbolicRateRegressor,
)

FAST = dict(
    population=80,
    generations=10,
    polish_evals=25,
    global_evals=600,
    local_max_iters=60,
    restarts=1,
)


def test_profile_regressor_fits_decay_curve():
    t = np.linspace(0, 10, 30)
    y = 2.0 * np.exp(-0.4 * t) + 1.0
    reg = SymbolicProfileRegressor(complexity_cap=11, random_state=3, **FAST)
    reg.fit(t, y)
    assert reg.model_.rss < 0.05
    pred = reg.predict(t[:, None])
    assert pred.shape == (30,)
    assert np.sqrt(np.mean((pred - y) ** 2)) < 0.05
    assert isinstance(reg.expression_, str)


def test_profile_regressor_derivative_matches_finite_difference():
    t = np.linspace(0, 10, 30)
    y = 3.0 / (1.0 + t)
    reg = SymbolicProfileRegressor(complexity_cap=9, random_state=1, **FAST)
    reg.fit(t, y)
    mid = np.linspace(0.5, 9.5, 7)
    h = 1e-6
    fd = (reg.predict(mid + h) - reg.predict(mid - h)) / (2 * h)
    assert np.allclose(reg.derivative(mid), fd, rtol=1e-4, atol=1e-6)


def test_profile_regressor_sklearn_contract():
    reg = SymbolicProfileRegressor(population=50)
    params = reg.get_params()
    assert params["population"] == 50
    cloned = clone(reg)
    assert cloned.get_params() == params
    reg.set_params(generations=7)
    assert reg.generations == 7
    with pytest.raises(NotFittedError):
        reg.predict([0.0, 1.0])


def test_profile_regressor_validates_input():
    reg = SymbolicProfileRegressor(**FAST)
    with pytest.raises(ValueError):
        reg.fit(np.ones((3, 2)), np.ones(3))
    with pytest.raises(ValueError):
        reg.fit([0.0, 1.0], [1.0, np.inf])
    with pytest.raises(ValueError):
        reg.fit([0.0, 1.0, 2.0], [1.0, 2.0])


def test_rate_regressor_recovers_bilinear_rate():
    rng = np.random.default_rng(0)
    states = rng.uniform(0.2, 3.0, size=(60, 2))
    targets = 0.7 * states[:, 0] * states[:, 1]
    reg = SymbolicRateRegressor(
        complexity_cap=7, feature_names=("C_T", "C_H"), random_state=2, **FAST
    )
    reg.fit(states, targets)
    assert reg.model_.rss < 1e-6
    pred = reg.predict(states)
    assert np.allclose(pred, targets, atol=1e-3)
    assert "C_T" in reg.expression_


def test_rate_regressor_ranks_by_selected_criterion():
    rng = np.random.default_rng(4)
    states = rng.uniform(0.2, 3.0, size=(40, 1))
    targets = 0.5 * states[:, 0] + rng.normal(0, 0.01, 40)
    reg = SymbolicRateRegressor(complexity_cap=5, criterion="bic", random_state=0, **FAST)
    reg.fit(states, targets)
    values = [m.criteria["bic"] for m in reg.finalists_]
    assert reg.model_.criteria["bic"] == min(values)


def test_rate_regressor_shape_checks():
    reg = SymbolicRateRegressor(feature_names=("a",), **FAST)
    with pytest.raises(ValueError):
        reg.fit(np.ones((5, 2)), np.ones(5))


def test_kinetics_regressor_single_trajectory():
    system, experiments, _ = kin.make_case_study("isomerization")
    ds = kin.generate_dataset(system, experiments[:2], kin.NoiseSpec(0.0), seed=0)
    X = [run.conc for run in ds.experiments]
    t = [run.times for run in ds.experiments]
    reg = SymbolicKineticsRegressor(
        stoich=(-1.0, 1.0),
        species=("C_A", "C_B"),
        population=60,
        generations=6,
        complexity_cap=7,
        polish_evals=8,
        global_evals=300,
        local_max_iters=40,
        restarts=1,
        random_state=1,
    )
    reg.fit(X, t)
    assert reg.species_ == ("C_A", "C_B")
    traj = reg.simulate(np.array([2.0, 0.0]), np.linspace(0, 10, 12))
    assert traj.shape == (12, 2)
    rmse = reg.score_rmse(X, t)
    assert np.isfinite(rmse)
    # clones are unfitted and independently configurable
    cloned = clone(reg)
    with pytest.raises(NotFittedError):
        cloned.simulate([1.0, 0.0], [0.0, 1.0])


def test_kinetics_regressor_validates_stoich():
    reg = SymbolicKineticsRegressor(stoich=(-1.0,), species=("C_A", "C_B"))
    X = np.ones((5, 2))
    with pytest.raises(ValueError):
        reg.fit(X, np.linspace(0, 1, 5))
