"""Scikit-learn style estimators wrapping the symbolic search.

Three regressors cover the three fitting contexts:

* :class:`SymbolicProfileRegressor` -- y(t) against a single time column,
* :class:`SymbolicRateRegressor` -- rate targets against state rows
  (strong formulation),
* :class:`SymbolicKineticsRegressor` -- concentration trajectories against a
  candidate rate law integrated as an ODE (weak formulation).

Each runs an evolutionary structure search, re-estimates the per-complexity
finalists with the two-stage optimizer, and selects by an information
criterion.  All follow the sklearn parameter conventions (``get_params`` /
``set_params`` / ``clone``); fitted state lives in trailing-underscore
attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import criteria as ic
from . import expressions as ex
from . import fitting as fi
from . import gp
from . import kinetics as kin
from ._validation import as_float_array, as_time_column, check_consistent_length

__all__ = [
    "SymbolicProfileRegressor",
    "SymbolicRateRegressor",
    "SymbolicKineticsRegressor",
]


class _SymbolicSearchMixin:
    """Shared evolutionary-search plumbing for the concrete estimators."""

    def _gp_config(self, complexity_cap: int) -> gp.GpConfig:
        return gp.GpConfig(
            population=self.population,
            generations=self.generations,
            tournament_size=self.tournament_size,
            p_crossover=self.p_crossover,
            p_subtree_mutation=self.p_subtree_mutation,
            p_point_mutation=self.p_point_mutation,
            p_constant_jitter=self.p_constant_jitter,
            complexity_cap=complexity_cap,
            polish_evals=self.polish_evals,
            seed=self.random_state,
        )

    def _budget(self) -> fi.FitBudget:
        return fi.FitBudget(
            global_evals=self.global_evals,
            local_max_iters=self.local_max_iters,
            restarts=self.restarts,
            seed=self.random_state,
        )

    def _search(self, grammar: ex.ExprGrammar, fitness) -> None:
        config = self._gp_config(self.complexity_cap)
        self.hall_of_fame_ = gp.evolve(grammar, fitness, config)
        self.finalists_ = gp.finalists(self.hall_of_fame_, fitness, self._budget())
        if not self.finalists_:
            raise fi.UnfittableModelError("no finalist could be fitted")
        ranked = ic.rank(self.finalists_, self.criterion)
        self.model_ = ranked[0]
        self.runner_up_ = ranked[1] if len(ranked) > 1 else None
        self.expression_ = self.model_.text(grammar.variables)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                f"This {type(self).__name__} instance is not fitted yet."
            )


class SymbolicProfileRegressor(_SymbolicSearchMixin, RegressorMixin, BaseEstimator):
    """Evolves a closed-form y(t) for one measured series.

    The grammar is {+,-,*,/,exp} over the single variable ``t``.  The fitted
    model is exposed both as a canonical text form (``expression_``) and as a
    :class:`~adok.fitting.FittedModel` (``model_``); ``derivative`` evaluates
    the exact symbolic time derivative, which downstream rate estimation
    relies on.
    """

    def __init__(
        self,
        population=500,
        generations=100,
        complexity_cap=15,
        tournament_size=5,
        p_crossover=0.7,
        p_subtree_mutation=0.15,
        p_point_mutation=0.1,
        p_constant_jitter=0.05,
        polish_evals=50,
        global_evals=5000,
        local_max_iters=200,
        restarts=3,
        criterion="aic",
        random_state=0,
    ):
        self.population = population
        self.generations = generations
        self.complexity_cap = complexity_cap
        self.tournament_size = tournament_size
        self.p_crossover = p_crossover
        self.p_subtree_mutation = p_subtree_mutation
        self.p_point_mutation = p_point_mutation
        self.p_constant_jitter = p_constant_jitter
        self.polish_evals = polish_evals
        self.global_evals = global_evals
        self.local_max_iters = local_max_iters
        self.restarts = restarts
        self.criterion = criterion
        self.random_state = random_state

    def fit(self, X, y):
        times = as_time_column(X)
        values = as_float_array(y, "y", ndim=1)
        check_consistent_length(times, values)
        grammar = ex.profile_grammar(self.complexity_cap)
        self._search(grammar, gp.ProfileFitness(times, values))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        self._check_fitted()
        times = as_time_column(X)
        fn = ex.compile_expr(self.model_.expression, 1)
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(fn(times), dtype=float), times.shape).copy()

    def derivative(self, X):
        """Exact d/dt of the selected expression at the given times."""
        self._check_fitted()
        times = as_time_column(X)
        deriv = ex.differentiate(self.model_.expression, 0)
        fn = ex.compile_expr(deriv, 1)
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(fn(times), dtype=float), times.shape).copy()


class SymbolicRateRegressor(_SymbolicSearchMixin, RegressorMixin, BaseEstimator):
    """Strong-formulation search: regresses rate targets on state rows.

    The grammar is {+,-,*,/} over one variable per state column; pass
    ``feature_names`` to control how expressions are rendered.
    """

    def __init__(
        self,
        population=500,
        generations=100,
        complexity_cap=25,
        tournament_size=5,
        p_crossover=0.7,
        p_subtree_mutation=0.15,
        p_point_mutation=0.1,
        p_constant_jitter=0.05,
        polish_evals=50,
        global_evals=5000,
        local_max_iters=200,
        restarts=3,
        criterion="aic",
        feature_names=None,
        random_state=0,
    ):
        self.population = population
        self.generations = generations
        self.complexity_cap = complexity_cap
        self.tournament_size = tournament_size
        self.p_crossover = p_crossover
        self.p_subtree_mutation = p_subtree_mutation
        self.p_point_mutation = p_point_mutation
        self.p_constant_jitter = p_constant_jitter
        self.polish_evals = polish_evals
        self.global_evals = global_evals
        self.local_max_iters = local_max_iters
        self.restarts = restarts
        self.criterion = criterion
        self.feature_names = feature_names
        self.random_state = random_state

    def fit(self, X, y):
        states = as_float_array(X, "X", ndim=2)
        targets = as_float_array(y, "y", ndim=1)
        check_consistent_length(states, targets)
        names = self.feature_names or [f"x{i + 1}" for i in range(states.shape[1])]
        if len(names) != states.shape[1]:
            raise ValueError("feature_names length must match the column count")
        grammar = ex.rate_grammar(tuple(names), self.complexity_cap)
        self._search(grammar, gp.StrongFitness(states, targets))
        self.n_features_in_ = states.shape[1]
        return self

    def predict(self, X):
        self._check_fitted()
        states = as_float_array(X, "X", ndim=2)
        if states.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {states.shape[1]} columns, expected {self.n_features_in_}"
            )
        fn = ex.compile_expr(self.model_.expression, states.shape[1])
        with np.errstate(all="ignore"):
            out = fn(*(states[:, j] for j in range(states.shape[1])))
            return np.broadcast_to(np.asarray(out, dtype=float), (states.shape[0],)).copy()


class SymbolicKineticsRegressor(_SymbolicSearchMixin, BaseEstimator):
    """Weak-formulation search: discovers a rate law from trajectories.

    ``fit`` accepts a single ``(n_samples, n_species)`` concentration matrix
    or a list of them (one per experiment) together with matching sampling
    times.  Candidate rate laws are scored by integrating
    ``dC/dt = stoich * r(C)`` from each experiment's first measurement.
    """

    def __init__(
        self,
        stoich,
        species=None,
        population=200,
        generations=40,
        complexity_cap=25,
        tournament_size=5,
        p_crossover=0.7,
        p_subtree_mutation=0.15,
        p_point_mutation=0.1,
        p_constant_jitter=0.05,
        polish_evals=12,
        global_evals=5000,
        local_max_iters=200,
        restarts=3,
        criterion="aic",
        rel_tol=1e-6,
        abs_tol=1e-8,
        random_state=0,
    ):
        self.stoich = stoich
        self.species = species
        self.population = population
        self.generations = generations
        self.complexity_cap = complexity_cap
        self.tournament_size = tournament_size
        self.p_crossover = p_crossover
        self.p_subtree_mutation = p_subtree_mutation
        self.p_point_mutation = p_point_mutation
        self.p_constant_jitter = p_constant_jitter
        self.polish_evals = polish_evals
        self.global_evals = global_evals
        self.local_max_iters = local_max_iters
        self.restarts = restarts
        self.criterion = criterion
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.random_state = random_state

    def _as_dataset(self, X, t) -> kin.Dataset:
        if isinstance(X, np.ndarray) and X.ndim == 2:
            X = [X]
            t = [t]
        if not isinstance(t, (list, tuple)):
            t = [t] * len(X)
        check_consistent_length(X, t)
        names = self.species or [f"C{i + 1}" for i in range(np.shape(X[0])[1])]
        runs = []
        for conc, times in zip(X, t):
            conc = as_float_array(conc, "X", ndim=2)
            times = as_float_array(times, "t", ndim=1)
            check_consistent_length(conc, times)
            experiment = kin.Experiment(
                tuple(np.maximum(conc[0], 0.0)), times[0], times[-1], len(times)
            )
            runs.append(kin.ExperimentData(experiment, times, conc))
        return kin.Dataset("user", tuple(names), tuple(runs), kin.NoiseSpec(0.0), 0)

    def fit(self, X, t):
        dataset = self._as_dataset(X, t)
        nu = as_float_array(self.stoich, "stoich", ndim=1)
        if len(nu) != len(dataset.species):
            raise ValueError("stoich length must match the species count")
        grammar = ex.rate_grammar(dataset.species, self.complexity_cap)
        fitness = gp.WeakFitness(
            tuple(nu),
            dataset,
            kin.IntegratorSettings(
                rel_tol=self.rel_tol,
                abs_tol=self.abs_tol,
                max_steps=kin.FITTING_SETTINGS.max_steps,
                max_abs_state=kin.FITTING_SETTINGS.max_abs_state,
            ),
        )
        self._search(grammar, fitness)
        self.species_ = dataset.species
        self.n_features_in_ = len(dataset.species)
        return self

    def simulate(self, x0, t):
        """Integrate the selected rate law from ``x0`` over times ``t``."""
        self._check_fitted()
        x0 = as_float_array(x0, "x0", ndim=1)
        times = as_float_array(t, "t", ndim=1)
        deriv = kin.rate_derivative(
            self.model_.expression, as_float_array(self.stoich, "stoich"), len(x0)
        )
        result = kin.integrate(deriv, x0, times)
        if not result.success:
            raise kin.IntegrationFailure(result)
        return result.states

    def predict(self, x0, t):
        return self.simulate(x0, t)

    def score_rmse(self, X, t):
        """Root-mean-square trajectory error of the selected model."""
        self._check_fitted()
        dataset = self._as_dataset(X, t)
        total, count = 0.0, 0
        for run in dataset.experiments:
            states = self.simulate(run.conc[0], run.times)
            total += float(np.sum((states - run.conc) ** 2))
            count += run.conc.size
        return float(np.sqrt(total / count))
