"""Parameter estimation for symbolic models.

Three fitting contexts share a single two-stage optimizer (a global
artificial-bee-colony search followed by quasi-Newton refinement):

* profile fits regress a time expression onto one measured species series,
* strong-form fits regress a rate expression onto estimated rate values,
* weak-form fits integrate the candidate rate law as an ODE and compare the
  predicted concentrations to the measurements.

Objectives must map invalid parameter vectors (non-finite model output,
failed integration) to ``+inf``; the optimizer never repairs them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from . import criteria as ic
from . import expressions as ex
from . import kinetics as kin

__all__ = [
    "FitBudget",
    "FittedModel",
    "UnfittableModelError",
    "rss",
    "nll",
    "fit",
    "fit_profile",
    "fit_rate_strong",
    "fit_rate_weak",
    "profile_objective",
    "strong_objective",
    "weak_objective",
]

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
DEFAULT_INIT_BOX = (-10.0, 10.0)


class UnfittableModelError(RuntimeError):
    """Every parameter vector tried mapped to an infinite objective."""


@dataclass(frozen=True)
class FitBudget:
    """Evaluation budget for one two-stage fit."""

    global_evals: int = 5000
    local_max_iters: int = 200
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if min(self.global_evals, self.local_max_iters, self.restarts) < 1:
            raise ValueError("budget fields must be positive")


@dataclass(frozen=True)
class FittedModel:
    """A template with optimized parameters and its selection scores."""

    template: ex.ParamTemplate
    theta: tuple[float, ...]
    rss: float
    nll: float
    criteria: dict[str, float]
    context: str
    n: int

    @property
    def d(self) -> int:
        return self.template.dimension

    @property
    def complexity(self) -> int:
        return self.template.complexity

    @property
    def expression(self) -> ex.Expr:
        return ex.substitute(self.template, self.theta)

    def text(self, variables: Sequence[str]) -> str:
        return ex.format_expr(self.expression, variables)


# ---------------------------------------------------------------------------
# Losses


def rss(predicted: np.ndarray, observed: np.ndarray) -> float:
    """Residual sum of squares; any non-finite prediction maps to ``+inf``."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ValueError(
            f"shape mismatch: predicted {predicted.shape} vs observed {observed.shape}"
        )
    if not np.all(np.isfinite(predicted)):
        return math.inf
    with np.errstate(over="ignore"):
        diff = (predicted - observed).ravel()
        return float(diff @ diff)


def nll(per_species_rss: Sequence[float], n: int) -> float:
    """Concentrated Gaussian negative log-likelihood.

    Each species gets its own maximum-likelihood variance
    ``max(RSS_s / n, floor)``; the floor keeps perfect fits finite.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 0.0
    for value in per_species_rss:
        if value < 0:
            raise ValueError("RSS must be non-negative")
        if not math.isfinite(value):
            return math.inf
        variance = max(value / n, VARIANCE_FLOOR)
        total += 0.5 * n * math.log(2.0 * math.pi * variance) + 0.5 * n
    return total


# ---------------------------------------------------------------------------
# Two-stage optimizer


def _abc_search(
    objective: Callable[[np.ndarray], float],
    dimension: int,
    budget: FitBudget,
    lower: np.ndarray,
    upper: np.ndarray,
    init_points: Sequence[Sequence[float]],
) -> tuple[np.ndarray, np.ndarray, int]:
    """Artificial bee colony global stage.

    Returns the food-source matrix and costs after the evaluation budget is
    spent, plus the number of evaluations used.  Updates follow a fixed index
    order so the outcome is reproducible for a given seed.
    """
    rng = np.random.default_rng(budget.seed)
    colony_size = min(max(40, 10 * dimension), max(2, budget.global_evals // 2))
    limit = max(10, colony_size * dimension // 2)

    points = rng.uniform(lower, upper, size=(colony_size, dimension))
    for j, hint in enumerate(init_points):
        if j >= colony_size:
            break
        points[j] = np.clip(np.asarray(hint, dtype=float), lower, upper)
    costs = np.array([objective(p) for p in points])
    trials = np.zeros(colony_size, dtype=int)
    evals = colony_size

    def neighbor(i: int) -> np.ndarray:
        k = int(rng.integers(colony_size - 1))
        if k >= i:
            k += 1
        j = int(rng.integers(dimension))
        phi = rng.uniform(-1.0, 1.0)
        candidate = points[i].copy()
        candidate[j] += phi * (points[i, j] - points[k, j])
        return np.clip(candidate, lower, upper)

    def greedy(i: int, candidate: np.ndarray) -> None:
        nonlocal evals
        cost = objective(candidate)
        evals += 1
        if cost < costs[i]:
            points[i] = candidate
            costs[i] = cost
            trials[i] = 0
        else:
            trials[i] += 1

    while evals < budget.global_evals:
        for i in range(colony_size):  # employed bees
            if evals >= budget.global_evals:
                break
            greedy(i, neighbor(i))
        if evals >= budget.global_evals:
            break
        finite = np.isfinite(costs)
        if finite.any():
            ref = np.where(finite, costs, np.max(costs[finite]))
            weights = np.exp(-(ref - ref.min()) / (1.0 + np.mean(ref - ref.min())))
        else:
            weights = np.ones(colony_size)
        weights = weights / weights.sum()
        chosen = rng.choice(colony_size, size=colony_size, p=weights)
        for i in chosen:  # onlooker bees
            if evals >= budget.global_evals:
                break
            greedy(int(i), neighbor(int(i)))
        best = int(np.argmin(costs))
        for i in range(colony_size):  # scouts abandon stale sources
            if evals >= budget.global_evals:
                break
            if trials[i] > limit and i != best:
                points[i] = rng.uniform(lower, upper, size=dimension)
                costs[i] = objective(points[i])
                trials[i] = 0
                evals += 1
    return points, costs, evals


_LOCAL_CAP = 1e50  # stand-in for +inf inside the smooth local stage


def _local_refine(
    objective: Callable[[np.ndarray], float],
    start: np.ndarray,
    start_cost: float,
    max_iters: int,
) -> tuple[np.ndarray, float]:
    """Quasi-Newton (L-BFGS) polish with central finite-difference gradients.

    ``maxfun`` bounds the work even when line searches stall on the flat
    ridges that rational rate laws produce.  Guaranteed never to return a
    point worse than the start.
    """

    def capped(theta: np.ndarray) -> float:
        value = objective(theta)
        return value if math.isfinite(value) else _LOCAL_CAP

    def gradient(theta: np.ndarray) -> np.ndarray:
        grad = np.empty_like(theta)
        for i in range(theta.size):
            h = 1e-7 * (1.0 + abs(theta[i]))
            up = theta.copy()
            dn = theta.copy()
            up[i] += h
            dn[i] -= h
            grad[i] = (capped(up) - capped(dn)) / (2.0 * h)
        return grad

    try:
        result = optimize.minimize(
            capped,
            start,
            method="L-BFGS-B",
            jac=gradient,
            options={"maxiter": max_iters, "maxfun": 2 * max_iters, "gtol": 1e-10},
        )
    except (ValueError, FloatingPointError):  # pathological curvature
        return start, start_cost
    final = objective(np.asarray(result.x, dtype=float))
    if math.isfinite(final) and final < start_cost:
        return np.asarray(result.x, dtype=float), final
    return start, start_cost


def fit(
    objective: Callable[[np.ndarray], float],
    dimension: int,
    budget: FitBudget = FitBudget(),
    init_box: tuple[float, float] | Sequence[tuple[float, float]] = DEFAULT_INIT_BOX,
    init_points: Sequence[Sequence[float]] = (),
    trace_path: "str | None" = None,
) -> tuple[np.ndarray, float]:
    """Global (bee colony) + local (quasi-Newton) minimization.

    ``init_points`` are optional warm starts that join the initial colony and
    are always among the locally refined elites.  ``trace_path`` dumps a CSV
    of (evaluation index, best objective so far).  Raises
    :class:`UnfittableModelError` when no finite objective value is found.
    """
    trace: list[tuple[int, float]] = []
    if trace_path is not None:
        raw_objective = objective
        counter = [0, math.inf]

        def objective(theta, _raw=raw_objective):  # noqa: F811
            value = _raw(theta)
            counter[0] += 1
            if value < counter[1]:
                counter[1] = value
                trace.append((counter[0], value))
            return value

    try:
        return _fit_inner(objective, dimension, budget, init_box, init_points)
    finally:
        if trace_path is not None:
            import csv as _csv

            with open(trace_path, "w", newline="") as fh:
                writer = _csv.writer(fh)
                writer.writerow(["evaluation", "best_objective"])
                writer.writerows(trace)


def _fit_inner(objective, dimension, budget, init_box, init_points):
    if dimension == 0:
        theta = np.empty(0)
        value = objective(theta)
        if not math.isfinite(value):
            raise UnfittableModelError("zero-parameter model evaluates non-finite")
        return theta, value

    box = np.asarray(init_box, dtype=float)
    if box.shape == (2,):
        lower = np.full(dimension, box[0])
        upper = np.full(dimension, box[1])
    else:
        if box.shape != (dimension, 2):
            raise ValueError("init_box must be (lo, hi) or one pair per parameter")
        lower, upper = box[:, 0].copy(), box[:, 1].copy()
    if np.any(lower >= upper):
        raise ValueError("init_box lower bounds must be below upper bounds")
    for hint in init_points:
        if len(hint) != dimension:
            raise ValueError(
                f"warm start of length {len(hint)} does not match dimension {dimension}"
            )

    points, costs, _ = _abc_search(objective, dimension, budget, lower, upper, init_points)

    # Pool warm starts with the colony elites; refine the best few only.
    pool: dict[tuple, float] = {}
    for hint in init_points:
        hint = np.asarray(hint, dtype=float)
        cost = objective(hint)
        if math.isfinite(cost):
            pool.setdefault(tuple(hint), cost)
    order = np.argsort(costs, kind="stable")
    for i in order[: budget.restarts + 1 + len(init_points)]:
        if math.isfinite(costs[i]):
            pool.setdefault(tuple(points[i]), float(costs[i]))
    if not pool:
        raise UnfittableModelError("all sampled parameter vectors were infeasible")
    elites = sorted(pool.items(), key=lambda kv: (kv[1], kv[0]))[: budget.restarts + 1]

    best_theta, best_cost = None, math.inf
    for theta0, cost0 in elites:
        theta1, cost1 = _local_refine(
            objective, np.asarray(theta0, dtype=float), cost0, budget.local_max_iters
        )
        if cost1 < best_cost:
            best_theta, best_cost = theta1, cost1
    return np.asarray(best_theta, dtype=float), float(best_cost)


# ---------------------------------------------------------------------------
# Objectives for the three fitting contexts


def profile_objective(
    template: ex.ParamTemplate, times: np.ndarray, values: np.ndarray
) -> Callable[[np.ndarray], float]:
    """RSS of a time expression against one measured series."""
    fn = ex.compile_template(template, 1)
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)

    def objective(theta: np.ndarray) -> float:
        with np.errstate(all="ignore"):
            predicted = np.broadcast_to(fn(theta, times), values.shape)
            return rss(predicted, values)

    return objective


def strong_objective(
    template: ex.ParamTemplate, states: np.ndarray, targets: np.ndarray
) -> Callable[[np.ndarray], float]:
    """RSS of a rate expression against rate estimates, pooled over rows."""
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    columns = [states[:, j] for j in range(states.shape[1])]
    fn = ex.compile_template(template, states.shape[1])

    def objective(theta: np.ndarray) -> float:
        with np.errstate(all="ignore"):
            predicted = np.broadcast_to(fn(theta, *columns), targets.shape)
            return rss(predicted, targets)

    return objective


class _WeakSimulator:
    """Integrates a candidate rate law across all experiments of a dataset.

    Experiments sharing a sampling grid are integrated as one batched system
    (the rate law broadcasts over rows), which keeps the Python-level step
    overhead per objective evaluation low.  With ``fast=True`` the objective
    is additionally routed through a numba-compiled integrator specialized to
    the template structure; worthwhile when the same structure is evaluated
    many times, as in full parameter estimation.
    """

    def __init__(
        self,
        template: ex.ParamTemplate,
        stoich: Sequence[float],
        dataset: kin.Dataset,
        settings: kin.IntegratorSettings,
        fast: bool = False,
    ):
        self.template = template
        self.nu = np.asarray(stoich, dtype=float)
        self.settings = settings
        self.n_species = len(dataset.species)
        if len(self.nu) != self.n_species:
            raise ValueError("stoichiometry length must match species count")
        self.fn = ex.compile_template(template, self.n_species)
        self._fast_fn = None
        if fast:
            from ._fast_weak import compiled_weak_objective

            self._fast_fn = compiled_weak_objective(template, self.n_species)

        groups: dict[tuple, list[int]] = {}
        for idx, run in enumerate(dataset.experiments):
            groups.setdefault(tuple(np.round(run.times, 12)), []).append(idx)
        self.groups = []
        for times_key, indices in groups.items():
            times = np.asarray(times_key)
            # First measurement is the initial condition for the candidate ODE.
            c0 = np.stack([dataset.experiments[i].conc[0] for i in indices])
            observed = np.stack([dataset.experiments[i].conc for i in indices])
            self.groups.append(
                (
                    np.ascontiguousarray(times),
                    np.ascontiguousarray(c0),
                    np.ascontiguousarray(observed),
                    indices,
                )
            )

    def predict(self, theta: np.ndarray):
        """Trajectories per group, or None on integration failure."""
        out = []
        for times, c0, _observed, indices in self.groups:
            n_runs = len(indices)

            def deriv(_t, y):
                c = y.reshape(n_runs, self.n_species)
                r = self.fn(theta, *(c[:, j] for j in range(self.n_species)))
                r = np.broadcast_to(np.asarray(r, dtype=float), (n_runs,))
                return (r[:, None] * self.nu).reshape(y.shape)

            with np.errstate(all="ignore"):
                result = kin.integrate(
                    deriv,
                    c0.ravel(),
                    times,
                    rel_tol=self.settings.rel_tol,
                    abs_tol=self.settings.abs_tol,
                    max_steps=self.settings.max_steps,
                    max_abs_state=self.settings.max_abs_state,
                )
            if not result.success:
                return None
            out.append(result.states.reshape(len(times), n_runs, self.n_species))
        return out

    def objective(self, theta: np.ndarray) -> float:
        if self._fast_fn is not None:
            bound = self.settings.max_abs_state
            total = 0.0
            theta = np.ascontiguousarray(theta, dtype=float)
            for times, c0, observed, _indices in self.groups:
                value = self._fast_fn(
                    theta,
                    c0,
                    times,
                    observed,
                    self.nu,
                    self.settings.rel_tol,
                    self.settings.abs_tol,
                    self.settings.max_steps,
                    math.inf if bound is None else bound,
                )
                if not math.isfinite(value):
                    return math.inf
                total += value
            return total
        predictions = self.predict(theta)
        if predictions is None:
            return math.inf
        total = 0.0
        for (_times, _c0, observed, _indices), states in zip(self.groups, predictions):
            predicted = np.swapaxes(states, 0, 1)
            value = rss(predicted, observed)
            if not math.isfinite(value):
                return math.inf
            total += value
        return total

    def per_species_rss(self, theta: np.ndarray) -> np.ndarray | None:
        predictions = self.predict(theta)
        if predictions is None:
            return None
        totals = np.zeros(self.n_species)
        for (times, _c0, observed, _indices), states in zip(self.groups, predictions):
            predicted = np.swapaxes(states, 0, 1)
            if not np.all(np.isfinite(predicted)):
                return None
            totals += np.sum((predicted - observed) ** 2, axis=(0, 1))
        return totals


def weak_objective(
    template: ex.ParamTemplate,
    stoich: Sequence[float],
    dataset: kin.Dataset,
    settings: kin.IntegratorSettings = kin.FITTING_SETTINGS,
    fast: bool = False,
) -> Callable[[np.ndarray], float]:
    sim = _WeakSimulator(template, stoich, dataset, settings, fast=fast)
    return sim.objective


# ---------------------------------------------------------------------------
# Context-specific fits


def _finish(template, theta, value, per_species, n, context) -> FittedModel:
    model_nll = nll(per_species, n)
    return FittedModel(
        template=template,
        theta=tuple(float(v) for v in theta),
        rss=float(value),
        nll=model_nll,
        criteria=ic.all_criteria(model_nll, template.dimension, n),
        context=context,
        n=n,
    )


def fit_profile(
    template: ex.ParamTemplate,
    times: Sequence[float],
    values: Sequence[float],
    budget: FitBudget = FitBudget(),
    init_box=DEFAULT_INIT_BOX,
    init_points: Sequence[Sequence[float]] = (),
) -> FittedModel:
    """Fit a concentration-vs-time expression to one species series."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or times.ndim != 1:
        raise ValueError("times and values must be matching 1-D arrays")
    objective = profile_objective(template, times, values)
    theta, value = fit(objective, template.dimension, budget, init_box, init_points)
    return _finish(template, theta, value, [value], len(times), "profile")


def fit_rate_strong(
    template: ex.ParamTemplate,
    states: np.ndarray,
    targets: Sequence[float],
    budget: FitBudget = FitBudget(),
    init_box=DEFAULT_INIT_BOX,
    init_points: Sequence[Sequence[float]] = (),
) -> FittedModel:
    """Fit a rate expression directly to pooled rate estimates."""
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if states.ndim != 2 or targets.ndim != 1 or states.shape[0] != targets.shape[0]:
        raise ValueError("need one rate target per state row")
    objective = strong_objective(template, states, targets)
    theta, value = fit(objective, template.dimension, budget, init_box, init_points)
    return _finish(template, theta, value, [value], len(targets), "strong")


def fit_rate_weak(
    template: ex.ParamTemplate,
    stoich: Sequence[float],
    dataset: kin.Dataset,
    settings: kin.IntegratorSettings = kin.FITTING_SETTINGS,
    budget: FitBudget = FitBudget(),
    init_box=DEFAULT_INIT_BOX,
    init_points: Sequence[Sequence[float]] = (),
) -> FittedModel:
    """Dynamic fit: integrate the candidate rate law and match concentrations.

    The sample count for the likelihood is the number of sampling instants
    summed over experiments (not instants times species).
    """
    sim = _WeakSimulator(template, stoich, dataset, settings, fast=True)
    theta, value = fit(sim.objective, template.dimension, budget, init_box, init_points)
    per_species = sim.per_species_rss(theta)
    if per_species is None:
        raise UnfittableModelError("optimum fails to integrate")
    return _finish(template, theta, value, per_species, dataset.n_instants, "weak")
