"""End-to-end discovery pipelines and the experiment-design loop.

Two methods are provided.  ``adok-s`` (strong formulation) first fits a
closed-form concentration profile per experiment and species, differentiates
the selected profiles exactly to estimate reaction rates, and then searches
for a rate law that regresses those estimates.  ``adok-w`` (weak
formulation) skips rate estimation and scores candidate rate laws by
integrating them against the measured concentrations directly.

When the selected model's trajectory error stays above the acceptance
threshold, the loop asks the design module for a new initial condition that
best discriminates the two leading models, simulates that experiment with
the ground-truth system, appends it to the dataset and iterates.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import criteria as ic
from . import design
from . import expressions as ex
from . import fitting as fi
from . import gp
from . import kinetics as kin
from ._parallel import parallel_map

__all__ = [
    "DiscoveryConfig",
    "LoopConfig",
    "ProfileFit",
    "RateEstimates",
    "Diagnostics",
    "IterationResult",
    "LoopResult",
    "adok_s_iteration",
    "adok_w_iteration",
    "run_loop",
    "trajectory_diagnostics",
    "write_iteration_report",
    "write_figure_data",
]

log = logging.getLogger(__name__)

METHODS = ("adok-s", "adok-w")


def derive_seed(master: int, *keys: int) -> int:
    """Stable child seed for a task identified by integer keys."""
    return int(np.random.SeedSequence((master, *keys)).generate_state(1)[0])


@dataclass(frozen=True)
class DiscoveryConfig:
    """Budgets and policies for one discovery iteration."""

    profile_gp: gp.GpConfig = field(default_factory=gp.profile_gp_config)
    rate_gp: gp.GpConfig = field(default_factory=gp.strong_gp_config)
    weak_gp: gp.GpConfig = field(default_factory=gp.weak_gp_config)
    fit_budget: fi.FitBudget = field(default_factory=fi.FitBudget)
    integrator: kin.IntegratorSettings = kin.FITTING_SETTINGS
    criterion: str = "aic"
    # None pools rate estimates from every species (scaled by 1/nu_s);
    # an index restricts estimation to that single reference species.
    rate_reference: int | None = None
    # "profile" evaluates rate-model inputs on the smoothed profiles,
    # "measured" uses the raw concentration measurements.
    state_source: str = "profile"
    seed: int = 0
    threads: int = 1
    # when set, evolution logs and hall-of-fame JSON files land here
    artifacts_dir: str | None = None

    def __post_init__(self):
        if self.state_source not in ("profile", "measured"):
            raise ValueError("state_source must be 'profile' or 'measured'")

    def artifact_path(self, name: str) -> "Path | None":
        if self.artifacts_dir is None:
            return None
        root = Path(self.artifacts_dir)
        root.mkdir(parents=True, exist_ok=True)
        return root / name


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 3
    accept_rmse: float | None = None  # None: 1.5 * dataset noise std dev

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class ProfileFit:
    experiment: int
    species: int
    model: fi.FittedModel


@dataclass(frozen=True)
class RateEstimates:
    """Per-experiment (state, rate) samples extracted from the profiles."""

    experiment: int
    times: np.ndarray
    states: np.ndarray         # (n_t, n_species) rate-model inputs
    rates: np.ndarray          # (n_t, n_sources) one column per contributing species
    source_species: tuple[int, ...]


@dataclass(frozen=True)
class Diagnostics:
    rss: float
    rmse: float
    per_experiment_rmse: tuple[float, ...]


@dataclass(frozen=True)
class IterationResult:
    method: str
    best: fi.FittedModel
    runner_up: fi.FittedModel | None
    finalists: tuple[fi.FittedModel, ...]
    diagnostics: Diagnostics
    profiles: tuple[ProfileFit, ...] = ()
    rate_estimates: tuple[RateEstimates, ...] = ()


@dataclass(frozen=True)
class LoopResult:
    method: str
    iterations: tuple[IterationResult, ...]
    proposals: tuple[design.DesignProposal, ...]
    dataset: kin.Dataset
    accepted: bool


# ---------------------------------------------------------------------------
# Shared pieces


def trajectory_diagnostics(
    model: fi.FittedModel,
    stoich: Sequence[float],
    dataset: kin.Dataset,
    settings: kin.IntegratorSettings = kin.FITTING_SETTINGS,
) -> Diagnostics:
    """Integrate the model from each experiment's first measurement."""
    expr = model.expression
    deriv = kin.rate_derivative(expr, stoich, len(dataset.species))
    total = 0.0
    count = 0
    per_experiment = []
    with np.errstate(all="ignore"):
        for run in dataset.experiments:
            result = kin.integrate(
                deriv,
                run.conc[0],
                run.times,
                rel_tol=settings.rel_tol,
                abs_tol=settings.abs_tol,
                max_steps=settings.max_steps,
                max_abs_state=settings.max_abs_state,
            )
            if not result.success:
                per_experiment.append(math.inf)
                total = math.inf
                count += run.conc.size
                continue
            rss_run = float(np.sum((result.states - run.conc) ** 2))
            per_experiment.append(math.sqrt(rss_run / run.conc.size))
            total += rss_run
            count += run.conc.size
    rmse = math.sqrt(total / count) if math.isfinite(total) else math.inf
    return Diagnostics(rss=total, rmse=rmse, per_experiment_rmse=tuple(per_experiment))


def _select(models: list[fi.FittedModel], criterion: str):
    ranked = ic.rank(models, criterion)
    runner = ranked[1] if len(ranked) > 1 else None
    return ranked[0], runner


def _profile_task(args):
    times, values, config = args
    fitness = gp.ProfileFitness(times, values)
    grammar = ex.profile_grammar(config["gp"].complexity_cap or 15)
    hof = gp.evolve(grammar, fitness, config["gp"], log_path=config.get("log_path"))
    if config.get("hof_path") is not None and len(hof):
        hof.write_json(config["hof_path"], grammar.variables)
    try:
        models = gp.finalists(hof, fitness, config["budget"])
    except ValueError:
        return None
    if not models:
        return None
    best, _ = _select(models, config["criterion"])
    return best


# ---------------------------------------------------------------------------
# Strong-formulation iteration


def adok_s_iteration(
    dataset: kin.Dataset,
    stoich: Sequence[float],
    config: DiscoveryConfig = DiscoveryConfig(),
) -> IterationResult:
    """Profile regression, exact-derivative rate estimation, rate regression."""
    if not dataset.experiments:
        raise ValueError("dataset has no experiments")
    nu = np.asarray(stoich, dtype=float)
    n_species = len(dataset.species)
    if nu.size != n_species:
        raise ValueError("stoich length must match species count")

    tasks = []
    keys = []
    for e, run in enumerate(dataset.experiments):
        for s in range(n_species):
            cfg = replace(
                config.profile_gp, seed=derive_seed(config.seed, 0, e, s)
            )
            budget = replace(
                config.fit_budget, seed=derive_seed(config.seed, 1, e, s)
            )
            tasks.append(
                (
                    run.times,
                    run.conc[:, s],
                    {
                        "gp": cfg,
                        "budget": budget,
                        "criterion": config.criterion,
                        "log_path": config.artifact_path(f"profile_e{e + 1}_s{s + 1}_log.csv"),
                        "hof_path": config.artifact_path(f"profile_e{e + 1}_s{s + 1}_hof.json"),
                    },
                )
            )
            keys.append((e, s))
    results = parallel_map(_profile_task, tasks, config.threads)

    profiles: dict[tuple[int, int], fi.FittedModel] = {}
    for (e, s), model in zip(keys, results):
        if model is None:
            log.warning(
                "profile for experiment %d species %s is unfittable",
                e,
                dataset.species[s],
            )
            continue
        profiles[(e, s)] = model

    estimates = []
    for e, run in enumerate(dataset.experiments):
        available = [s for s in range(n_species) if (e, s) in profiles]
        if not available:
            log.warning("experiment %d excluded: no fittable profile", e)
            continue
        if config.rate_reference is not None:
            if (e, config.rate_reference) not in profiles:
                log.warning(
                    "experiment %d excluded: reference species profile missing", e
                )
                continue
            sources = [config.rate_reference]
        else:
            sources = available

        times = run.times
        states = run.conc.copy()
        if config.state_source == "profile":
            for s in available:
                expr = profiles[(e, s)].expression
                fn = ex.compile_expr(expr, 1)
                with np.errstate(all="ignore"):
                    states[:, s] = np.broadcast_to(
                        np.asarray(fn(times), dtype=float), times.shape
                    )
        rate_columns = []
        for s in sources:
            expr = profiles[(e, s)].expression
            deriv = ex.differentiate(expr, 0)
            fn = ex.compile_expr(deriv, 1)
            with np.errstate(all="ignore"):
                column = np.broadcast_to(
                    np.asarray(fn(times), dtype=float), times.shape
                )
            rate_columns.append(column / nu[s])
        estimates.append(
            RateEstimates(
                experiment=e,
                times=times,
                states=states,
                rates=np.stack(rate_columns, axis=1),
                source_species=tuple(sources),
            )
        )
    if not estimates:
        raise fi.UnfittableModelError("no experiment produced usable rate estimates")

    pooled_states = np.vstack(
        [np.repeat(est.states, est.rates.shape[1], axis=0) for est in estimates]
    )
    pooled_rates = np.concatenate([est.rates.ravel() for est in estimates])
    finite = np.isfinite(pooled_rates) & np.all(np.isfinite(pooled_states), axis=1)
    if not finite.all():
        log.warning("dropping %d non-finite rate estimates", int((~finite).sum()))
    pooled_states = pooled_states[finite]
    pooled_rates = pooled_rates[finite]

    fitness = gp.StrongFitness(pooled_states, pooled_rates)
    grammar = ex.rate_grammar(dataset.species, config.rate_gp.complexity_cap or 25)
    rate_cfg = replace(config.rate_gp, seed=derive_seed(config.seed, 2))
    hof = gp.evolve(
        grammar, fitness, rate_cfg, log_path=config.artifact_path("rate_gp_log.csv")
    )
    if config.artifacts_dir is not None and len(hof):
        hof.write_json(config.artifact_path("rate_gp_hof.json"), grammar.variables)
    budget = replace(config.fit_budget, seed=derive_seed(config.seed, 3))
    models = gp.finalists(hof, fitness, budget)
    if not models:
        raise fi.UnfittableModelError("no rate-model finalist could be fitted")
    best, runner = _select(models, config.criterion)
    diagnostics = trajectory_diagnostics(best, nu, dataset, config.integrator)
    return IterationResult(
        method="adok-s",
        best=best,
        runner_up=runner,
        finalists=tuple(models),
        diagnostics=diagnostics,
        profiles=tuple(
            ProfileFit(e, s, model) for (e, s), model in sorted(profiles.items())
        ),
        rate_estimates=tuple(estimates),
    )


# ---------------------------------------------------------------------------
# Weak-formulation iteration


def adok_w_iteration(
    dataset: kin.Dataset,
    stoich: Sequence[float],
    config: DiscoveryConfig = DiscoveryConfig(),
) -> IterationResult:
    """Direct rate-law search with the integrate-and-compare fitness."""
    if not dataset.experiments:
        raise ValueError("dataset has no experiments")
    nu = tuple(float(v) for v in stoich)
    if len(nu) != len(dataset.species):
        raise ValueError("stoich length must match species count")
    fitness = gp.WeakFitness(nu, dataset, config.integrator)
    grammar = ex.rate_grammar(dataset.species, config.weak_gp.complexity_cap or 25)
    weak_cfg = replace(config.weak_gp, seed=derive_seed(config.seed, 4))
    hof = gp.evolve(
        grammar, fitness, weak_cfg, log_path=config.artifact_path("rate_gp_log.csv")
    )
    if config.artifacts_dir is not None and len(hof):
        hof.write_json(config.artifact_path("rate_gp_hof.json"), grammar.variables)
    budget = replace(config.fit_budget, seed=derive_seed(config.seed, 5))
    models = gp.finalists(hof, fitness, budget)
    if not models:
        raise fi.UnfittableModelError("no rate-model finalist could be fitted")
    best, runner = _select(models, config.criterion)
    diagnostics = trajectory_diagnostics(best, nu, dataset, config.integrator)
    return IterationResult(
        method="adok-w",
        best=best,
        runner_up=runner,
        finalists=tuple(models),
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Closed loop with design of experiments


def run_loop(
    system: kin.ReactionSystem,
    dataset: kin.Dataset,
    method: str,
    loop: LoopConfig = LoopConfig(),
    space: design.DesignSpace | None = None,
    config: DiscoveryConfig = DiscoveryConfig(),
) -> LoopResult:
    """Iterate a discovery method with simulator-in-the-loop experiments.

    The ground-truth ``system`` plays the role of the laboratory: proposed
    experiments are simulated with the dataset's noise spec and appended.
    The loop stops when the selected model's trajectory RMSE passes the
    acceptance threshold, when a degenerate (indistinguishable) model pair
    leaves nothing to discriminate, or when the iteration budget is spent.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if space is None:
        space = design.DesignSpace.around_experiments(
            [run.experiment for run in dataset.experiments]
        )
    threshold = loop.accept_rmse
    if threshold is None:
        threshold = 1.5 * dataset.noise.std_dev

    iterations: list[IterationResult] = []
    proposals: list[design.DesignProposal] = []
    accepted = False
    for index in range(loop.max_iterations):
        iter_artifacts = (
            str(Path(config.artifacts_dir) / f"iteration_{index + 1:02d}")
            if config.artifacts_dir is not None
            else None
        )
        iter_config = replace(
            config,
            seed=derive_seed(config.seed, 6, index),
            artifacts_dir=iter_artifacts,
        )
        if method == "adok-s":
            result = adok_s_iteration(dataset, system.stoich, iter_config)
        else:
            result = adok_w_iteration(dataset, system.stoich, iter_config)
        iterations.append(result)
        log.info(
            "%s iteration %d: best %s (rmse %.4g)",
            method,
            index + 1,
            result.best.text(dataset.species),
            result.diagnostics.rmse,
        )
        if result.diagnostics.rmse <= threshold:
            accepted = True
            break
        if index == loop.max_iterations - 1:
            break
        if result.runner_up is None:
            log.warning("single finalist only; cannot design a discriminating run")
            break
        proposal = design.propose_experiment(
            result.best,
            result.runner_up,
            system.stoich,
            space,
            seed=derive_seed(config.seed, 7, index),
            extra_starts=[run.experiment.initial for run in dataset.experiments],
        )
        proposals.append(proposal)
        if proposal.degenerate:
            log.warning("degenerate design proposal; stopping the loop")
            break
        reference = dataset.experiments[0].experiment
        new_experiment = kin.Experiment(
            proposal.x0,
            t0=space.window[0],
            tf=space.window[1],
            n_samples=reference.n_samples,
        )
        dataset = extend_dataset(dataset, system, new_experiment)
    return LoopResult(
        method=method,
        iterations=tuple(iterations),
        proposals=tuple(proposals),
        dataset=dataset,
        accepted=accepted,
    )


def extend_dataset(
    dataset: kin.Dataset,
    system: kin.ReactionSystem,
    experiment: kin.Experiment,
    settings: kin.IntegratorSettings = kin.IntegratorSettings(),
) -> kin.Dataset:
    """Simulate one more experiment and append it (history stays intact)."""
    result = kin.simulate_experiment(system, experiment, settings)
    if not result.success:
        raise kin.IntegrationFailure(result)
    conc = result.states.copy()
    new_index = len(dataset.experiments)
    if dataset.noise.std_dev > 0:
        for s in range(len(system.species)):
            rng = np.random.default_rng((dataset.seed, new_index, s))
            conc[:, s] += rng.normal(0.0, dataset.noise.std_dev, size=conc.shape[0])
    run = kin.ExperimentData(experiment, experiment.times(), conc)
    return kin.Dataset(
        dataset.system,
        dataset.species,
        dataset.experiments + (run,),
        dataset.noise,
        dataset.seed,
    )


# ---------------------------------------------------------------------------
# Reports and figure data


def _model_record(model: fi.FittedModel | None, variables) -> dict | None:
    if model is None:
        return None
    return {
        "expression": model.text(variables),
        "theta": list(model.theta),
        "d": model.d,
        "complexity": model.complexity,
        "rss": model.rss,
        "nll": model.nll,
        "criteria": dict(model.criteria),
        "n": model.n,
    }


def write_iteration_report(
    path: str | Path,
    result: IterationResult,
    dataset: kin.Dataset,
    config_record: dict | None = None,
    proposal: design.DesignProposal | None = None,
) -> None:
    variables = dataset.species
    report = {
        "version": __version__,
        "method": result.method,
        "selected": _model_record(result.best, variables),
        "runner_up": _model_record(result.runner_up, variables),
        "finalists": [_model_record(m, variables) for m in result.finalists],
        "diagnostics": {
            "rss": result.diagnostics.rss,
            "rmse": result.diagnostics.rmse,
            "per_experiment_rmse": list(result.diagnostics.per_experiment_rmse),
        },
        "profiles": [
            {
                "experiment": p.experiment,
                "species": variables[p.species],
                "expression": p.model.text(("t",)),
                "criteria": dict(p.model.criteria),
            }
            for p in result.profiles
        ],
        "proposed_experiment": (
            {
                "x0": list(proposal.x0),
                "objective": proposal.objective,
                "degenerate": proposal.degenerate,
            }
            if proposal is not None
            else None
        ),
        "config": config_record or {},
    }
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def write_figure_data(
    outdir: str | Path,
    result: IterationResult,
    dataset: kin.Dataset,
    stoich: Sequence[float],
    system: kin.ReactionSystem | None = None,
    settings: kin.IntegratorSettings = kin.FITTING_SETTINGS,
) -> list[Path]:
    """CSV files backing the measured/fitted/rate comparison figures."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []

    if result.profiles:
        path = outdir / "profiles.csv"
        by_key = {(p.experiment, p.species): p.model for p in result.profiles}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["experiment", "species", "t", "measured", "fitted"])
            for e, run in enumerate(dataset.experiments):
                for s, name in enumerate(dataset.species):
                    model = by_key.get((e, s))
                    if model is None:
                        continue
                    fn = ex.compile_expr(model.expression, 1)
                    with np.errstate(all="ignore"):
                        fitted = np.broadcast_to(
                            np.asarray(fn(run.times), dtype=float), run.times.shape
                        )
                    for k in range(len(run.times)):
                        writer.writerow(
                            [e + 1, name, f"{run.times[k]:.9g}",
                             f"{run.conc[k, s]:.9g}", f"{fitted[k]:.9g}"]
                        )
        paths.append(path)

    if result.rate_estimates:
        path = outdir / "rates.csv"
        true_fn = None
        if system is not None:
            true_fn = ex.compile_expr(system.rate, len(system.species))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["experiment", "source_species", "t", "estimated_rate", "true_rate"])
            for est in result.rate_estimates:
                truth = [""] * len(est.times)
                if true_fn is not None:
                    run = dataset.experiments[est.experiment]
                    with np.errstate(all="ignore"):
                        values = true_fn(*(est.states[:, j] for j in range(est.states.shape[1])))
                    truth = [f"{v:.9g}" for v in np.broadcast_to(values, est.times.shape)]
                for col, s in enumerate(est.source_species):
                    for k in range(len(est.times)):
                        writer.writerow(
                            [est.experiment + 1, dataset.species[s],
                             f"{est.times[k]:.9g}", f"{est.rates[k, col]:.9g}", truth[k]]
                        )
        paths.append(path)

    path = outdir / "response.csv"
    expr = result.best.expression
    deriv = kin.rate_derivative(expr, stoich, len(dataset.species))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "species", "t", "measured", "model"])
        with np.errstate(all="ignore"):
            for e, run in enumerate(dataset.experiments):
                sim = kin.integrate(
                    deriv, run.conc[0], run.times,
                    rel_tol=settings.rel_tol, abs_tol=settings.abs_tol,
                    max_steps=settings.max_steps, max_abs_state=settings.max_abs_state,
                )
                states = sim.states
                for s, name in enumerate(dataset.species):
                    for k in range(states.shape[0]):
                        writer.writerow(
                            [e + 1, name, f"{run.times[k]:.9g}",
                             f"{run.conc[k, s]:.9g}", f"{states[k, s]:.9g}"]
                        )
    paths.append(path)
    return paths
