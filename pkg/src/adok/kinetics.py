"""Batch-reactor case studies, adaptive ODE integration and dataset synthesis.

Each reaction system couples a single scalar rate law ``r(C)`` to the species
derivatives through a stoichiometric vector: ``dC_s/dt = nu_s * r(C)``.
Datasets are generated by integrating the true system from each experiment's
initial condition and corrupting the samples with seeded Gaussian noise.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import expressions as ex

__all__ = [
    "ReactionSystem",
    "Experiment",
    "NoiseSpec",
    "ExperimentData",
    "Dataset",
    "IntegratorSettings",
    "IntegrationResult",
    "IntegrationFailure",
    "integrate",
    "rate_derivative",
    "make_case_study",
    "generate_dataset",
    "simulate_experiment",
    "write_dataset",
    "read_dataset",
    "CASE_STUDIES",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReactionSystem:
    """Ground-truth kinetic system: species, stoichiometry and rate law."""

    name: str
    species: tuple[str, ...]
    stoich: tuple[float, ...]
    rate: ex.Expr
    rate_params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "stoich", tuple(float(v) for v in self.stoich))
        object.__setattr__(self, "rate_params", tuple(float(v) for v in self.rate_params))
        if len(self.stoich) != len(self.species):
            raise ValueError("stoich length must match species count")
        if not any(v < 0 for v in self.stoich) or not any(v > 0 for v in self.stoich):
            raise ValueError("need at least one reactant and one product")

    @property
    def rate_text(self) -> str:
        return ex.format_expr(self.rate, self.species)


@dataclass(frozen=True)
class Experiment:
    """One batch run: initial concentrations and an even sampling grid."""

    initial: tuple[float, ...]
    t0: float = 0.0
    tf: float = 10.0
    n_samples: int = 30

    def __post_init__(self):
        object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))
        if any(v < 0 for v in self.initial):
            raise ValueError("initial concentrations must be non-negative")
        if not self.t0 < self.tf:
            raise ValueError("t0 must precede tf")
        if self.n_samples < 2:
            raise ValueError("need at least two samples")

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.tf, self.n_samples)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive measurement noise: shared std dev (M) and base seed."""

    std_dev: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.std_dev < 0:
            raise ValueError("std_dev must be non-negative")


@dataclass(frozen=True)
class ExperimentData:
    experiment: Experiment
    times: np.ndarray
    conc: np.ndarray  # shape (n_samples, n_species)


@dataclass(frozen=True)
class Dataset:
    """Measured (or synthetic) concentration series for several experiments."""

    system: str
    species: tuple[str, ...]
    experiments: tuple[ExperimentData, ...]
    noise: NoiseSpec
    seed: int

    def __post_init__(self):
        for run in self.experiments:
            if run.conc.shape != (len(run.times), len(self.species)):
                raise ValueError("concentration matrix shape mismatch")
            if np.any(np.diff(run.times) <= 0):
                raise ValueError("sampling times must be strictly increasing")

    @property
    def n_instants(self) -> int:
        return sum(len(run.times) for run in self.experiments)


# ---------------------------------------------------------------------------
# Adaptive Runge-Kutta integration (Dormand-Prince 4(5) pair)

# Butcher tableau of the Dormand-Prince embedded pair.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_ERR = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


@dataclass(frozen=True)
class IntegratorSettings:
    """Tolerances and safety caps for one integration context.

    ``max_abs_state`` aborts trajectories whose magnitude explodes; useful
    inside fitting loops where such candidates are discarded anyway and the
    tiny steps near a blow-up would otherwise dominate runtime.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_steps: int = 100_000
    max_abs_state: float | None = None

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")


#: defaults used when integrating candidate models inside an objective
FITTING_SETTINGS = IntegratorSettings(
    rel_tol=1e-6, abs_tol=1e-8, max_steps=400, max_abs_state=1e4
)


@dataclass(frozen=True)
class IntegrationResult:
    """Trajectory samples; on failure ``states`` holds the valid prefix."""

    times: np.ndarray
    states: np.ndarray  # (n_valid, n_state)
    success: bool
    failure_time: float | None = None
    message: str = ""

    @property
    def n_valid(self) -> int:
        return self.states.shape[0]


class IntegrationFailure(RuntimeError):
    """Raised by callers that require a complete trajectory."""

    def __init__(self, result: IntegrationResult):
        super().__init__(result.message)
        self.result = result


def integrate(
    derivative: Callable[[float, np.ndarray], np.ndarray],
    y0: Sequence[float],
    output_times: Sequence[float],
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-10,
    max_steps: int = 100_000,
    max_abs_state: float | None = None,
) -> IntegrationResult:
    """Integrate ``dy/dt = derivative(t, y)`` to each requested time.

    Uses the Dormand-Prince embedded 4(5) pair with proportional step
    control; steps are clamped onto the output grid so samples are exact
    solver states rather than interpolants.  A non-finite derivative or a
    vanishing step size ends the integration early: the result then carries
    ``success=False``, the last trustworthy time, and the prefix of samples
    that were reached.  Blow-ups are expected from candidate rate models and
    must stay recoverable.
    """
    t_out = np.asarray(output_times, dtype=float)
    if t_out.ndim != 1 or len(t_out) == 0:
        raise ValueError("output_times must be a non-empty 1-D sequence")
    if np.any(np.diff(t_out) <= 0):
        raise ValueError("output_times must be strictly increasing")
    y = np.asarray(y0, dtype=float).copy()
    n = y.size

    t = t_out[0]
    t_end = t_out[-1]
    span = t_end - t

    samples = np.empty((len(t_out), n))
    samples[0] = y
    next_out = 1

    def fail(msg: str) -> IntegrationResult:
        return IntegrationResult(
            times=t_out[:next_out],
            states=samples[:next_out].copy(),
            success=False,
            failure_time=t,
            message=msg,
        )

    with np.errstate(all="ignore"):
        f = np.asarray(derivative(t, y), dtype=float)
        if f.shape != y.shape:
            raise ValueError("derivative shape does not match state shape")
        if not np.all(np.isfinite(f)):
            return fail("non-finite derivative at initial state")

        # Conservative first step from the initial derivative scale.
        scale0 = abs_tol + rel_tol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale0) ** 2))
        d1 = np.sqrt(np.mean((f / scale0) ** 2))
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6 * span
        h = min(h, span / 10)

        k = np.empty((7, n))
        min_step = 1e-14 * span
        for _ in range(max_steps):
            if next_out >= len(t_out):
                return IntegrationResult(t_out, samples, True)
            h = min(h, t_end - t)
            hit_output = t + h >= t_out[next_out] - 1e-14 * span
            if hit_output:
                h = t_out[next_out] - t
            if h <= min_step:
                return fail("step size underflow")

            k[0] = f
            ok = True
            for stage in range(1, 7):
                y_stage = y + h * (_DP_A[stage] @ k[:stage])
                k[stage] = derivative(t + _DP_C[stage] * h, y_stage)
                if not np.all(np.isfinite(k[stage])):
                    ok = False
                    break
            if ok:
                y_new = y + h * (_DP_B5 @ k)
                err_vec = h * (_DP_ERR @ k)
                scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
                err = np.sqrt(np.mean((err_vec / scale) ** 2))
                ok = np.isfinite(err) and np.all(np.isfinite(y_new))
            if not ok:
                h *= 0.25
                continue

            if err <= 1.0:
                t = t_out[next_out] if hit_output else t + h
                y = y_new
                f = k[6]  # FSAL: the seventh stage is f(t+h, y_new)
                if max_abs_state is not None and np.max(np.abs(y)) > max_abs_state:
                    return fail("state magnitude exceeded bound")
                if hit_output:
                    samples[next_out] = y
                    next_out += 1
                factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                h *= factor
            else:
                h *= max(0.2, 0.9 * err ** -0.2)
        if next_out >= len(t_out):
            return IntegrationResult(t_out, samples, True)
        return fail("maximum step count exceeded")


def rate_derivative(
    rate: ex.Expr, stoich: Sequence[float], n_species: int
) -> Callable[[float, np.ndarray], np.ndarray]:
    """ODE right-hand side ``dC/dt = nu * r(C)`` for a compiled rate law."""
    fn = ex.compile_expr(rate, n_species)
    nu = np.asarray(stoich, dtype=float)

    def deriv(_t: float, c: np.ndarray) -> np.ndarray:
        r = fn(*c)
        return nu * r

    return deriv


def simulate_experiment(
    system: ReactionSystem,
    experiment: Experiment,
    settings: IntegratorSettings = IntegratorSettings(),
) -> IntegrationResult:
    """Noise-free trajectory of the true system over the sampling grid."""
    deriv = rate_derivative(system.rate, system.stoich, len(system.species))
    return integrate(
        deriv,
        experiment.initial,
        experiment.times(),
        rel_tol=settings.rel_tol,
        abs_tol=settings.abs_tol,
        max_steps=settings.max_steps,
        max_abs_state=settings.max_abs_state,
    )


# ---------------------------------------------------------------------------
# Case studies


def _build_system(name, species, stoich, rate_text, params):
    grammar = ex.rate_grammar(species)
    skeleton = ex.parse_expr(rate_text, grammar)
    rate = ex.substitute(ex.template_from_skeleton(skeleton), params)
    return ReactionSystem(name, tuple(species), tuple(stoich), rate, tuple(params))


def _isomerization() -> tuple[ReactionSystem, list[Experiment], NoiseSpec]:
    system = _build_system(
        "isomerization",
        ("C_A", "C_B"),
        (-1.0, 1.0),
        "(p1*C_A-p2*C_B)/(p3*C_A+p4*C_B+p5)",
        (7.0, 3.0, 4.0, 2.0, 6.0),
    )
    initials = [(2, 0), (10, 2), (2, 2), (10, 2), (10, 1)]
    return system, [Experiment(ic) for ic in initials], NoiseSpec(0.2)


def _n2o_decomposition() -> tuple[ReactionSystem, list[Experiment], NoiseSpec]:
    # r = -2 dC_N2O/dt = 2 dC_N2/dt = dC_O2/dt
    system = _build_system(
        "n2o",
        ("C_N2O", "C_N2", "C_O2"),
        (-0.5, 0.5, 1.0),
        "p1*C_N2O*C_N2O/(1+p2*C_N2O)",
        (2.0, 5.0),
    )
    initials = [(5, 0, 0), (10, 0, 0), (5, 2, 0), (5, 0, 3), (0, 2, 3)]
    return system, [Experiment(ic) for ic in initials], NoiseSpec(0.2)


def _toluene_hydrodealkylation() -> tuple[ReactionSystem, list[Experiment], NoiseSpec]:
    system = _build_system(
        "toluene",
        ("C_T", "C_H", "C_B", "C_M"),
        (-1.0, -1.0, 1.0, 1.0),
        "p1*C_T*C_H/(1+p2*C_B+p3*C_T)",
        (2.0, 9.0, 5.0),
    )
    initials = [
        (1, 8, 2, 3),
        (5, 8, 0, 0.5),
        (5, 3, 0, 0.5),
        (1, 3, 0, 3),
        (1, 8, 2, 0.5),
    ]
    return system, [Experiment(ic) for ic in initials], NoiseSpec(0.2)


CASE_STUDIES = {
    "isomerization": _isomerization,
    "n2o": _n2o_decomposition,
    "toluene": _toluene_hydrodealkylation,
}


def make_case_study(name: str) -> tuple[ReactionSystem, list[Experiment], NoiseSpec]:
    """Return one of the built-in systems with its five standard experiments."""
    try:
        factory = CASE_STUDIES[name]
    except KeyError:
        raise ValueError(
            f"unknown case study {name!r}; choose from {sorted(CASE_STUDIES)}"
        ) from None
    return factory()


# ---------------------------------------------------------------------------
# Dataset generation and I/O


def _noise_rng(seed: int, experiment_index: int, species_index: int) -> np.random.Generator:
    # Substream per (experiment, species) keeps output independent of the
    # order in which experiments are simulated.
    return np.random.default_rng((seed, experiment_index, species_index))


def generate_dataset(
    system: ReactionSystem,
    experiments: Sequence[Experiment],
    noise: NoiseSpec,
    seed: int | None = None,
    settings: IntegratorSettings = IntegratorSettings(),
) -> Dataset:
    """Simulate every experiment and add iid Gaussian measurement noise.

    ``seed`` defaults to ``noise.seed``.  Noisy values are kept as-is (they
    may dip below zero); clipping would bias the likelihood downstream.
    """
    if seed is None:
        seed = noise.seed
    runs = []
    for i, experiment in enumerate(experiments):
        result = simulate_experiment(system, experiment, settings)
        if not result.success:
            raise IntegrationFailure(result)
        conc = result.states.copy()
        if noise.std_dev > 0:
            for s in range(len(system.species)):
                rng = _noise_rng(seed, i, s)
                conc[:, s] += rng.normal(0.0, noise.std_dev, size=conc.shape[0])
        runs.append(ExperimentData(experiment, experiment.times(), conc))
    return Dataset(system.name, system.species, tuple(runs), noise, seed)


def _format_value(v: float) -> str:
    return format(float(v), ".9g")


def write_dataset(dataset: Dataset, outdir: str | Path) -> list[Path]:
    """Write one CSV per experiment plus a JSON manifest; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, run in enumerate(dataset.experiments, start=1):
        path = outdir / f"experiment_{i:02d}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *dataset.species])
            for k in range(len(run.times)):
                writer.writerow(
                    [_format_value(run.times[k])]
                    + [_format_value(v) for v in run.conc[k]]
                )
        paths.append(path)
    manifest = {
        "system": dataset.system,
        "species": list(dataset.species),
        "noise_std_dev": dataset.noise.std_dev,
        "seed": dataset.seed,
        "experiments": [
            {
                "file": f"experiment_{i:02d}.csv",
                "initial": list(run.experiment.initial),
                "t0": run.experiment.t0,
                "tf": run.experiment.tf,
                "n_samples": run.experiment.n_samples,
            }
            for i, run in enumerate(dataset.experiments, start=1)
        ],
    }
    manifest_path = outdir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(manifest_path)
    return paths


def read_dataset(indir: str | Path) -> Dataset:
    """Load a dataset previously written by :func:`write_dataset`."""
    indir = Path(indir)
    manifest_path = indir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {indir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    species = tuple(manifest["species"])
    runs = []
    for entry in manifest["experiments"]:
        experiment = Experiment(
            tuple(entry["initial"]), entry["t0"], entry["tf"], entry["n_samples"]
        )
        with open(indir / entry["file"], newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["t", *species]:
                raise ValueError(f"unexpected header in {entry['file']}: {header}")
            rows = [[float(v) for v in row] for row in reader]
        data = np.asarray(rows)
        runs.append(ExperimentData(experiment, data[:, 0], data[:, 1:]))
    noise = NoiseSpec(manifest["noise_std_dev"], manifest["seed"])
    return Dataset(manifest["system"], species, tuple(runs), noise, manifest["seed"])
