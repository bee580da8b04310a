"""Discriminatory experiment design between two candidate rate models.

The next experiment's initial condition is chosen to maximize the integral
over the batch window of the squared difference between the two models'
predicted concentration trajectories.  The search is a deterministic
multistart: Latin-hypercube starts polished by a compass (coordinate pattern)
search.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kinetics as kin

__all__ = ["DesignSpace", "DesignProposal", "discrepancy", "propose_experiment"]

log = logging.getLogger(__name__)

DEGENERATE_OBJECTIVE = 1e-12


@dataclass(frozen=True)
class DesignSpace:
    """Box of admissible initial concentrations plus the batch window."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    window: tuple[float, float] = (0.0, 10.0)
    quadrature_points: int = 101

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds must have equal length")
        if any(lo < 0 for lo in self.lower):
            raise ValueError("initial concentrations cannot be negative")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("each lower bound must be below its upper bound")
        if self.quadrature_points < 2:
            raise ValueError("need at least two quadrature points")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @staticmethod
    def around_experiments(
        experiments: Sequence[kin.Experiment],
        margin: float = 1.25,
        window: tuple[float, float] = (0.0, 10.0),
        quadrature_points: int = 101,
    ) -> "DesignSpace":
        """Per-species box [0, margin * max initial] over the given runs."""
        initials = np.array([e.initial for e in experiments], dtype=float)
        upper = margin * initials.max(axis=0)
        upper[upper <= 0] = margin  # species never dosed still get a range
        return DesignSpace(
            tuple(0.0 for _ in upper), tuple(upper), window, quadrature_points
        )


@dataclass(frozen=True)
class DesignProposal:
    x0: tuple[float, ...]
    objective: float
    degenerate: bool
    trace: tuple[dict, ...]


def _trajectory(expr, stoich, x0, grid):
    deriv = kin.rate_derivative(expr, stoich, len(x0))
    result = kin.integrate(
        deriv,
        x0,
        grid,
        rel_tol=1e-7,
        abs_tol=1e-9,
        max_steps=5000,
        max_abs_state=1e8,
    )
    return result


def discrepancy(
    model_a,
    model_b,
    stoich: Sequence[float],
    x0: Sequence[float],
    window: tuple[float, float] = (0.0, 10.0),
    quadrature_points: int = 101,
) -> float:
    """Integrated squared gap between the two models' predicted states.

    Both systems are integrated on a shared uniform grid; the per-time
    squared differences (summed over species) are combined by the trapezoid
    rule.  If a model fails partway its contribution beyond the failure time
    is zero, i.e. only the common valid prefix counts.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.size != len(stoich):
        raise ValueError("x0 dimension must match the stoichiometry length")
    grid = np.linspace(window[0], window[1], quadrature_points)
    expr_a = model_a.expression if hasattr(model_a, "expression") else model_a
    expr_b = model_b.expression if hasattr(model_b, "expression") else model_b
    with np.errstate(all="ignore"):
        traj_a = _trajectory(expr_a, stoich, x0, grid)
        traj_b = _trajectory(expr_b, stoich, x0, grid)
    n_valid = min(traj_a.n_valid, traj_b.n_valid)
    if not (traj_a.success and traj_b.success):
        log.debug(
            "trajectory failure during design at x0=%s (valid prefix %d points)",
            x0,
            n_valid,
        )
    if n_valid < 2:
        return 0.0
    gap = traj_a.states[:n_valid] - traj_b.states[:n_valid]
    squared = np.sum(gap * gap, axis=1)
    if not np.all(np.isfinite(squared)):
        return 0.0
    return float(np.trapezoid(squared, grid[:n_valid]))


def _latin_hypercube(
    rng: np.random.Generator, n: int, lower: np.ndarray, upper: np.ndarray
) -> np.ndarray:
    d = lower.size
    u = (rng.random((n, d)) + np.stack([rng.permutation(n) for _ in range(d)], axis=1)) / n
    return lower + u * (upper - lower)


def _compass_polish(objective, x0, lower, upper, max_rounds=40) -> tuple[np.ndarray, float]:
    x = x0.copy()
    value = objective(x)
    step = 0.25 * (upper - lower)
    tol = 1e-3 * np.max(upper - lower)
    for _ in range(max_rounds):
        improved = False
        for j in range(x.size):
            for sign in (1.0, -1.0):
                trial = x.copy()
                trial[j] = np.clip(trial[j] + sign * step[j], lower[j], upper[j])
                if np.array_equal(trial, x):
                    continue
                trial_value = objective(trial)
                if trial_value > value:
                    x, value = trial, trial_value
                    improved = True
        if not improved:
            step *= 0.5
            if np.max(step) < tol:
                break
    return x, value


def propose_experiment(
    model_a,
    model_b,
    stoich: Sequence[float],
    space: DesignSpace,
    n_starts: int = 32,
    seed: int = 0,
    extra_starts: Sequence[Sequence[float]] = (),
) -> DesignProposal:
    """Multistart maximization of the two-model discrepancy over the box.

    ``extra_starts`` (e.g. the dataset's existing initial conditions) are
    added to the Latin-hypercube starts, so the winner is guaranteed to score
    at least as high as every one of them.  Identical model responses yield a
    degenerate proposal flagged as such.
    """
    lower = np.asarray(space.lower)
    upper = np.asarray(space.upper)

    def objective(x0: np.ndarray) -> float:
        return discrepancy(
            model_a, model_b, stoich, x0, space.window, space.quadrature_points
        )

    rng = np.random.default_rng(seed)
    starts = list(_latin_hypercube(rng, n_starts, lower, upper))
    for point in extra_starts:
        starts.append(np.clip(np.asarray(point, dtype=float), lower, upper))

    best_x, best_value = None, -math.inf
    trace = []
    for start in starts:
        x, value = _compass_polish(objective, start, lower, upper)
        trace.append(
            {"start": [float(v) for v in start], "x0": [float(v) for v in x], "objective": value}
        )
        better = value > best_value or (
            value == best_value and best_x is not None and tuple(x) < tuple(best_x)
        )
        if better:
            best_x, best_value = x, value
    if best_x is None:
        raise RuntimeError("no feasible design point found")
    degenerate = best_value <= DEGENERATE_OBJECTIVE
    if degenerate:
        log.warning("model pair is indistinguishable over the design space")
    return DesignProposal(
        x0=tuple(float(v) for v in best_x),
        objective=float(best_value),
        degenerate=degenerate,
        trace=tuple(trace),
    )


def write_proposal(path: str | Path, proposal: DesignProposal) -> None:
    with open(path, "w") as fh:
        json.dump(
            {
                "x0": list(proposal.x0),
                "objective": proposal.objective,
                "degenerate": proposal.degenerate,
                "trace": list(proposal.trace),
            },
            fh,
            indent=2,
        )
        fh.write("\n")
