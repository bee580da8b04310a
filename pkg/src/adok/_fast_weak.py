"""JIT-compiled weak-form objective for hot fitting loops.

The dynamic objective integrates a candidate rate law from every
experiment's first measurement and accumulates the squared residuals.  For
repeated fits of the same structure (parameter estimation, criterion
studies) the Python-level stepper dominates runtime, so this module
generates the whole objective -- rate law inlined into a Dormand-Prince
integrator -- as one numba-compiled function per template structure.

The algorithm mirrors :func:`adok.kinetics.integrate` step for step (same
tableau, error norm, step-factor clamps and failure rules); a unit test pins
the two implementations against each other.  Everything here is an internal
accelerator: callers fall back to the numpy path when numba is missing or
compilation fails.
"""

from __future__ import annotations

import logging
from typing import Callable

from . import expressions as ex

log = logging.getLogger(__name__)

try:  # pragma: no cover - exercised implicitly by the fallback test
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_cache: dict[tuple[str, int], Callable | None] = {}


def _scalar_rate_source(template: ex.ParamTemplate, n_species: int) -> str:
    """Rate-law expression over scalars c0..c{S-1} and theta[]."""

    def walk(node: ex.Expr) -> str:
        if isinstance(node, ex.Const):
            return repr(node.value)
        if isinstance(node, ex.Param):
            return f"theta[{node.index}]"
        if isinstance(node, ex.Var):
            return f"c{node.index}"
        if isinstance(node, ex.Unary):
            return f"np.exp({walk(node.child)})"
        op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[node.op]
        return f"({walk(node.left)}{op}{walk(node.right)})"

    return walk(template.skeleton)


_OBJECTIVE_TEMPLATE = '''
import numpy as np
import numba

@numba.njit(cache=False, fastmath=False, error_model="numpy")
def _rates(theta, c, out):
    for _r in range(c.shape[0]):
{unpack}
        out[_r] = {rate}


@numba.njit(cache=False, fastmath=False, error_model="numpy")
def objective(theta, c0, t_out, observed, nu, rtol, atol, max_steps, max_state):
    n_runs, n_species = c0.shape
    n_out = t_out.shape[0]
    y = c0.copy()
    t = t_out[0]
    t_end = t_out[-1]
    span = t_end - t
    min_step = 1e-14 * span

    k = np.empty((7, n_runs, n_species))
    y_stage = np.empty((n_runs, n_species))
    y_new = np.empty((n_runs, n_species))
    rate = np.empty(n_runs)

    total = 0.0
    for s in range(n_species):
        for r in range(n_runs):
            d = y[r, s] - observed[r, 0, s]
            total += d * d
    next_out = 1

    _rates(theta, y, rate)
    for r in range(n_runs):
        for s in range(n_species):
            k[0, r, s] = rate[r] * nu[s]
            if not np.isfinite(k[0, r, s]):
                return np.inf

    d0 = 0.0
    d1 = 0.0
    count = 0
    for r in range(n_runs):
        for s in range(n_species):
            scale = atol + rtol * abs(y[r, s])
            d0 += (y[r, s] / scale) ** 2
            d1 += (k[0, r, s] / scale) ** 2
            count += 1
    d0 = np.sqrt(d0 / count)
    d1 = np.sqrt(d1 / count)
    if d0 > 1e-5 and d1 > 1e-5:
        h = 0.01 * d0 / d1
    else:
        h = 1e-6 * span
    if h > span / 10:
        h = span / 10

    c = np.array([0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0])
    a = np.zeros((7, 6))
    a[1, 0] = 1.0 / 5.0
    a[2, 0] = 3.0 / 40.0
    a[2, 1] = 9.0 / 40.0
    a[3, 0] = 44.0 / 45.0
    a[3, 1] = -56.0 / 15.0
    a[3, 2] = 32.0 / 9.0
    a[4, 0] = 19372.0 / 6561.0
    a[4, 1] = -25360.0 / 2187.0
    a[4, 2] = 64448.0 / 6561.0
    a[4, 3] = -212.0 / 729.0
    a[5, 0] = 9017.0 / 3168.0
    a[5, 1] = -355.0 / 33.0
    a[5, 2] = 46732.0 / 5247.0
    a[5, 3] = 49.0 / 176.0
    a[5, 4] = -5103.0 / 18656.0
    a[6, 0] = 35.0 / 384.0
    a[6, 1] = 0.0
    a[6, 2] = 500.0 / 1113.0
    a[6, 3] = 125.0 / 192.0
    a[6, 4] = -2187.0 / 6784.0
    a[6, 5] = 11.0 / 84.0
    b5 = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0,
                   -2187.0 / 6784.0, 11.0 / 84.0, 0.0])
    e = np.array([71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
                  -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0])

    for _step in range(max_steps):
        if next_out >= n_out:
            return total
        if h > t_end - t:
            h = t_end - t
        hit_output = t + h >= t_out[next_out] - 1e-14 * span
        if hit_output:
            h = t_out[next_out] - t
        if h <= min_step:
            return np.inf

        ok = True
        for stage in range(1, 7):
            for r in range(n_runs):
                for s in range(n_species):
                    acc = 0.0
                    for j in range(stage):
                        acc += a[stage, j] * k[j, r, s]
                    y_stage[r, s] = y[r, s] + h * acc
            _rates(theta, y_stage, rate)
            for r in range(n_runs):
                for s in range(n_species):
                    k[stage, r, s] = rate[r] * nu[s]
                    if not np.isfinite(k[stage, r, s]):
                        ok = False
            if not ok:
                break
        err = 0.0
        if ok:
            for r in range(n_runs):
                for s in range(n_species):
                    acc = 0.0
                    err_acc = 0.0
                    for j in range(7):
                        acc += b5[j] * k[j, r, s]
                        err_acc += e[j] * k[j, r, s]
                    y_new[r, s] = y[r, s] + h * acc
                    mag = abs(y[r, s])
                    if abs(y_new[r, s]) > mag:
                        mag = abs(y_new[r, s])
                    scale = atol + rtol * mag
                    err += (h * err_acc / scale) ** 2
            err = np.sqrt(err / (n_runs * n_species))
            if not np.isfinite(err):
                ok = False
            else:
                for r in range(n_runs):
                    for s in range(n_species):
                        if not np.isfinite(y_new[r, s]):
                            ok = False
        if not ok:
            h *= 0.25
            continue

        if err <= 1.0:
            if hit_output:
                t = t_out[next_out]
            else:
                t = t + h
            for r in range(n_runs):
                for s in range(n_species):
                    y[r, s] = y_new[r, s]
                    k[0, r, s] = k[6, r, s]
            bound_hit = False
            for r in range(n_runs):
                for s in range(n_species):
                    if abs(y[r, s]) > max_state:
                        bound_hit = True
            if bound_hit:
                return np.inf
            if hit_output:
                for r in range(n_runs):
                    for s in range(n_species):
                        d = y[r, s] - observed[r, next_out, s]
                        total += d * d
                next_out += 1
            if err == 0.0:
                factor = 5.0
            else:
                factor = 0.9 * err ** -0.2
                if factor > 5.0:
                    factor = 5.0
                if factor < 0.2:
                    factor = 0.2
            h *= factor
        else:
            factor = 0.9 * err ** -0.2
            if factor < 0.2:
                factor = 0.2
            h *= factor
    if next_out >= n_out:
        return total
    return np.inf
'''


def compiled_weak_objective(template: ex.ParamTemplate, n_species: int):
    """Numba objective for this structure, or None when unavailable.

    Returned callable signature:
    ``f(theta, c0, t_out, observed, nu, rtol, atol, max_steps, max_state)``
    with ``c0 (R,S)``, ``observed (R,T,S)`` float64 arrays.
    """
    if not HAVE_NUMBA:
        return None
    key = (ex.format_expr(template.skeleton, tuple(f"c{i}" for i in range(n_species))), n_species)
    if key in _cache:
        return _cache[key]
    unpack = "\n".join(
        f"        c{j} = c[_r, {j}]" for j in range(n_species)
    )
    rate = _scalar_rate_source(template, n_species)
    source = _OBJECTIVE_TEMPLATE.format(unpack=unpack, rate=rate)
    namespace: dict = {}
    try:
        exec(compile(source, "<weak-objective>", "exec"), namespace)  # noqa: S102
        fn = namespace["objective"]
    except Exception as err:  # pragma: no cover - numba edge cases
        log.warning("weak-objective compilation failed (%s); using numpy path", err)
        fn = None
    _cache[key] = fn
    return fn
