"""Information criteria and model ranking.

All four criteria share the form ``2*NLL + penalty(d, n)`` with ``d`` the
parameter count and ``n`` the number of samples; lower is better.  The
corrected AIC is implemented through its penalty coefficient
``2n/(n-d-1)`` per parameter.  An alternative correction that effectively
counts one extra parameter (as when the noise variance is treated as fitted)
is available as ``aicc_form="plus_one"``; it is not the default because its
penalty differences disagree with the standard coefficient form.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "CRITERIA",
    "criterion",
    "penalty",
    "penalty_delta",
    "rank",
    "write_criteria_csv",
]

CRITERIA = ("aic", "aicc", "hqc", "bic")


def penalty(
    kind: str,
    d: int,
    n: int,
    *,
    hqc_c: float = 1.0,
    aicc_form: str = "standard",
) -> float:
    """Complexity penalty added to ``2*NLL`` for the given criterion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if d < 0:
        raise ValueError("d must be >= 0")
    if kind == "aic":
        return 2.0 * d
    if kind == "aicc":
        if aicc_form == "standard":
            if n <= d + 1:
                raise ValueError(f"AICc undefined for n={n} <= d+1={d + 1}")
            return 2.0 * n / (n - d - 1) * d
        if aicc_form == "plus_one":
            if n <= d + 2:
                raise ValueError(f"AICc (plus_one) undefined for n={n} <= d+2={d + 2}")
            return 2.0 * d + 2.0 * (d + 1) * (d + 2) / (n - d - 2)
        raise ValueError(f"unknown aicc_form {aicc_form!r}")
    if kind == "hqc":
        if hqc_c < 1.0:
            raise ValueError("HQC constant must be >= 1")
        if n < 3:
            raise ValueError("HQC needs n >= 3 for a positive penalty scale")
        return 2.0 * hqc_c * d * math.log(math.log(n))
    if kind == "bic":
        return d * math.log(n)
    raise ValueError(f"unknown criterion {kind!r}")


def criterion(
    kind: str,
    nll: float,
    d: int,
    n: int,
    *,
    hqc_c: float = 1.0,
    aicc_form: str = "standard",
) -> float:
    """Criterion value ``2*nll + penalty``; lower values are preferred."""
    return 2.0 * nll + penalty(kind, d, n, hqc_c=hqc_c, aicc_form=aicc_form)


def penalty_delta(
    kind: str,
    d1: int,
    d2: int,
    n: int,
    *,
    hqc_c: float = 1.0,
    aicc_form: str = "standard",
) -> float:
    """Penalty difference ``penalty(d1, n) - penalty(d2, n)``.

    For a fixed pair of parameter counts this is a data-independent constant,
    so criterion differences between two fitted models decompose into a
    likelihood part and this constant.
    """
    return penalty(kind, d1, n, hqc_c=hqc_c, aicc_form=aicc_form) - penalty(
        kind, d2, n, hqc_c=hqc_c, aicc_form=aicc_form
    )


def all_criteria(nll: float, d: int, n: int, *, hqc_c: float = 1.0) -> dict[str, float]:
    """Criterion values keyed by name; undefined ones (tiny n) are omitted."""
    values = {}
    for kind in CRITERIA:
        try:
            values[kind] = criterion(kind, nll, d, n, hqc_c=hqc_c)
        except ValueError:
            pass
    return values


def rank(models: Sequence, kind: str = "aic") -> list:
    """Sort fitted models ascending by the chosen criterion.

    Ties break toward fewer parameters, then lower complexity, then input
    order.  All models must have been scored against the same sample count.
    """
    models = list(models)
    if not models:
        raise ValueError("cannot rank an empty model list")
    n_values = {m.n for m in models}
    if len(n_values) > 1:
        raise ValueError(f"models scored with differing sample counts: {n_values}")

    def key(pair):
        index, model = pair
        return (model.criteria[kind], model.d, model.complexity, index)

    return [model for _, model in sorted(enumerate(models), key=key)]


def write_criteria_csv(path: str | Path, models: Iterable, expressions: Iterable[str]) -> None:
    """Dump a per-model criterion table (one row per fitted model)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "expression", "d", "nll", "aic", "aicc", "hqc", "bic"])
        for i, (model, text) in enumerate(zip(models, expressions)):
            writer.writerow(
                [
                    i,
                    text,
                    model.d,
                    format(model.nll, ".9g"),
                ]
                + [format(model.criteria[kind], ".9g") for kind in CRITERIA]
            )
