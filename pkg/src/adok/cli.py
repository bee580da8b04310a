"""Command-line front end.

Three subcommands: ``simulate`` writes in-silico datasets, ``discover`` runs
one of the two discovery pipelines (optionally in a closed experiment-design
loop against a built-in simulator), and ``study`` reproduces the
information-criterion robustness sweeps.  Every run is reproducible from its
seed; reports embed the fully resolved configuration.

Exit codes: 0 success, 2 usage or validation error, 3 missing input,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from . import design
from . import fitting as fi
from . import gp
from . import kinetics as kin
from . import pipeline as pl
from . import studies
from .criteria import write_criteria_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_NUMERICAL = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def load_schema() -> dict:
    with resources.files("adok.schemas").joinpath("run_config.schema.json").open() as fh:
        return json.load(fh)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    file = Path(path)
    if not file.exists():
        raise CliError(f"config file not found: {path}", EXIT_MISSING_INPUT)
    with open(file) as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as err:
            raise CliError(f"config is not valid JSON: {err}", EXIT_USAGE) from err
    try:
        jsonschema.validate(config, load_schema())
    except jsonschema.ValidationError as err:
        raise CliError(f"config validation failed: {err.message}", EXIT_USAGE) from err
    return config


def resolve_outdir(args_out: str | None, config: dict) -> Path:
    out = args_out or config.get("out") or os.environ.get("ADOK_OUT_DIR") or "adok-out"
    return Path(out)


def _merge_gp(defaults: gp.GpConfig, overrides: dict | None, seed: int) -> gp.GpConfig:
    params = dataclasses.asdict(defaults)
    params.update(overrides or {})
    params["seed"] = seed
    return gp.GpConfig(**params)


def _merge_budget(overrides: dict | None, seed: int) -> fi.FitBudget:
    params = dataclasses.asdict(fi.FitBudget())
    params.update(overrides or {})
    params["seed"] = seed
    return fi.FitBudget(**params)


def _resolved(config: dict, **extra) -> dict:
    record = dict(config)
    record.update(extra)
    record["version"] = __version__
    return record


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    system_name = args.system or config.get("system")
    if system_name is None:
        raise CliError("simulate requires --system", EXIT_USAGE)
    try:
        system, experiments, noise = kin.make_case_study(system_name)
    except ValueError as err:
        raise CliError(str(err), EXIT_USAGE) from err
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    sigma = args.sigma if args.sigma is not None else config.get("sigma")
    if sigma is not None:
        noise = kin.NoiseSpec(sigma, seed)
    outdir = resolve_outdir(args.out, config)
    try:
        dataset = kin.generate_dataset(system, experiments, noise, seed=seed)
    except kin.IntegrationFailure as err:
        raise CliError(f"simulation failed: {err}", EXIT_NUMERICAL) from err
    paths = kin.write_dataset(dataset, outdir)
    print(f"wrote {len(paths)} files to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# discover


def _discovery_config(args, config: dict, seed: int, artifacts_dir=None) -> pl.DiscoveryConfig:
    return pl.DiscoveryConfig(
        profile_gp=_merge_gp(gp.profile_gp_config(), config.get("profile_gp"), seed),
        rate_gp=_merge_gp(gp.strong_gp_config(), config.get("rate_gp"), seed),
        weak_gp=_merge_gp(gp.weak_gp_config(), config.get("weak_gp"), seed),
        fit_budget=_merge_budget(config.get("fit_budget"), seed),
        criterion=config.get("criterion", "aic"),
        rate_reference=config.get("rate_reference"),
        state_source=config.get("state_source", "profile"),
        seed=seed,
        threads=args.threads or config.get("threads", 1),
        artifacts_dir=str(artifacts_dir) if artifacts_dir is not None else None,
    )


def _design_space(config: dict, dataset: kin.Dataset) -> design.DesignSpace:
    spec = config.get("design") or {}
    if "lower" in spec and "upper" in spec:
        return design.DesignSpace(
            tuple(spec["lower"]),
            tuple(spec["upper"]),
            tuple(spec.get("window", (0.0, 10.0))),
            spec.get("quadrature_points", 101),
        )
    base = design.DesignSpace.around_experiments(
        [run.experiment for run in dataset.experiments]
    )
    if "quadrature_points" in spec or "window" in spec:
        base = design.DesignSpace(
            base.lower,
            base.upper,
            tuple(spec.get("window", base.window)),
            spec.get("quadrature_points", base.quadrature_points),
        )
    return base


def cmd_discover(args) -> int:
    config = load_config(args.config)
    method = args.method or config.get("method")
    if method not in pl.METHODS:
        raise CliError(f"method must be one of {pl.METHODS}", EXIT_USAGE)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    system_name = args.system or config.get("system")
    data_dir = args.data or config.get("data")

    system = None
    if system_name is not None:
        system, experiments, noise = kin.make_case_study(system_name)
    if data_dir is not None:
        try:
            dataset = kin.read_dataset(data_dir)
        except FileNotFoundError as err:
            raise CliError(str(err), EXIT_MISSING_INPUT) from err
        if system is not None and dataset.species != system.species:
            raise CliError(
                "loaded dataset species do not match the chosen system", EXIT_USAGE
            )
    elif system is not None:
        sigma = args.sigma if args.sigma is not None else config.get("sigma")
        if sigma is not None:
            noise = kin.NoiseSpec(sigma, seed)
        dataset = kin.generate_dataset(system, experiments, noise, seed=seed)
    else:
        raise CliError(
            "discover needs --data or --system (in-loop simulator)", EXIT_MISSING_INPUT
        )

    if system is None:
        # Dataset-only mode: the manifest's system name provides the
        # stoichiometry, but without a simulator only one iteration runs.
        if dataset.system not in kin.CASE_STUDIES:
            raise CliError(
                f"dataset system {dataset.system!r} is not a built-in case study; "
                "pass --system to supply the stoichiometry",
                EXIT_MISSING_INPUT,
            )
        stoich = kin.make_case_study(dataset.system)[0].stoich
        max_iterations = 1
    else:
        stoich = system.stoich
        max_iterations = args.max_iterations or config.get("max_iterations", 3)

    accept = args.accept_rmse if args.accept_rmse is not None else config.get("accept_rmse")
    loop = pl.LoopConfig(max_iterations=max_iterations, accept_rmse=accept)
    outdir = resolve_outdir(args.out, config)
    outdir.mkdir(parents=True, exist_ok=True)
    discovery = _discovery_config(args, config, seed, artifacts_dir=outdir / "gp")

    try:
        if system is not None:
            result = pl.run_loop(
                system, dataset, method, loop, _design_space(config, dataset), discovery
            )
        else:
            if method == "adok-s":
                iteration = pl.adok_s_iteration(dataset, stoich, discovery)
            else:
                iteration = pl.adok_w_iteration(dataset, stoich, discovery)
            threshold = accept if accept is not None else 1.5 * dataset.noise.std_dev
            result = pl.LoopResult(
                method=method,
                iterations=(iteration,),
                proposals=(),
                dataset=dataset,
                accepted=iteration.diagnostics.rmse <= threshold,
            )
    except fi.UnfittableModelError as err:
        raise CliError(f"discovery failed: {err}", EXIT_NUMERICAL) from err

    resolved = _resolved(
        config,
        method=method,
        seed=seed,
        system=system_name,
        data=data_dir,
        max_iterations=max_iterations,
    )
    for i, iteration in enumerate(result.iterations, start=1):
        proposal = result.proposals[i - 1] if i - 1 < len(result.proposals) else None
        pl.write_iteration_report(
            outdir / f"iteration_{i:02d}.json", iteration, result.dataset, resolved, proposal
        )
        write_criteria_csv(
            outdir / f"iteration_{i:02d}_criteria.csv",
            iteration.finalists,
            [m.text(result.dataset.species) for m in iteration.finalists],
        )
    figure_dir = outdir / "figures"
    pl.write_figure_data(
        figure_dir, result.iterations[-1], result.dataset, stoich, system
    )
    final = result.iterations[-1].best
    summary = {
        "version": __version__,
        "method": method,
        "accepted": result.accepted,
        "iterations": len(result.iterations),
        "final_model": final.text(result.dataset.species),
        "final_rmse": result.iterations[-1].diagnostics.rmse,
        "proposals": [list(p.x0) for p in result.proposals],
        "config": resolved,
    }
    with open(outdir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"{method}: {summary['final_model']} (rmse {summary['final_rmse']:.4g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# study


def cmd_study(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    spec = config.get("study") or {}
    budget_overrides = {
        k: spec[k] for k in ("global_evals", "local_max_iters", "restarts") if k in spec
    }
    study_config = studies.StudyConfig(
        budget=_merge_budget({**dataclasses.asdict(studies.StudyConfig().budget), **budget_overrides}, seed),
        threads=args.threads or config.get("threads", 1),
    )
    outdir = resolve_outdir(args.out, config)
    try:
        if args.kind == "ic-noise":
            grid = spec.get("variances")
            result = studies.ic_noise_study(grid, seed=seed, config=study_config)
        else:
            sizes = spec.get("sizes")
            variance = spec.get("variance", 0.2)
            result = studies.ic_sample_study(sizes, variance, seed=seed, config=study_config)
    except ValueError as err:
        raise CliError(f"study validation failed: {err}", EXIT_USAGE) from err
    paths = studies.write_study_csv(outdir, result)
    print(f"wrote {len(paths)} study files to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adok",
        description="Discover symbolic kinetic rate models from concentration data.",
    )
    parser.add_argument("--version", action="version", version=f"adok {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("-o", "--out", default=None, help="output directory (or $ADOK_OUT_DIR)")
    common.add_argument("--threads", type=int, default=None, help="worker process cap")
    common.add_argument("-v", "--verbose", action="store_true")

    sim = sub.add_parser("simulate", parents=[common], help="write an in-silico dataset")
    sim.add_argument("--system", choices=sorted(kin.CASE_STUDIES))
    sim.add_argument("--sigma", type=float, default=None, help="noise std dev in M")
    sim.set_defaults(func=cmd_simulate)

    disc = sub.add_parser("discover", parents=[common], help="run a discovery pipeline")
    disc.add_argument("--method", choices=pl.METHODS)
    disc.add_argument("--system", choices=sorted(kin.CASE_STUDIES), help="in-loop simulator")
    disc.add_argument("--data", default=None, help="dataset directory (manifest.json + CSVs)")
    disc.add_argument("--sigma", type=float, default=None)
    disc.add_argument("--max-iterations", type=int, default=None)
    disc.add_argument("--accept-rmse", type=float, default=None)
    disc.set_defaults(func=cmd_discover)

    study = sub.add_parser("study", parents=[common], help="criterion robustness studies")
    study.add_argument("kind", choices=("ic-noise", "ic-samples"))
    study.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except kin.IntegrationFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
