"""Automated discovery of kinetic rate models from concentration data.

The package couples a genetic-programming search over rate-law expression
trees with two-stage parameter estimation and information-criterion model
selection.  Two discovery pipelines are provided: ``adok-s`` regresses rate
estimates obtained by differentiating fitted concentration profiles, while
``adok-w`` scores candidate rate laws by integrating them against the
measured concentrations.  A Hunter-Reiner style experiment-design loop can
extend the dataset with maximally discriminating initial conditions.
"""

__version__ = "0.1.0"

from .criteria import criterion, penalty_delta, rank
from .design import DesignSpace, discrepancy, propose_experiment
from .expressions import (
    ExprGrammar,
    evaluate,
    complexity,
    differentiate,
    format_expr,
    parse_expr,
    profile_grammar,
    rate_grammar,
    simplify,
)
from .fitting import FitBudget, FittedModel, fit, fit_profile, fit_rate_strong, fit_rate_weak
from .gp import GpConfig, HallOfFame, evolve, finalists
from .kinetics import (
    Dataset,
    Experiment,
    NoiseSpec,
    ReactionSystem,
    generate_dataset,
    integrate,
    make_case_study,
)
from .pipeline import (
    DiscoveryConfig,
    LoopConfig,
    adok_s_iteration,
    adok_w_iteration,
    run_loop,
)
from .regressors import (
    SymbolicKineticsRegressor,
    SymbolicProfileRegressor,
    SymbolicRateRegressor,
)
from .studies import ic_noise_study, ic_sample_study

__all__ = [
    "__version__",
    "criterion",
    "penalty_delta",
    "rank",
    "DesignSpace",
    "discrepancy",
    "propose_experiment",
    "ExprGrammar",
    "evaluate",
    "complexity",
    "differentiate",
    "format_expr",
    "parse_expr",
    "profile_grammar",
    "rate_grammar",
    "simplify",
    "FitBudget",
    "FittedModel",
    "fit",
    "fit_profile",
    "fit_rate_strong",
    "fit_rate_weak",
    "GpConfig",
    "HallOfFame",
    "evolve",
    "finalists",
    "Dataset",
    "Experiment",
    "NoiseSpec",
    "ReactionSystem",
    "generate_dataset",
    "integrate",
    "make_case_study",
    "DiscoveryConfig",
    "LoopConfig",
    "adok_s_iteration",
    "adok_w_iteration",
    "run_loop",
    "SymbolicKineticsRegressor",
    "SymbolicProfileRegressor",
    "SymbolicRateRegressor",
    "ic_noise_study",
    "ic_sample_study",
]
