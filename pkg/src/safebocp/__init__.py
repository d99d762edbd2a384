"""
Safe Bayesian optimization with online-conformal control of the constraint scaling.

The public surface re-exports the GP core, the SafeOpt acquisition machinery
and the controller; benchmarks and experiment drivers live in submodules.
"""

from .acquisition import (
    INFINITE,
    CandidateSet,
    CredibleInterval,
    SafeOptState,
    acquire,
    coverage_probability,
    credible_interval,
    expanders,
    final_decision,
    greedy_information_gain,
    information_beta,
    is_infinite,
    potential_optimizers,
    rkhs_beta_schedule,
    safe_set,
)
from .controller import (
    ControllerConfig,
    ControllerState,
    alpha_algo,
    error_rate_bound,
    error_signal,
    excess_rate_bound,
    next_beta,
    phi,
    slope_factor,
    step,
)
from .gp import RBF, GpModel, GpPrior, Linear, NumericalError, extend, gram, kernel_eval, posterior

__version__ = "0.1.0"

__all__ = [
    "INFINITE",
    "CandidateSet",
    "CredibleInterval",
    "SafeOptState",
    "acquire",
    "coverage_probability",
    "credible_interval",
    "expanders",
    "final_decision",
    "greedy_information_gain",
    "information_beta",
    "is_infinite",
    "potential_optimizers",
    "rkhs_beta_schedule",
    "safe_set",
    "ControllerConfig",
    "ControllerState",
    "alpha_algo",
    "error_rate_bound",
    "error_signal",
    "excess_rate_bound",
    "next_beta",
    "phi",
    "slope_factor",
    "step",
    "RBF",
    "GpModel",
    "GpPrior",
    "Linear",
    "NumericalError",
    "extend",
    "gram",
    "kernel_eval",
    "posterior",
]
