"""Tamed Euler schemes for jump-diffusion SDEs and a strong-convergence harness."""

from .analysis import (
    ConvergenceReport,
    ConvergenceRow,
    DegenerateDataError,
    ErrorSample,
    ReferenceDivergenceError,
    divergence_demo,
    fit_order,
    moment_track,
    strong_error,
    strong_errors,
)
from .noise import NoisePath, coarsen, compensated_increment, cumulative, sample_noise
from .problem import (
    AssumptionProbeReport,
    ContractError,
    JumpDiffusionProblem,
    cubic_problem,
    f_lambda,
    get_problem,
    linear_problem,
    probe_assumptions,
    zero_problem,
)
from .schemes import (
    DiscretePath,
    Scheme,
    SchemeError,
    interpolate,
    simulate,
    step,
    tamed_drift,
)

__version__ = "0.1.0"
