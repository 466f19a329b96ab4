"""Sparse signal recovery by a limited-memory trust-region method.

Minimizes 0.5*||A f - y||^2 + tau*||f||_1 through a smooth softplus
reformulation driven by an L-BFGS trust-region solver with exact
subproblem solutions, alongside a GPSR-BB projected-gradient baseline
and a seeded, byte-reproducible experiment harness.
"""

from .driver import IterateRecord, SolveResult, SolverConfig, solve
from .gpsr import GpsrResult, gpsr_bb_solve
from .harness import (
    ExperimentSpec,
    ExperimentSummary,
    TrialReport,
    run_experiment,
    tau_sweep,
)
from .objective import SparseProblem, phi, grad_phi, to_signal

__version__ = "0.1.0"

__all__ = [
    "SparseProblem",
    "SolverConfig",
    "SolveResult",
    "IterateRecord",
    "solve",
    "GpsrResult",
    "gpsr_bb_solve",
    "ExperimentSpec",
    "ExperimentSummary",
    "TrialReport",
    "run_experiment",
    "tau_sweep",
    "phi",
    "grad_phi",
    "to_signal",
    "__version__",
]
