"""Outer trust-region loop for the softplus-transformed sparse objective.

Each iteration solves the compact-model subproblem exactly, evaluates the
candidate, accepts it when the actual-over-predicted decrease ratio rho
clears ``tau1``, and manages the radius. Update pairs are offered to the
L-BFGS history on every iteration by default, including after rejected
steps: the quasi-Newton model is refreshed before the acceptance branch,
so curvature measured at the trial point is kept either way. Pairs from
rejected trial points can describe curvature far from the accepted path;
``update_on_reject=False`` restricts harvesting to accepted steps, which
on sparse recovery problems tends to lower the final objective and
tighten the recovered support.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .lbfgs import DEFAULT_MEMORY, PairBuffer
from .objective import SparseProblem, phi_and_grad, to_signal
from .subproblem import certify_solution, solve_subproblem

__all__ = [
    "SolverConfig",
    "IterateRecord",
    "SolveResult",
    "rho",
    "update_radius",
    "solve",
    "CONVERGED_GRADIENT",
    "CONVERGED_OBJECTIVE",
    "MAX_ITERS",
    "STALLED",
    "ABORTED",
]

CONVERGED_GRADIENT = "converged-gradient"
CONVERGED_OBJECTIVE = "converged-objective"
MAX_ITERS = "max-iters"
STALLED = "stalled"
ABORTED = "aborted-nonfinite"

# Radius floor below which the run is declared stalled.
DELTA_FLOOR = 1e-15


@dataclass
class SolverConfig:
    """Tuning knobs for :func:`solve`; defaults reproduce the reference setup."""

    memory: int = DEFAULT_MEMORY
    tau1: float = 0.1            # acceptance threshold on rho, in (0, 0.5)
    grad_tol: float = 1e-6       # scaled by max(1, ||g0||)
    rel_obj_tol: float = 1e-8    # relative objective change over accepted steps
    delta0: float | None = None  # None -> max(1, ||g0||)
    delta_max: float = 1e10
    shrink: float = 0.5
    expand: float = 2.0
    expand_rho: float = 0.75
    boundary_frac: float = 0.8   # expand only when the step fills this much radius
    max_iters: int = 10000
    update_on_reject: bool = True
    check_certificates: bool = False

    def __post_init__(self):
        if not 0 < self.tau1 < 0.5:
            raise ValueError("tau1 must lie in (0, 0.5)")
        if self.grad_tol < 0 or self.rel_obj_tol < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.delta0 is not None and not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not self.expand > 1:
            raise ValueError("expand must exceed 1")
        if not 0 < self.boundary_frac <= 1:
            raise ValueError("boundary_frac must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.delta_max > 0:
            raise ValueError("delta_max must be positive")
        if self.memory < 1:
            raise ValueError("memory must be positive")


@dataclass(frozen=True)
class IterateRecord:
    """One outer iteration: state at entry plus the step's outcome."""

    k: int
    phi: float          # objective at the iterate the step was taken from
    grad_norm: float
    delta: float        # radius used for the subproblem
    rho: float
    sigma: float
    step_norm: float
    accepted: bool
    pair_accepted: bool
    gamma: float
    pred: float
    matvecs: int        # cumulative forward/adjoint products so far
    time_s: float       # wall time since solve() entry; excluded from gated outputs


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray                # final transformed point
    f_hat: np.ndarray            # recovered signal to_signal(x)
    phi: float                   # final objective value
    trace: list[IterateRecord]
    status: str

    @property
    def iterations(self) -> int:
        return len(self.trace)


def rho(phi_old: float, phi_trial: float, pred: float) -> float:
    """Actual-over-predicted decrease ratio (phi_old - phi_trial) / (-pred)."""
    if not pred < 0:
        raise RuntimeError(f"predicted decrease must be negative, got {pred!r}")
    return (phi_old - phi_trial) / (-pred)


def update_radius(delta: float, rho_val: float, step_norm: float, cfg: SolverConfig) -> float:
    """Shrink on poor agreement, expand on strong agreement at the boundary."""
    if rho_val < cfg.tau1:
        return delta * cfg.shrink
    if rho_val >= cfg.expand_rho and step_norm >= cfg.boundary_frac * delta:
        return min(delta * cfg.expand, cfg.delta_max)
    return delta


def solve(prob: SparseProblem, cfg: SolverConfig | None = None, x0=None) -> SolveResult:
    """Minimize the transformed objective; returns iterates, trace and status.

    Starts from x0 = 0 (u = v = log 2, signal 0) unless given. Stops on the
    scaled gradient norm, on the relative objective change over accepted
    steps, on radius collapse (stalled), on non-finite trial values
    (aborted), or at max_iters.
    """
    if cfg is None:
        cfg = SolverConfig()
    n = 2 * prob.n_signal
    if x0 is None:
        x = np.zeros(n)
    else:
        x = np.asarray(x0, dtype=float).copy()
        if x.shape != (n,):
            raise ValueError(f"x0 must have shape ({n},)")
    t0 = time.perf_counter()
    value, g = phi_and_grad(prob, x)
    matvecs = 2
    if not (np.isfinite(value) and np.all(np.isfinite(g))):
        raise ValueError("objective is not finite at the starting point")
    gnorm0 = float(np.linalg.norm(g))
    grad_stop = cfg.grad_tol * max(1.0, gnorm0)
    delta = cfg.delta0 if cfg.delta0 is not None else max(1.0, gnorm0)
    buf = PairBuffer(n, memory=cfg.memory)
    trace: list[IterateRecord] = []
    status = MAX_ITERS

    for k in range(cfg.max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_stop:
            status = CONVERGED_GRADIENT
            break
        sol = solve_subproblem(buf, g, delta)
        if cfg.check_certificates:
            certify_solution(buf, g, delta, sol)
        trial = x + sol.step
        trial_value, trial_g = phi_and_grad(prob, trial)
        matvecs += 2
        step_norm = float(np.linalg.norm(sol.step))
        if not (np.isfinite(trial_value) and np.all(np.isfinite(trial_g))):
            trace.append(IterateRecord(
                k, float(value), gnorm, float(delta), float("nan"), sol.sigma,
                step_norm, False, False, buf.gamma, sol.pred, matvecs,
                time.perf_counter() - t0,
            ))
            status = ABORTED
            break
        rho_k = rho(value, trial_value, sol.pred)
        pair_accepted = False
        accepted = rho_k >= cfg.tau1
        if accepted or cfg.update_on_reject:
            pair_accepted = buf.update(sol.step, trial_g - g)
        rel_change = float("inf")
        old_value = value
        if accepted:
            rel_change = abs(trial_value - value) / max(abs(value), np.finfo(float).tiny)
            x, value, g = trial, trial_value, trial_g
        trace.append(IterateRecord(
            k, float(old_value), gnorm, float(delta), float(rho_k), sol.sigma,
            step_norm, accepted, pair_accepted, buf.gamma, sol.pred, matvecs,
            time.perf_counter() - t0,
        ))
        delta = update_radius(delta, rho_k, step_norm, cfg)
        if accepted and rel_change <= cfg.rel_obj_tol:
            status = CONVERGED_OBJECTIVE
            break
        if delta < DELTA_FLOOR:
            status = STALLED
            break

    return SolveResult(
        x=x,
        f_hat=to_signal(x),
        phi=float(value),
        trace=trace,
        status=status,
    )
