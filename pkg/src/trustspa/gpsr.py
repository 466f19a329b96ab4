"""Monotone Barzilai-Borwein gradient projection baseline (GPSR-BB).

Works on the nonnegative split formulation of the l2-l1 problem,

    min_{z = [u; v] >= 0}  F(z) = 0.5*||A(u - v) - y||^2 + tau*1'(u + v),

taking projected BB steps z+ = max(0, z - alpha*grad F) with a monotone
backtracking line search along the projection arc. The residual r and the
products A d are carried incrementally, so each iteration costs one
forward and one adjoint product.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .objective import SparseProblem

__all__ = [
    "ALPHA_MIN",
    "ALPHA_MAX",
    "BACKTRACK_MU",
    "GpsrRecord",
    "GpsrResult",
    "split_objective",
    "split_gradient",
    "gpsr_bb_solve",
]

# Step-length clamps and sufficient-decrease constant, following the usual
# GPSR reference conventions.
ALPHA_MIN = 1e-30
ALPHA_MAX = 1e30
BACKTRACK_MU = 1e-4

CONVERGED_OBJECTIVE = "converged-objective"
FIXED_POINT = "fixed-point"
MAX_ITERS = "max-iters"
ABORTED = "aborted-nonfinite"
STALLED = "stalled"


@dataclass(frozen=True)
class GpsrRecord:
    k: int
    obj: float
    fixed_point_residual: float  # ||z - max(0, z - grad)||
    alpha: float
    backtracks: int


@dataclass(frozen=True)
class GpsrResult:
    f_hat: np.ndarray
    z: np.ndarray
    obj: float
    trace: list[GpsrRecord]
    status: str

    @property
    def iterations(self) -> int:
        return len(self.trace)


def _split(z, n):
    return z[:n], z[n:]


def split_objective(prob: SparseProblem, z) -> float:
    """F(z) on the split variables; z = [u; v] must be nonnegative."""
    z = np.asarray(z, dtype=float)
    u, v = _split(z, prob.n_signal)
    r = prob.apply(u - v) - prob.y
    return 0.5 * float(r @ r) + prob.tau * float(np.sum(z))


def split_gradient(prob: SparseProblem, z) -> np.ndarray:
    """grad F(z) = [A'r + tau; -A'r + tau] with r the current residual."""
    z = np.asarray(z, dtype=float)
    u, v = _split(z, prob.n_signal)
    t = prob.apply_t(prob.apply(u - v) - prob.y)
    return np.concatenate([t + prob.tau, prob.tau - t])


def gpsr_bb_solve(
    prob: SparseProblem,
    tol: float = 1e-8,
    max_iters: int = 10000,
) -> GpsrResult:
    """Minimize F from z = 0; stops on relative objective change <= tol.

    Also stops at an exact fixed point of the projection (in particular
    immediately when tau >= ||A'y||_inf, where z = 0 is optimal).
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    n = prob.n_signal
    z = np.zeros(2 * n)
    r = -prob.y.copy()
    at_r = prob.apply_t(r)
    grad = np.concatenate([at_r + prob.tau, prob.tau - at_r])
    value = 0.5 * float(r @ r)
    aty_inf = float(np.max(np.abs(at_r))) if at_r.size else 0.0
    alpha = 1.0 if aty_inf == 0 else min(max(1.0 / aty_inf, ALPHA_MIN), ALPHA_MAX)

    trace: list[GpsrRecord] = []
    status = MAX_ITERS
    for k in range(max_iters):
        z_proj = np.maximum(0.0, z - alpha * grad)
        d = z_proj - z
        if not np.any(d):
            trace.append(GpsrRecord(k, value, 0.0, alpha, 0))
            status = FIXED_POINT
            break
        ad = prob.apply(d[:n] - d[n:])
        gd = float(grad @ d)  # <= 0 along the projection arc
        r_dot_r = float(r @ r)
        r_dot_ad = float(r @ ad)
        ad_dot_ad = float(ad @ ad)
        pen = prob.tau * float(np.sum(z))
        pen_d = prob.tau * float(np.sum(d))
        lam = 1.0
        backtracks = 0
        while True:
            trial = (
                0.5 * (r_dot_r + 2.0 * lam * r_dot_ad + lam * lam * ad_dot_ad)
                + pen + lam * pen_d
            )
            if trial <= value + BACKTRACK_MU * lam * gd:
                break
            lam *= 0.5
            backtracks += 1
            if lam < 1e-20:
                break
        if lam < 1e-20:
            trace.append(GpsrRecord(k, value, float(np.linalg.norm(d)), alpha, backtracks))
            status = STALLED
            break
        z_new = np.maximum(0.0, z + lam * d)
        r_new = r + lam * ad
        at_r = prob.apply_t(r_new)
        grad_new = np.concatenate([at_r + prob.tau, prob.tau - at_r])
        new_value = (
            0.5 * (r_dot_r + 2.0 * lam * r_dot_ad + lam * lam * ad_dot_ad)
            + pen + lam * pen_d
        )
        if not (np.isfinite(new_value) and np.all(np.isfinite(grad_new))):
            trace.append(GpsrRecord(k, value, float("nan"), alpha, backtracks))
            status = ABORTED
            break
        dz = z_new - z
        dg = grad_new - grad
        denom = float(dz @ dg)
        if denom > 0:
            alpha = min(max(float(dz @ dz) / denom, ALPHA_MIN), ALPHA_MAX)
        else:
            alpha = ALPHA_MAX
        fp_res = float(np.linalg.norm(z_new - np.maximum(0.0, z_new - grad_new)))
        trace.append(GpsrRecord(k, new_value, fp_res, alpha, backtracks))
        rel = abs(new_value - value) / max(abs(value), np.finfo(float).tiny)
        z, r, grad, value = z_new, r_new, grad_new, new_value
        if rel <= tol:
            status = CONVERGED_OBJECTIVE
            break

    u, v = _split(z, n)
    return GpsrResult(f_hat=u - v, z=z, obj=value, trace=trace, status=status)
