"""Sparse-recovery objective under a softplus change of variables.

The weighted l2-l1 recovery problem in a signal f,

    min_f  0.5 * ||A f - y||^2 + tau * ||f||_1,

is rewritten through the nonnegative split f = u - v, and the bound
constraints are absorbed by parameterizing u = softplus(u~) and
v = softplus(v~). The resulting function ``phi`` of the stacked point
x = [u~, v~] is smooth and unconstrained, so it can be minimized by any
smooth solver; ``to_signal`` maps a point back to the signal it encodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SparseProblem",
    "softplus",
    "sigmoid",
    "to_signal",
    "phi",
    "grad_phi",
    "phi_and_grad",
]


@dataclass(frozen=True)
class SparseProblem:
    """Dense least-squares data fit with an l1 sparsity weight.

    Parameters
    ----------
    A : ndarray, shape (m, n)
        Measurement matrix.
    y : ndarray, shape (m,)
        Observed measurements.
    tau : float
        Positive l1 weight.

    Solvers touch ``A`` only through :meth:`apply` and :meth:`apply_t`,
    so a subclass backed by an implicit operator can override those two
    methods without changing anything downstream.
    """

    A: np.ndarray
    y: np.ndarray
    tau: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if A.ndim != 2:
            raise ValueError("A must be a 2-d array")
        if y.ndim != 1 or y.size != A.shape[0]:
            raise ValueError(
                f"y must be a vector of length {A.shape[0]}, got shape {y.shape}"
            )
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
            raise ValueError("A and y must be finite")
        tau = float(self.tau)
        if not tau > 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "tau", tau)

    @property
    def n_meas(self) -> int:
        return self.A.shape[0]

    @property
    def n_signal(self) -> int:
        return self.A.shape[1]

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Forward product A @ f."""
        return self.A @ f

    def apply_t(self, r: np.ndarray) -> np.ndarray:
        """Adjoint product A.T @ r."""
        return self.A.T @ r


def softplus(t):
    """Stable elementwise log(1 + e^t).

    Evaluated as max(t, 0) + log1p(e^{-|t|}), which never overflows and
    keeps full precision in both tails (asymptotes t and 0).
    """
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid(t):
    """Stable elementwise logistic function 1 / (1 + e^{-t})."""
    t = np.asarray(t, dtype=float)
    # e^{-|t|} lies in (0, 1], so neither branch of the where can overflow.
    p = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + p), p / (1.0 + p))


def _split(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size % 2:
        raise ValueError("transformed point must be a 1-d vector of even length")
    half = x.size // 2
    return x[:half], x[half:]


def _check_point(prob, half):
    if half.size != prob.n_signal:
        raise ValueError(
            f"point has {2 * half.size} entries, problem expects {2 * prob.n_signal}"
        )


def to_signal(x) -> np.ndarray:
    """Signal f = softplus(u~) - softplus(v~) encoded by a stacked point."""
    ut, vt = _split(x)
    return softplus(ut) - softplus(vt)


def phi(prob: SparseProblem, x) -> float:
    """Objective value 0.5*||A(u-v) - y||^2 + tau*sum(u + v) at x = [u~, v~]."""
    ut, vt = _split(x)
    _check_point(prob, ut)
    u = softplus(ut)
    v = softplus(vt)
    r = prob.apply(u - v) - prob.y
    return 0.5 * float(r @ r) + prob.tau * float(np.sum(u) + np.sum(v))


def grad_phi(prob: SparseProblem, x) -> np.ndarray:
    """Gradient of :func:`phi`; chain rule contributes a sigmoid factor per block."""
    return phi_and_grad(prob, x)[1]


def phi_and_grad(prob: SparseProblem, x) -> tuple[float, np.ndarray]:
    """Objective and gradient together, sharing one forward/adjoint product pair."""
    ut, vt = _split(x)
    _check_point(prob, ut)
    u = softplus(ut)
    v = softplus(vt)
    r = prob.apply(u - v) - prob.y
    value = 0.5 * float(r @ r) + prob.tau * float(np.sum(u) + np.sum(v))
    t = prob.apply_t(r)
    g = np.concatenate([sigmoid(ut) * (t + prob.tau), sigmoid(vt) * (prob.tau - t)])
    return value, g
