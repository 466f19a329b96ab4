"""Bounded-memory BFGS pair history and its compact model matrix.

With l stored pairs (S = [s_1..s_l], Y = [y_1..y_l]) and a diagonal seed
gamma*I, the BFGS model admits the low-rank form

    B = gamma*I + Psi M Psi^T,   Psi = [gamma*S  Y],

where M is the inverse of the small symmetric block matrix ``Minv`` built
from the Gram blocks of the history. Products with B therefore cost one
2l x 2l solve plus two tall-skinny multiplies; M itself is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CURVATURE_EPS",
    "GAMMA_MIN",
    "GAMMA_MAX",
    "DEFAULT_MEMORY",
    "PairBuffer",
    "CompactFactors",
    "gamma_heuristic",
    "materialize",
    "b_times",
]

# Relative curvature threshold below which a pair is discarded.
CURVATURE_EPS = 1e-8
# Clamp range for the diagonal seed scale.
GAMMA_MIN = 1e-8
GAMMA_MAX = 1e8
DEFAULT_MEMORY = 5


def gamma_heuristic(s, y) -> float:
    """Seed scale y'y / s'y (a Rayleigh quotient), clamped to [1e-8, 1e8].

    Callers must ensure s'y > 0; the pair filter in :meth:`PairBuffer.update`
    guarantees this on every stored pair.
    """
    sy = float(np.dot(s, y))
    yy = float(np.dot(y, y))
    return min(max(yy / sy, GAMMA_MIN), GAMMA_MAX)


class PairBuffer:
    """FIFO history of at most ``memory`` update pairs with cached Gram blocks.

    ``gamma`` is the current seed scale; it is refreshed by the heuristic on
    every accepted update. ``sts`` and ``sty`` cache S'S and S'Y so the small
    middle matrix can be assembled without touching the long vectors again.
    """

    def __init__(self, n: int, memory: int = DEFAULT_MEMORY, gamma: float = 1.0):
        if n <= 0:
            raise ValueError("n must be positive")
        if memory <= 0:
            raise ValueError("memory must be positive")
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        self.n = int(n)
        self.memory = int(memory)
        self.gamma = float(gamma)
        self._s: list[np.ndarray] = []
        self._y: list[np.ndarray] = []
        self.sts = np.zeros((0, 0))
        self.sty = np.zeros((0, 0))

    def __len__(self) -> int:
        return len(self._s)

    def s_matrix(self) -> np.ndarray:
        if not self._s:
            return np.zeros((self.n, 0))
        return np.column_stack(self._s)

    def y_matrix(self) -> np.ndarray:
        if not self._y:
            return np.zeros((self.n, 0))
        return np.column_stack(self._y)

    def psi(self) -> np.ndarray:
        """Low-rank factor [gamma*S  Y], shape (n, 2l)."""
        return np.hstack([self.gamma * self.s_matrix(), self.y_matrix()])

    def update(self, s, y) -> bool:
        """Offer a pair; store it iff s'y > eps*||s||*||y||. Returns acceptance.

        On acceptance the oldest pair is evicted when the buffer is full and
        gamma is refreshed from the new pair.
        """
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        if s.shape != (self.n,) or y.shape != (self.n,):
            raise ValueError(f"pair vectors must have shape ({self.n},)")
        sy = float(np.dot(s, y))
        if sy <= CURVATURE_EPS * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            return False
        self._s.append(s.copy())
        self._y.append(y.copy())
        if len(self._s) > self.memory:
            self._s.pop(0)
            self._y.pop(0)
        self.gamma = gamma_heuristic(s, y)
        self._rebuild_gram()
        return True

    def drop_oldest(self) -> None:
        """Discard the oldest stored pair (used on rank-deficient histories)."""
        if not self._s:
            raise ValueError("buffer is empty")
        self._s.pop(0)
        self._y.pop(0)
        self._rebuild_gram()

    def _rebuild_gram(self) -> None:
        S = self.s_matrix()
        Y = self.y_matrix()
        self.sts = S.T @ S
        self.sty = S.T @ Y


@dataclass(frozen=True)
class CompactFactors:
    """Explicit pieces of B = gamma*I + Psi inv(Minv) Psi^T."""

    psi: np.ndarray   # (n, 2l)
    minv: np.ndarray  # (2l, 2l), symmetric; the INVERSE of the middle matrix
    gamma: float


def materialize(buf: PairBuffer) -> CompactFactors:
    """Assemble Psi and Minv from the cached Gram blocks.

    Raises ValueError on an empty buffer: there is no low-rank part and
    callers should use B = gamma*I directly.
    """
    if len(buf) == 0:
        raise ValueError("empty pair buffer: B is gamma*I, no factors to build")
    lower = np.tril(buf.sty, k=-1)
    diag = np.diag(np.diag(buf.sty))
    minv = -np.block([[buf.gamma * buf.sts, lower], [lower.T, -diag]])
    return CompactFactors(psi=buf.psi(), minv=minv, gamma=buf.gamma)


def b_times(buf: PairBuffer, v) -> np.ndarray:
    """Model product B @ v through one small solve against Minv."""
    v = np.asarray(v, dtype=float)
    if v.shape != (buf.n,):
        raise ValueError(f"v must have shape ({buf.n},)")
    if len(buf) == 0:
        return buf.gamma * v
    fac = materialize(buf)
    w = np.linalg.solve(fac.minv, fac.psi.T @ v)
    return buf.gamma * v + fac.psi @ w
