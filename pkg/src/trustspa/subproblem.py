"""Exact two-norm trust-region steps for the compact quasi-Newton model.

The model B = gamma*I + Psi M Psi^T has at most 2l eigenvalues different
from gamma, all carried by span(Psi). A thin QR of Psi plus a small
symmetric eigendecomposition exposes that spectrum exactly, reducing the
trust-region subproblem

    min_p  g'p + 0.5 p'Bp   s.t.  ||p|| <= delta

to a scalar secular equation in the boundary multiplier sigma. Newton's
method from sigma = 0 finds the root; the step for the shifted system
(B + sigma*I) p = -g is then recovered with a Sherman-Morrison-Woodbury
solve against the 2l x 2l core. The returned step is a global minimizer
of the subproblem, certified by the usual optimality conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .lbfgs import PairBuffer, b_times, materialize

__all__ = [
    "RANK_TOL",
    "NEWTON_MAX_ITERS",
    "SpectralFactors",
    "TRSolution",
    "factorize",
    "phi_secular",
    "solve_secular",
    "smw_step",
    "solve_subproblem",
    "certify_solution",
]

# Columns of Psi whose QR diagonal falls below RANK_TOL times the largest
# are treated as numerically dependent.
RANK_TOL = 1e-10
NEWTON_MAX_ITERS = 50


@dataclass(frozen=True)
class SpectralFactors:
    """Eigenstructure of B split over span(Psi) and its orthogonal complement.

    ``subspace_eigvals`` (ascending) are the eigenvalues of B restricted to
    span(Psi); every remaining eigenvalue equals ``gamma``. ``g_parallel``
    holds the gradient coordinates in the subspace eigenbasis and
    ``g_perp_norm`` the mass of the gradient outside the subspace.
    """

    r_factor: np.ndarray         # (2l, 2l) triangular QR factor of Psi
    eigvecs: np.ndarray          # (2l, 2l) eigenvectors of R M R'
    core_eigvals: np.ndarray     # (2l,) eigenvalues of R M R', ascending
    subspace_eigvals: np.ndarray  # core_eigvals + gamma
    gamma: float
    g_parallel: np.ndarray       # (2l,)
    g_perp_norm: float


@dataclass(frozen=True)
class TRSolution:
    """Trust-region step with its multiplier and model decrease."""

    step: np.ndarray
    sigma: float
    on_boundary: bool
    newton_iters: int
    pred: float  # model value g'p + 0.5 p'Bp at the step; negative for g != 0


def factorize(buf: PairBuffer, g) -> SpectralFactors:
    """Spectral split of the current model against a gradient.

    A numerically rank-deficient Psi is repaired by discarding the oldest
    pairs (mutating ``buf``) until its QR factor is safely full-rank; a
    buffer emptied this way yields factors for the pure gamma*I model.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (buf.n,):
        raise ValueError(f"g must have shape ({buf.n},)")
    r = np.zeros((0, 0))
    while len(buf) > 0:
        r = np.linalg.qr(buf.psi(), mode="r")
        # a wide R (more pairs than fit in n dimensions) is rank-deficient
        # by construction and never passes the diagonal test
        if r.shape[0] == r.shape[1]:
            d = np.abs(np.diag(r))
            if d.min() > RANK_TOL * d.max():
                break
        buf.drop_oldest()
    gnorm = float(np.linalg.norm(g))
    if len(buf) == 0:
        empty = np.zeros(0)
        return SpectralFactors(
            r_factor=np.zeros((0, 0)),
            eigvecs=np.zeros((0, 0)),
            core_eigvals=empty,
            subspace_eigvals=empty,
            gamma=buf.gamma,
            g_parallel=empty,
            g_perp_norm=gnorm,
        )
    fac = materialize(buf)
    core = r @ np.linalg.solve(fac.minv, r.T)
    core = 0.5 * (core + core.T)
    core_eigvals, eigvecs = np.linalg.eigh(core)
    subspace_eigvals = core_eigvals + buf.gamma
    if subspace_eigvals.min() <= 0:
        raise RuntimeError(
            "model matrix lost positive definiteness; curvature filtering "
            "should make this unreachable"
        )
    # Gradient coordinates in the subspace eigenbasis: V' R^{-T} Psi' g.
    w = solve_triangular(r.T, fac.psi.T @ g, lower=True)
    g_parallel = eigvecs.T @ w
    g_perp_norm = math.sqrt(max(0.0, gnorm**2 - float(g_parallel @ g_parallel)))
    return SpectralFactors(
        r_factor=r,
        eigvecs=eigvecs,
        core_eigvals=core_eigvals,
        subspace_eigvals=subspace_eigvals,
        gamma=buf.gamma,
        g_parallel=g_parallel,
        g_perp_norm=g_perp_norm,
    )


def _shifted_norm(sigma: float, fac: SpectralFactors) -> float:
    """||v(sigma)|| where v solves (B + sigma*I) v = -g, via the spectrum."""
    terms = fac.g_parallel / (fac.subspace_eigvals + sigma)
    sq = float(terms @ terms)
    if fac.g_perp_norm > 0:
        sq += (fac.g_perp_norm / (fac.gamma + sigma)) ** 2
    return math.sqrt(sq)


def phi_secular(sigma: float, fac: SpectralFactors, delta: float) -> float:
    """Secular function 1/||v(sigma)|| - 1/delta; its root is the multiplier.

    Increasing and concave in sigma on [0, inf). Returns +inf at the
    degenerate point ||v(sigma)|| = 0 (zero gradient), which callers
    screen out.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    nv = _shifted_norm(sigma, fac)
    if nv == 0.0:
        return math.inf
    return 1.0 / nv - 1.0 / delta


def _phi_secular_deriv(sigma: float, fac: SpectralFactors) -> float:
    terms = fac.g_parallel**2 / (fac.subspace_eigvals + sigma) ** 3
    num = float(np.sum(terms))
    if fac.g_perp_norm > 0:
        num += fac.g_perp_norm**2 / (fac.gamma + sigma) ** 3
    return num / _shifted_norm(sigma, fac) ** 3


def solve_secular(
    fac: SpectralFactors,
    delta: float,
    trace_iterates: list | None = None,
) -> tuple[float, int]:
    """Root of the secular function by Newton from sigma = 0.

    Requires phi_secular(0) < 0 (the unshifted step does not fit). The
    iterates are nondecreasing by construction; convergence is declared at
    |phi| <= 1e-10/delta. A bracketing bisection fallback guards the rare
    case where Newton stalls at float resolution short of the tolerance.
    Returns (sigma, newton_iterations).
    """
    value = phi_secular(0.0, fac, delta)
    if not value < 0:
        raise ValueError("solve_secular requires phi(0) < 0 (boundary case)")
    tol = 1e-10 / delta
    sigma = 0.0
    iters = 0
    while iters < NEWTON_MAX_ITERS:
        if abs(value) <= tol:
            break
        nxt = sigma - value / _phi_secular_deriv(sigma, fac)
        if trace_iterates is not None:
            trace_iterates.append(nxt)
        if not math.isfinite(nxt) or nxt <= sigma:
            break  # progress below float resolution
        sigma = nxt
        iters += 1
        value = phi_secular(sigma, fac, delta)
    if abs(_shifted_norm(sigma, fac) - delta) <= 1e-8 * delta:
        return sigma, iters
    # Fallback: grow a bracket geometrically, then bisect. Reached only when
    # Newton stalls in floats; kept deterministic and dependency-free.
    gnorm = math.sqrt(float(fac.g_parallel @ fac.g_parallel) + fac.g_perp_norm**2)
    lo = 0.0
    hi = max(gnorm / delta, np.finfo(float).tiny)
    growths = 0
    while phi_secular(hi, fac, delta) < 0:
        hi *= 2.0
        growths += 1
        if growths > 200:
            raise RuntimeError("secular bracket growth failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(_shifted_norm(mid, fac) - delta) <= 1e-8 * delta:
            return mid, iters
        if phi_secular(mid, fac, delta) < 0:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("secular bisection failed to reach tolerance")


def smw_step(buf: PairBuffer, g, tau_star: float) -> np.ndarray:
    """Solve ((gamma + sigma)*I + Psi M Psi')p = -g; tau_star = gamma + sigma.

    Uses the Woodbury identity so only the 2l x 2l system
    tau_star*Minv + Psi'Psi is ever factored. A couple of iterative
    refinement sweeps keep the stationarity residual at the 1e-8*||g||
    level even when the model is badly conditioned.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (buf.n,):
        raise ValueError(f"g must have shape ({buf.n},)")
    if not tau_star > 0:
        raise ValueError("tau_star must be positive")
    if len(buf) == 0:
        return -g / tau_star
    fac = materialize(buf)
    small = tau_star * fac.minv + fac.psi.T @ fac.psi

    def apply_inverse(rhs):
        w = np.linalg.solve(small, fac.psi.T @ rhs)
        return (rhs - fac.psi @ w) / tau_star

    def residual(p):
        # (B + sigma*I) p + g through the compact pieces
        w = np.linalg.solve(fac.minv, fac.psi.T @ p)
        return tau_star * p + fac.psi @ w + g

    p = -apply_inverse(g)
    gnorm = float(np.linalg.norm(g))
    for _ in range(3):
        res = residual(p)
        if float(np.linalg.norm(res)) <= 1e-10 * gnorm:
            break
        p = p - apply_inverse(res)
    return p


def solve_subproblem(buf: PairBuffer, g, delta: float) -> TRSolution:
    """Global minimizer of the model inside the two-norm ball of radius delta.

    Interior case: sigma = 0 when the unshifted solve already fits.
    Boundary case: sigma solves the secular equation, after which the
    shifted step lands on the boundary to relative accuracy 1e-8.
    May shrink ``buf`` (see :func:`factorize`).
    """
    g = np.asarray(g, dtype=float)
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    if not np.any(g):
        return TRSolution(np.zeros_like(g), 0.0, False, 0, 0.0)
    fac = factorize(buf, g)
    if phi_secular(0.0, fac, delta) >= 0:
        sigma, iters = 0.0, 0
    else:
        sigma, iters = solve_secular(fac, delta)
    p = smw_step(buf, g, fac.gamma + sigma)
    pred = float(g @ p + 0.5 * float(p @ b_times(buf, p)))
    return TRSolution(p, float(sigma), sigma > 0.0, iters, pred)


def certify_solution(buf: PairBuffer, g, delta: float, sol: TRSolution) -> None:
    """Raise RuntimeError unless ``sol`` passes the global-optimality certificate.

    Conditions: feasibility ||p|| <= delta*(1 + 1e-8 + 32*eps*kappa);
    sigma >= 0; complementarity sigma*(delta - ||p||) <=
    1e-6*delta*max(1, sigma); stationarity ||(B + sigma*I)p + g|| <=
    (1e-8 + 32*eps*kappa)*||g||, where kappa is the condition number of
    B + sigma*I. The kappa term is the precision floor of evaluating the
    residual (or recovering the step) in doubles: on saturated iterates
    kappa reaches ~1e10 and no correct step could pass a bare 1e-8 gate,
    while for well-conditioned models the term is negligible and 1e-8
    binds. May prune rank-deficient pairs from ``buf`` exactly like
    :func:`factorize`.
    """
    g = np.asarray(g, dtype=float)
    pnorm = float(np.linalg.norm(sol.step))
    gnorm = float(np.linalg.norm(g))
    resid = float(np.linalg.norm(b_times(buf, sol.step) + sol.sigma * sol.step + g))
    fac = factorize(buf, g)
    if fac.subspace_eigvals.size:
        lam_lo = min(float(fac.subspace_eigvals[0]), fac.gamma)
        lam_hi = max(float(fac.subspace_eigvals[-1]), fac.gamma)
    else:
        lam_lo = lam_hi = fac.gamma
    kappa = (lam_hi + sol.sigma) / (lam_lo + sol.sigma)
    floor = 32.0 * np.finfo(float).eps * kappa
    tol_stationarity = (1e-8 + floor) * gnorm
    checks = {
        # the same precision floor applies to the recovered step's norm
        "feasibility": pnorm <= delta * (1.0 + 1e-8 + floor),
        "sign": sol.sigma >= 0.0,
        "complementarity": sol.sigma * (delta - pnorm)
        <= 1e-6 * delta * max(1.0, sol.sigma),
        "stationarity": resid <= tol_stationarity if gnorm > 0 else resid == 0.0,
    }
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        raise RuntimeError(
            "trust-region optimality certificate failed: "
            f"{', '.join(failed)} (||p||={pnorm:.3e}, delta={delta:.3e}, "
            f"sigma={sol.sigma:.3e}, residual={resid:.3e}, kappa={kappa:.3e})"
        )
