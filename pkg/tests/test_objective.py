"""Objective, transform, and gradient checks against independent references.

The long-double reimplementation below is the value oracle; the gradient
oracle is central finite differences.
"""

import numpy as np
import numpy.testing as npt
import pytest

from trustspa.objective import (
    SparseProblem,
    grad_phi,
    phi,
    phi_and_grad,
    sigmoid,
    softplus,
    to_signal,
)


def softplus_ld(t):
    # independent evaluation in extended precision; valid for |t| < 11000
    tl = np.asarray(t, dtype=np.longdouble)
    return np.where(tl > 0, tl + np.log1p(np.exp(-tl)), np.log1p(np.exp(tl)))


def sigmoid_ld(t):
    tl = np.asarray(t, dtype=np.longdouble)
    return 1.0 / (1.0 + np.exp(-tl))


def random_problem(rng, m=6, n=8):
    A = rng.standard_normal((m, n))
    y = rng.standard_normal(m)
    tau = float(rng.uniform(0.05, 0.5))
    return SparseProblem(A, y, tau)


# ---------------------------------------------------------------- softplus


def test_softplus_matches_extended_precision():
    t = np.linspace(-700.0, 700.0, 4001)
    expected = softplus_ld(t).astype(float)
    npt.assert_allclose(softplus(t), expected, rtol=1e-15, atol=1e-300)


def test_softplus_extremes_and_limits():
    assert softplus(0.0) == pytest.approx(np.log(2.0), rel=1e-15)
    # asymptotes: identity on the right, zero on the left, no overflow
    assert softplus(1000.0) == 1000.0
    assert softplus(-1000.0) == 0.0
    big = softplus(np.array([-1e8, -50.0, 50.0, 1e8]))
    assert np.all(np.isfinite(big))
    npt.assert_allclose(softplus(-50.0), np.exp(-50.0), rtol=1e-12)


def test_softplus_is_positive_and_increasing():
    t = np.linspace(-40.0, 40.0, 500)
    vals = softplus(t)
    assert np.all(vals > 0)
    assert np.all(np.diff(vals) > 0)


# ----------------------------------------------------------------- sigmoid


def test_sigmoid_matches_extended_precision():
    t = np.linspace(-500.0, 500.0, 4001)
    expected = sigmoid_ld(t).astype(float)
    npt.assert_allclose(sigmoid(t), expected, rtol=1e-14, atol=1e-300)


def test_sigmoid_symmetry_and_range():
    assert sigmoid(0.0) == 0.5
    t = np.linspace(-300.0, 300.0, 601)
    s = sigmoid(t)
    assert np.all((s >= 0) & (s <= 1))
    npt.assert_allclose(s + sigmoid(-t), np.ones_like(s), rtol=0, atol=1e-15)
    # deep negative tail keeps relative precision instead of flushing to 0
    assert sigmoid(-600.0) > 0


def test_sigmoid_is_softplus_derivative():
    t = np.linspace(-30.0, 30.0, 101)
    h = 1e-6
    fd = (softplus(t + h) - softplus(t - h)) / (2 * h)
    # roundoff of the difference quotient dominates: eps*|t|/(2h) ~ 2e-9
    npt.assert_allclose(sigmoid(t), fd, rtol=0, atol=1e-8)


# ----------------------------------------------------- problem validation


def test_problem_shapes_and_properties():
    rng = np.random.default_rng(0)
    prob = random_problem(rng, m=5, n=9)
    assert prob.n_meas == 5
    assert prob.n_signal == 9
    f = rng.standard_normal(9)
    npt.assert_allclose(prob.apply(f), prob.A @ f)
    r = rng.standard_normal(5)
    npt.assert_allclose(prob.apply_t(r), prob.A.T @ r)


def test_problem_rejects_bad_inputs():
    A = np.eye(3)
    y = np.zeros(3)
    with pytest.raises(ValueError):
        SparseProblem(np.zeros(3), y, 0.1)          # A not 2-d
    with pytest.raises(ValueError):
        SparseProblem(A, np.zeros(4), 0.1)          # y length mismatch
    with pytest.raises(ValueError):
        SparseProblem(A, np.zeros((3, 1)), 0.1)     # y not a vector
    with pytest.raises(ValueError):
        SparseProblem(A, y, 0.0)                    # tau not positive
    with pytest.raises(ValueError):
        SparseProblem(A, y, -1.0)
    bad = A.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        SparseProblem(bad, y, 0.1)


def test_point_validation():
    rng = np.random.default_rng(1)
    prob = random_problem(rng, m=4, n=6)
    with pytest.raises(ValueError):
        phi(prob, np.zeros(11))      # odd length
    with pytest.raises(ValueError):
        phi(prob, np.zeros(10))      # wrong size for this problem
    with pytest.raises(ValueError):
        to_signal(np.zeros((2, 6)))  # not 1-d


# ------------------------------------------------------- value and signal


def test_to_signal_zero_point():
    npt.assert_allclose(to_signal(np.zeros(10)), np.zeros(5), atol=0)


def test_to_signal_recovers_difference():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(12) * 3
    ut, vt = x[:6], x[6:]
    expected = (softplus_ld(ut) - softplus_ld(vt)).astype(float)
    npt.assert_allclose(to_signal(x), expected, rtol=1e-14, atol=1e-15)


def test_phi_matches_extended_precision_formula():
    rng = np.random.default_rng(3)
    for _ in range(10):
        prob = random_problem(rng)
        x = rng.standard_normal(2 * prob.n_signal) * 2
        u = softplus_ld(x[: prob.n_signal])
        v = softplus_ld(x[prob.n_signal:])
        r = prob.A.astype(np.longdouble) @ (u - v) - prob.y.astype(np.longdouble)
        expected = float(0.5 * (r @ r) + prob.tau * (np.sum(u) + np.sum(v)))
        assert phi(prob, x) == pytest.approx(expected, rel=1e-13)


def test_phi_and_grad_consistent_with_parts():
    rng = np.random.default_rng(4)
    prob = random_problem(rng)
    x = rng.standard_normal(2 * prob.n_signal)
    value, g = phi_and_grad(prob, x)
    assert value == pytest.approx(phi(prob, x), rel=1e-15)
    npt.assert_allclose(g, grad_phi(prob, x), rtol=0, atol=0)


# ------------------------------------------------------- gradient oracle


def test_gradient_matches_central_differences():
    """Max relative gradient error <= 1e-6 over 10 problems x 20 points."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10):
        m = int(rng.integers(3, 13))
        n = int(rng.integers(3, 13))
        prob = random_problem(rng, m=m, n=n)
        for _ in range(20):
            x = rng.standard_normal(2 * n) * 2
            g = grad_phi(prob, x)
            fd = np.empty_like(g)
            h = 1e-5
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = h
                fd[i] = (phi(prob, x + e) - phi(prob, x - e)) / (2 * h)
            scale = max(float(np.max(np.abs(g))), 1e-12)
            worst = max(worst, float(np.max(np.abs(fd - g))) / scale)
    assert worst <= 1e-6, f"max relative gradient error {worst:.3e}"


def test_gradient_sign_structure():
    # at x = 0 every sigmoid is 1/2, so the two blocks are mirror images
    rng = np.random.default_rng(6)
    prob = random_problem(rng)
    n = prob.n_signal
    g = grad_phi(prob, np.zeros(2 * n))
    t = prob.A.T @ (prob.A @ np.zeros(n) - prob.y)
    npt.assert_allclose(g[:n], 0.5 * (t + prob.tau), rtol=1e-14)
    npt.assert_allclose(g[n:], 0.5 * (prob.tau - t), rtol=1e-14)
