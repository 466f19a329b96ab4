"""End-to-end acceptance gates.

Seven criteria, one printed PASS/FAIL line each (visible live thanks to
``capsys.disabled``). Criteria 5-7 share one full-scale benchmark run via
a module-scoped fixture; criterion 7 repeats it to check byte identity.
"""

import time

import numpy as np
import pytest
from scipy.optimize import brentq

from trustspa.driver import SolverConfig, solve
from trustspa.harness import (
    ExperimentSpec,
    add_noise,
    gen_matrix,
    gen_signal,
    run_experiment,
    subseed,
)
from trustspa.lbfgs import PairBuffer, b_times
from trustspa.objective import SparseProblem, grad_phi, phi
from trustspa.subproblem import factorize, phi_secular, solve_secular, solve_subproblem


def emit(capsys, num, name, ok, detail=""):
    line = f"ACCEPTANCE {num} {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    with capsys.disabled():
        print(f"\n{line}")
    return ok


# ---------------------------------------------------------- shared helpers


def spd_matrix(n, rng, spread=30.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lams = np.exp(rng.uniform(np.log(1.0 / spread), np.log(spread), size=n))
    return (q * lams) @ q.T


def make_buffer(n, pairs, gamma, rng):
    buf = PairBuffer(n, memory=max(pairs, 1))
    if pairs:
        h = spd_matrix(n, rng)
        for _ in range(pairs):
            s = rng.standard_normal(n) * float(np.exp(rng.uniform(-1, 1)))
            assert buf.update(s, h @ s)
    buf.gamma = float(gamma)
    return buf


def dense_model(buf):
    return np.column_stack([b_times(buf, col) for col in np.eye(buf.n)])


def oracle_solve(B, g, delta):
    lams, Q = np.linalg.eigh(B)
    gh = Q.T @ g

    def step_norm(sigma):
        return float(np.linalg.norm(gh / (lams + sigma)))

    if step_norm(0.0) <= delta:
        return -Q @ (gh / lams), 0.0
    hi = float(np.linalg.norm(g)) / delta
    while step_norm(hi) > delta:
        hi *= 2.0
    sigma = brentq(lambda s: step_norm(s) - delta, 0.0, hi,
                   xtol=1e-15, rtol=8.9e-16, maxiter=200)
    return -Q @ (gh / (lams + sigma)), sigma


# -------------------------------------------------------------- criterion 1


def test_criterion_1_subproblem_oracle(capsys):
    """200 random instances match the dense trust-region oracle."""
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    worst_gap = 0.0
    failures = []
    for case in range(200):
        n = int(rng.integers(5, 51))
        pairs = int(rng.integers(0, 6))
        gamma = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
        delta = float(10.0 ** rng.uniform(-3, 3))
        buf = make_buffer(n, pairs, gamma, rng)
        g = rng.standard_normal(n) * float(10.0 ** rng.uniform(-2, 2))

        sol = solve_subproblem(buf, g, delta)
        B = dense_model(buf)
        p_ref, _ = oracle_solve(B, g, delta)
        q_ref = float(g @ p_ref + 0.5 * p_ref @ (B @ p_ref))
        q_got = float(g @ sol.step + 0.5 * sol.step @ (B @ sol.step))
        gap = abs(q_got - q_ref) / max(1.0, abs(q_ref))
        worst_gap = max(worst_gap, gap)
        if gap > 1e-8:
            failures.append((case, "model value", gap))

        gnorm = float(np.linalg.norm(g))
        pnorm = float(np.linalg.norm(sol.step))
        resid = float(np.linalg.norm(B @ sol.step + sol.sigma * sol.step + g))
        if resid > 1e-6 * max(1.0, gnorm):
            failures.append((case, "stationarity", resid))
        if sol.sigma < 0:
            failures.append((case, "sign", sol.sigma))
        if pnorm > delta * (1.0 + 1e-6):
            failures.append((case, "feasibility", pnorm - delta))
        if sol.sigma * (delta - pnorm) > 1e-6 * delta * max(1.0, sol.sigma):
            failures.append((case, "complementarity", sol.sigma * (delta - pnorm)))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 10.0
    emit(capsys, 1, "subproblem-oracle", ok,
         f"200 instances, worst value gap {worst_gap:.2e}, {elapsed:.2f}s")
    assert not failures, failures[:5]
    assert elapsed < 10.0


# -------------------------------------------------------------- criterion 2


def test_criterion_2_secular_newton(capsys):
    """1000 boundary instances: monotone Newton, <= 20 iterations each."""
    rng = np.random.default_rng(1002)
    t0 = time.perf_counter()
    worst_iters = 0
    failures = []
    for case in range(1000):
        n = int(rng.integers(5, 31))
        pairs = int(rng.integers(0, 6))
        gamma = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
        buf = make_buffer(n, pairs, gamma, rng)
        g = rng.standard_normal(n) * float(10.0 ** rng.uniform(-1, 2))
        fac = factorize(buf, g)
        newton_norm = 1.0 / (phi_secular(0.0, fac, 1.0) + 1.0)
        delta = 0.5 * newton_norm
        iterates: list[float] = []
        sigma, iters = solve_secular(fac, delta, trace_iterates=iterates)
        worst_iters = max(worst_iters, iters)
        if iters > 20:
            failures.append((case, "iterations", iters))
        if any(b < a for a, b in zip(iterates, iterates[1:])):
            failures.append((case, "monotonicity", iterates))
        landing = 1.0 / (phi_secular(sigma, fac, delta) + 1.0 / delta)
        if abs(landing - delta) > 1e-8 * delta:
            failures.append((case, "boundary", landing - delta))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 5.0
    emit(capsys, 2, "secular-newton", ok,
         f"1000 instances, max {worst_iters} iterations, {elapsed:.2f}s")
    assert not failures, failures[:5]
    assert elapsed < 5.0


# -------------------------------------------------------------- criterion 3


def test_criterion_3_compact_fidelity(capsys):
    """Compact B vs the dense rank-two recursion, secant, and spectrum."""
    rng = np.random.default_rng(1003)
    t0 = time.perf_counter()
    worst_entry = worst_secant = worst_spec = 0.0
    for memory in (3, 4, 5, 6, 7):
        for n in (6, 12, 20):
            buf = PairBuffer(n, memory=memory)
            h = spd_matrix(n, rng)
            pairs = []
            for _ in range(memory + 2):
                s = rng.standard_normal(n) * float(np.exp(rng.uniform(-2, 2)))
                y = h @ s
                assert buf.update(s, y)
                pairs.append((s, y))
            retained = pairs[-memory:]

            expected = buf.gamma * np.eye(n)
            for s, y in retained:
                Bs = expected @ s
                expected = (expected - np.outer(Bs, Bs) / float(s @ Bs)
                            + np.outer(y, y) / float(s @ y))
            got = dense_model(buf)
            worst_entry = max(worst_entry, float(np.max(np.abs(got - expected))))

            s_last, y_last = retained[-1]
            secant = float(np.linalg.norm(b_times(buf, s_last) - y_last))
            worst_secant = max(worst_secant,
                               secant / float(np.linalg.norm(y_last)))

            # the spectral split applies to a full-rank Psi; factorize prunes
            # histories wider than n, so compare against the pruned model
            fac = factorize(buf, rng.standard_normal(n))
            l2 = fac.subspace_eigvals.size
            spec_expected = np.sort(np.concatenate(
                [fac.subspace_eigvals, np.full(n - l2, buf.gamma)]))
            spec_got = np.linalg.eigvalsh(dense_model(buf))
            worst_spec = max(worst_spec,
                             float(np.max(np.abs(spec_got - spec_expected))))
    elapsed = time.perf_counter() - t0
    ok = (worst_entry <= 1e-9 and worst_secant <= 1e-10
          and worst_spec <= 1e-8 and elapsed < 5.0)
    emit(capsys, 3, "compact-fidelity", ok,
         f"entry {worst_entry:.2e}, secant {worst_secant:.2e}, "
         f"spectrum {worst_spec:.2e}, {elapsed:.2f}s")
    assert worst_entry <= 1e-9
    assert worst_secant <= 1e-10
    assert worst_spec <= 1e-8
    assert elapsed < 5.0


# -------------------------------------------------------------- criterion 4


def test_criterion_4_gradient_correctness(capsys):
    """Analytic gradient vs central differences on random small problems."""
    rng = np.random.default_rng(1004)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        m = int(rng.integers(3, 13))
        n = int(rng.integers(3, 13))
        A = rng.standard_normal((m, n))
        y = rng.standard_normal(m)
        prob = SparseProblem(A, y, float(rng.uniform(0.05, 0.5)))
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
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 5.0
    emit(capsys, 4, "gradient-correctness", ok,
         f"max relative error {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-6
    assert elapsed < 5.0


# ----------------------------------------------------- criteria 5, 6, 7


@pytest.fixture(scope="module")
def paper_batch(tmp_path_factory):
    """One full-scale benchmark shared by criteria 5-7."""
    out_dir = tmp_path_factory.mktemp("acceptance") / "run_a"
    t0 = time.perf_counter()
    summary = run_experiment(ExperimentSpec(), out_dir=out_dir)
    return summary, out_dir, time.perf_counter() - t0


def test_criterion_5_experiment_reproduction(paper_batch, capsys):
    """Full-scale benchmark gates on MSE levels, ordering, and sparsity."""
    summary, _, elapsed = paper_batch
    ts = summary.per_solver["trustspa"]
    gp = summary.per_solver["gpsr"]
    wins = 0
    per_trial = {}
    for rep in summary.reports:
        per_trial.setdefault(rep.trial, {})[rep.solver] = rep.mse
    for vals in per_trial.values():
        wins += vals["trustspa"] < vals["gpsr"]

    gates = {
        "a: trustspa mean MSE <= 2.0e-4":
            ts["mean_mse"] <= 2.0e-4,
        "b: gpsr mean MSE in [5e-5, 5e-4]":
            5e-5 <= gp["mean_mse"] <= 5e-4,
        "c: trustspa beats gpsr, >= 7/10 trials":
            ts["mean_mse"] < gp["mean_mse"] and wins >= 7,
        "d: trustspa nnz < 1500, gpsr nnz > 160":
            ts["mean_nnz"] < 1500 and gp["mean_nnz"] > 160,
    }
    detail = (
        f"trustspa mse {ts['mean_mse']:.3e} nnz {ts['mean_nnz']:.0f}, "
        f"gpsr mse {gp['mean_mse']:.3e} nnz {gp['mean_nnz']:.0f}, "
        f"wins {wins}/10, {elapsed:.0f}s"
    )
    ok = all(gates.values())
    emit(capsys, 5, "experiment-reproduction", ok, detail)
    with capsys.disabled():
        for name, passed in gates.items():
            print(f"    gate {name}: {'PASS' if passed else 'FAIL'}")
    assert ok, {name: passed for name, passed in gates.items() if not passed}


def test_criterion_6_outer_loop_soundness(paper_batch, capsys):
    """Sufficient decrease on accepted steps; certified steps on a small run."""
    summary, _, _ = paper_batch
    checked = 0
    violations = []
    for (solver, trial), run in summary.runs.items():
        if solver != "trustspa":
            continue
        values = [rec.phi for rec in run.trace] + [run.final_value]
        for rec, nxt in zip(run.trace, values[1:]):
            if rec.accepted:
                decrease = values[rec.k] - nxt
                needed = 0.1 * (-rec.pred)
                if decrease < needed * (1 - 1e-9):
                    violations.append((trial, rec.k, decrease, needed))
            elif nxt != values[rec.k]:
                violations.append((trial, rec.k, "moved on reject"))
            checked += 1

    # debug-mode certification on a small instance: every emitted step
    # passes the optimality certificate (certify raises otherwise)
    n_small = 256
    f = gen_signal(n_small, 10, subseed(7, "signal", 0))
    A = gen_matrix(64, n_small, subseed(7, "matrix", 0))
    y = add_noise(A @ f, 0.05, subseed(7, "noise", 0))
    tau = 0.1 * float(np.max(np.abs(A.T @ y)))
    res = solve(SparseProblem(A, y, tau), SolverConfig(check_certificates=True))
    certified = res.iterations

    ok = not violations and res.status in ("converged-gradient",
                                           "converged-objective")
    emit(capsys, 6, "outer-loop-soundness", ok,
         f"{checked} iterations checked, {certified} steps certified")
    assert not violations, violations[:5]
    assert res.status in ("converged-gradient", "converged-objective")


def test_criterion_7_determinism(paper_batch, capsys, tmp_path_factory):
    """Repeating the benchmark yields byte-identical gated outputs."""
    _, dir_a, _ = paper_batch
    dir_b = tmp_path_factory.mktemp("acceptance") / "run_b"
    run_experiment(ExperimentSpec(), out_dir=dir_b)
    same = {
        name: (dir_a / name).read_bytes() == (dir_b / name).read_bytes()
        for name in ("trials.csv", "summary.json")
    }
    ok = all(same.values())
    emit(capsys, 7, "determinism", ok,
         ", ".join(f"{n} {'identical' if v else 'DIFFERS'}"
                   for n, v in same.items()))
    assert ok, same
