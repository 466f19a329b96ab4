"""Seeded experiment harness: signal generation, tau sweep, batch runs, reports.

Reproducibility contract: every random draw comes from a PCG64 generator
seeded by SeedSequence([seed, tag, index]) where ``tag`` is the first
8 bytes (little-endian) of sha256 of a purpose string ("signal", "matrix",
"noise") and ``index`` is the trial index (0 for quantities shared across
trials). Identical spec + seed therefore reproduces every file byte for
byte; wall-clock timings are kept out of the gated outputs and written to
a separate timings.json.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .driver import SolverConfig, solve
from .gpsr import gpsr_bb_solve
from .objective import SparseProblem

__all__ = [
    "AUTO_TAU_FACTORS",
    "NNZ_THRESHOLD",
    "SOLVER_NAMES",
    "ExperimentSpec",
    "TrialReport",
    "RunOutput",
    "SweepResult",
    "ExperimentSummary",
    "subseed",
    "gen_signal",
    "gen_matrix",
    "add_noise",
    "mse",
    "count_nonzeros",
    "trial_instance",
    "tau_grid",
    "run_solver",
    "tau_sweep",
    "run_experiment",
    "write_outputs",
    "save_problem",
    "load_problem",
    "aggregate_reports",
]

# Multiples of ||A'y||_inf forming the automatic tau grid.
AUTO_TAU_FACTORS = (0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5)
# |f_j| above this counts as a nonzero in sparsity reports.
NNZ_THRESHOLD = 1e-6
SOLVER_NAMES = ("trustspa", "gpsr")


@dataclass(frozen=True)
class ExperimentSpec:
    """Inputs of one experiment; echoed verbatim into every output file."""

    n: int = 4096
    m: int = 1024
    spikes: int = 160
    noise: float = 0.05
    trials: int = 10
    seed: int = 7
    tau: float | None = None          # None -> swept automatically per solver
    solvers: tuple[str, ...] = SOLVER_NAMES
    memory: int = 5
    max_iters: int = 10000
    redraw_per_trial: bool = False

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if not 0 <= self.spikes <= self.n:
            raise ValueError("spikes must lie in [0, n]")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.solvers:
            raise ValueError("at least one solver is required")
        for name in self.solvers:
            if name not in SOLVER_NAMES:
                raise ValueError(f"unknown solver {name!r}")
        if self.memory < 1 or self.max_iters < 1:
            raise ValueError("memory and max_iters must be positive")

    def config_dict(self) -> dict:
        cfg = asdict(self)
        cfg["solvers"] = list(self.solvers)
        cfg["tau"] = "auto" if self.tau is None else float(self.tau)
        return cfg


@dataclass(frozen=True)
class TrialReport:
    trial: int
    solver: str
    tau: float
    mse: float
    nnz: int
    iterations: int
    wall_time_s: float
    status: str


@dataclass(frozen=True)
class RunOutput:
    """One solver run: reconstruction plus its trace for diagnostics."""

    f_hat: np.ndarray
    iterations: int
    status: str
    wall_time_s: float
    trace: list
    final_value: float = float("nan")  # objective at the returned iterate


@dataclass(frozen=True)
class SweepResult:
    solver: str
    best_tau: float
    rows: list[dict]      # per-tau: tau, mse, nnz, iterations, status, excluded
    best_run: RunOutput   # trial-0 run at best_tau, reusable in the batch


@dataclass
class ExperimentSummary:
    spec: ExperimentSpec
    reports: list[TrialReport]
    per_solver: dict[str, dict]
    sweeps: dict[str, SweepResult] = field(default_factory=dict)
    runs: dict[tuple[str, int], RunOutput] = field(default_factory=dict)
    total_time_s: float = 0.0


def subseed(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, index); see module docstring."""
    tag = int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag, index])))


def gen_signal(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Length-n signal with k unit spikes of random sign at random positions."""
    if not 0 <= k <= n:
        raise ValueError("spike count must lie in [0, n]")
    f = np.zeros(n)
    positions = rng.choice(n, size=k, replace=False)
    signs = 2.0 * rng.integers(0, 2, size=k) - 1.0
    f[positions] = signs
    return f


def gen_matrix(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian m x n matrix with orthonormalized rows (A A' = I)."""
    if m > n:
        raise ValueError("m must not exceed n for row orthonormalization")
    while True:
        g = rng.standard_normal((m, n))
        q, r = np.linalg.qr(g.T)
        d = np.diag(r)
        if np.abs(d).min() > 0.0:
            break
        # A rank-deficient Gaussian draw has probability zero; redraw.
    signs = np.sign(d)
    return (q * signs).T


def add_noise(clean: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise scaled to the RMS of the clean measurements."""
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    m = clean.size
    sigma = level * float(np.linalg.norm(clean)) / np.sqrt(m)
    return clean + sigma * rng.standard_normal(m)


def mse(f_hat: np.ndarray, f_true: np.ndarray) -> float:
    """Mean squared error over the signal length."""
    f_hat = np.asarray(f_hat, dtype=float)
    f_true = np.asarray(f_true, dtype=float)
    if f_hat.shape != f_true.shape:
        raise ValueError("signals must have matching shapes")
    d = f_hat - f_true
    return float(d @ d) / f_true.size


def count_nonzeros(f: np.ndarray, threshold: float = NNZ_THRESHOLD) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(f)) > threshold))


def trial_instance(spec: ExperimentSpec, trial: int, base=None):
    """(f_true, A, y) for one trial under the subseed rule.

    ``base`` may carry a precomputed (f_true, A) pair to reuse when the
    signal and matrix are shared across trials.
    """
    draw = trial if spec.redraw_per_trial else 0
    if base is not None and not spec.redraw_per_trial:
        f_true, A = base
    else:
        f_true = gen_signal(spec.n, spec.spikes, subseed(spec.seed, "signal", draw))
        A = gen_matrix(spec.m, spec.n, subseed(spec.seed, "matrix", draw))
    clean = A @ f_true
    y = add_noise(clean, spec.noise, subseed(spec.seed, "noise", trial))
    return f_true, A, y


def tau_grid(A: np.ndarray, y: np.ndarray) -> list[float]:
    """Automatic grid: AUTO_TAU_FACTORS times ||A'y||_inf."""
    scale = float(np.max(np.abs(A.T @ y)))
    if scale <= 0:
        raise ValueError("A'y vanishes; the zero signal is optimal for every tau")
    return [c * scale for c in AUTO_TAU_FACTORS]


def run_solver(solver: str, prob: SparseProblem, spec: ExperimentSpec) -> RunOutput:
    """Run one named solver under the experiment budget; wall time measured here."""
    t0 = time.perf_counter()
    if solver == "trustspa":
        cfg = SolverConfig(memory=spec.memory, max_iters=spec.max_iters)
        res = solve(prob, cfg)
        wall = time.perf_counter() - t0
        return RunOutput(res.f_hat, res.iterations, res.status, wall,
                         res.trace, float(res.phi))
    if solver == "gpsr":
        res = gpsr_bb_solve(prob, tol=1e-8, max_iters=spec.max_iters)
        wall = time.perf_counter() - t0
        return RunOutput(res.f_hat, res.iterations, res.status, wall,
                         res.trace, float(res.obj))
    raise ValueError(f"unknown solver {solver!r}")


def tau_sweep(spec: ExperimentSpec, solver: str, instance=None) -> SweepResult:
    """Pick tau by minimum MSE on the trial-0 instance over the automatic grid.

    Solver failures (non-finite runs) are excluded from the selection but
    kept in the rows with their status.
    """
    if instance is None:
        instance = trial_instance(spec, 0)
    f_true, A, y = instance
    rows = []
    runs = []
    for tau in tau_grid(A, y):
        out = run_solver(solver, SparseProblem(A, y, tau), spec)
        failed = out.status == "aborted-nonfinite" or not np.all(np.isfinite(out.f_hat))
        rows.append({
            "tau": float(tau),
            "mse": mse(out.f_hat, f_true) if not failed else float("nan"),
            "nnz": count_nonzeros(out.f_hat) if not failed else -1,
            "iterations": out.iterations,
            "status": out.status,
            "excluded": bool(failed),
        })
        runs.append(out)
    usable = [i for i, row in enumerate(rows) if not row["excluded"]]
    if not usable:
        raise RuntimeError(f"every tau failed for solver {solver!r}")
    best = min(usable, key=lambda i: rows[i]["mse"])
    return SweepResult(solver, rows[best]["tau"], rows, runs[best])


def run_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentSummary:
    """Full batch: optional tau sweep per solver, then all trials.

    Returns the in-memory summary (per-solver mean/std MSE, mean nonzero
    count, mean iterations, mean wall time) and, when ``out_dir`` is given,
    writes summary.json, trials.csv, per-trial reconstruction CSVs, sweep
    CSVs and timings.json there.
    """
    t_start = time.perf_counter()
    base = None
    if not spec.redraw_per_trial:
        base = (
            gen_signal(spec.n, spec.spikes, subseed(spec.seed, "signal", 0)),
            gen_matrix(spec.m, spec.n, subseed(spec.seed, "matrix", 0)),
        )
    instance0 = trial_instance(spec, 0, base)

    taus: dict[str, float] = {}
    sweeps: dict[str, SweepResult] = {}
    for solver in spec.solvers:
        if spec.tau is not None:
            taus[solver] = float(spec.tau)
        else:
            sw = tau_sweep(spec, solver, instance0)
            sweeps[solver] = sw
            taus[solver] = sw.best_tau

    reports: list[TrialReport] = []
    runs: dict[tuple[str, int], RunOutput] = {}
    recon: dict[int, dict] = {}
    for trial in range(spec.trials):
        f_true, A, y = trial_instance(spec, trial, base) if trial else instance0
        recon[trial] = {"f_true": f_true, "f_hat": {}}
        for solver in spec.solvers:
            if trial == 0 and solver in sweeps:
                out = sweeps[solver].best_run  # same seeded computation; reuse
            else:
                out = run_solver(solver, SparseProblem(A, y, taus[solver]), spec)
            runs[(solver, trial)] = out
            recon[trial]["f_hat"][solver] = out.f_hat
            reports.append(TrialReport(
                trial=trial,
                solver=solver,
                tau=taus[solver],
                mse=mse(out.f_hat, f_true),
                nnz=count_nonzeros(out.f_hat),
                iterations=out.iterations,
                wall_time_s=out.wall_time_s,
                status=out.status,
            ))

    per_solver: dict[str, dict] = {}
    for solver in spec.solvers:
        rs = [r for r in reports if r.solver == solver]
        vals = np.array([r.mse for r in rs])
        per_solver[solver] = {
            "tau": taus[solver],
            "mean_mse": float(vals.mean()),
            "std_mse": float(vals.std()),
            "mean_nnz": float(np.mean([r.nnz for r in rs])),
            "mean_iterations": float(np.mean([r.iterations for r in rs])),
            "mean_time_s": float(np.mean([r.wall_time_s for r in rs])),
        }

    summary = ExperimentSummary(
        spec=spec,
        reports=reports,
        per_solver=per_solver,
        sweeps=sweeps,
        runs=runs,
        total_time_s=time.perf_counter() - t_start,
    )
    if out_dir is not None:
        write_outputs(summary, recon, Path(out_dir))
    return summary


def _fmt(value) -> str:
    # np.float64 subclasses float; the float() call pins the plain repr
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _config_line(spec: ExperimentSpec) -> str:
    return "# config: " + json.dumps(
        spec.config_dict(), sort_keys=True, separators=(",", ":")
    )


def _write_csv(path: Path, spec: ExperimentSpec, header: list[str], rows) -> None:
    # newline pinned so the gated files are byte-identical across platforms
    with open(path, "w", newline="\n") as fh:
        fh.write(_config_line(spec) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_outputs(summary: ExperimentSummary, recon: dict, out_dir: Path) -> None:
    """Write the deterministic report files plus the volatile timings.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = summary.spec

    _write_csv(
        out_dir / "trials.csv",
        spec,
        ["trial", "solver", "tau", "mse", "nnz", "iterations", "status"],
        (
            [r.trial, r.solver, r.tau, r.mse, r.nnz, r.iterations, r.status]
            for r in summary.reports
        ),
    )

    solvers_block = {
        solver: {
            "tau": stats["tau"],
            "mean_mse": stats["mean_mse"],
            "std_mse": stats["std_mse"],
            "mean_nnz": stats["mean_nnz"],
            "mean_iterations": stats["mean_iterations"],
        }
        for solver, stats in summary.per_solver.items()
    }
    payload = {"config": spec.config_dict(), "solvers": solvers_block}
    with open(out_dir / "summary.json", "w", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")

    for trial, data in recon.items():
        solvers = list(data["f_hat"])
        header = ["index", "f_true"] + [f"f_hat_{s}" for s in solvers]
        rows = (
            [i, float(data["f_true"][i])] + [float(data["f_hat"][s][i]) for s in solvers]
            for i in range(spec.n)
        )
        _write_csv(out_dir / f"recon_trial{trial:02d}.csv", spec, header, rows)

    for solver, sw in summary.sweeps.items():
        _write_csv(
            out_dir / f"sweep_{solver}.csv",
            spec,
            ["tau", "mse", "nnz", "iterations", "status", "excluded"],
            (
                [row["tau"], row["mse"], row["nnz"], row["iterations"],
                 row["status"], row["excluded"]]
                for row in sw.rows
            ),
        )

    timings = {
        "total_s": summary.total_time_s,
        "solvers": {
            solver: {"mean_time_s": stats["mean_time_s"]}
            for solver, stats in summary.per_solver.items()
        },
        "runs": [
            {"trial": r.trial, "solver": r.solver, "wall_time_s": r.wall_time_s}
            for r in summary.reports
        ],
    }
    with open(out_dir / "timings.json", "w", newline="\n") as fh:
        json.dump(timings, fh, sort_keys=True, indent=2)
        fh.write("\n")


def save_problem(out_dir, f_true: np.ndarray, A: np.ndarray, y: np.ndarray,
                 spec: ExperimentSpec) -> None:
    """Write one generated instance (A.csv, y.csv, f_true.csv, problem.json)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m, n = A.shape
    _write_csv(out_dir / "A.csv", spec, [f"a{j}" for j in range(n)],
               ([float(v) for v in row] for row in A))
    _write_csv(out_dir / "y.csv", spec, ["y"], ([float(v)] for v in y))
    _write_csv(out_dir / "f_true.csv", spec, ["f_true"], ([float(v)] for v in f_true))
    with open(out_dir / "problem.json", "w", newline="\n") as fh:
        json.dump({"config": spec.config_dict(), "m": m, "n": n},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_csv_array(path: Path) -> np.ndarray:
    with open(path) as fh:
        rows = [
            line for line in fh
            if line.strip() and not line.startswith("#")
        ]
    return np.loadtxt(io.StringIO("".join(rows[1:])), delimiter=",", ndmin=2)


def load_problem(in_dir):
    """Read back an instance written by :func:`save_problem`."""
    in_dir = Path(in_dir)
    A = _read_csv_array(in_dir / "A.csv")
    y = _read_csv_array(in_dir / "y.csv")[:, 0]
    f_path = in_dir / "f_true.csv"
    f_true = _read_csv_array(f_path)[:, 0] if f_path.exists() else None
    with open(in_dir / "problem.json") as fh:
        meta = json.load(fh)
    return A, y, f_true, meta


def aggregate_reports(trial_csvs, out_path=None) -> list[dict]:
    """Aggregate one or more trials.csv files into per-solver statistics."""
    rows = []
    for path in trial_csvs:
        with open(path) as fh:
            body = [line for line in fh if not line.startswith("#")]
        for rec in csv.DictReader(body):
            rows.append(rec)
    if not rows:
        raise ValueError("no trial rows found")
    solvers = sorted({r["solver"] for r in rows})
    out = []
    for solver in solvers:
        vals = np.array([float(r["mse"]) for r in rows if r["solver"] == solver])
        nnzs = np.array([float(r["nnz"]) for r in rows if r["solver"] == solver])
        out.append({
            "solver": solver,
            "runs": int(vals.size),
            "mean_mse": float(vals.mean()),
            "std_mse": float(vals.std()),
            "mean_nnz": float(nnzs.mean()),
        })
    if out_path is not None:
        with open(out_path, "w", newline="\n") as fh:
            fh.write("solver,runs,mean_mse,std_mse,mean_nnz\n")
            for rec in out:
                fh.write(
                    f"{rec['solver']},{rec['runs']},{rec['mean_mse']!r},"
                    f"{rec['std_mse']!r},{rec['mean_nnz']!r}\n"
                )
    return out
