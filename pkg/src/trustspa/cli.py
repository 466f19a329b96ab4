"""Command-line entry point: gen / run / sweep / experiment / report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .harness import (
    ExperimentSpec,
    _write_csv,
    add_noise,
    aggregate_reports,
    count_nonzeros,
    gen_matrix,
    gen_signal,
    load_problem,
    mse,
    run_experiment,
    run_solver,
    save_problem,
    subseed,
    tau_grid,
    tau_sweep,
)
from .objective import SparseProblem


def _parse_tau(text: str):
    if text == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tau must be a number or 'auto', got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError("tau must be positive")
    return value


def _add_instance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=4096, help="signal length")
    p.add_argument("--m", type=int, default=1024, help="number of measurements")
    p.add_argument("--spikes", type=int, default=160, help="number of +-1 spikes")
    p.add_argument("--noise", type=float, default=0.05,
                   help="noise level relative to the clean measurement RMS")
    p.add_argument("--seed", type=int, default=7, help="base seed")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", choices=["trustspa", "gpsr", "both"], default="both")
    p.add_argument("--memory", type=int, default=5, help="L-BFGS pairs retained")
    p.add_argument("--max-iters", type=int, default=10000)


def _solvers(choice: str) -> tuple[str, ...]:
    return ("trustspa", "gpsr") if choice == "both" else (choice,)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trustspa",
        description="Sparse signal recovery: trust-region solver, GPSR-BB "
                    "baseline, and a seeded experiment harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate one problem instance to CSV files")
    _add_instance_flags(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("run", help="solve one stored problem instance")
    p.add_argument("--problem", required=True, help="directory written by 'gen'")
    p.add_argument("--tau", type=_parse_tau, default=None,
                   help="l1 weight, or 'auto' to sweep (default: auto)")
    _add_solver_flags(p)
    p.add_argument("--out", default=None, help="optional output directory")

    p = sub.add_parser("sweep", help="sweep tau on the trial-0 instance")
    _add_instance_flags(p)
    _add_solver_flags(p)
    p.add_argument("--out", default=None, help="optional output directory")

    p = sub.add_parser("experiment", help="full multi-trial benchmark")
    _add_instance_flags(p)
    _add_solver_flags(p)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--tau", type=_parse_tau, default=None,
                   help="l1 weight, or 'auto' to sweep per solver (default: auto)")
    p.add_argument("--redraw-per-trial", action="store_true",
                   help="redraw signal and matrix each trial (default: noise only)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("report", help="aggregate one or more trials.csv files")
    p.add_argument("trials_csv", nargs="+", help="paths to trials.csv files")
    p.add_argument("--out", default=None, help="optional aggregate.csv path")

    return parser


def _cmd_gen(args) -> int:
    spec = ExperimentSpec(n=args.n, m=args.m, spikes=args.spikes,
                          noise=args.noise, trials=1, seed=args.seed)
    f_true = gen_signal(spec.n, spec.spikes, subseed(spec.seed, "signal", 0))
    A = gen_matrix(spec.m, spec.n, subseed(spec.seed, "matrix", 0))
    y = add_noise(A @ f_true, spec.noise, subseed(spec.seed, "noise", 0))
    save_problem(args.out, f_true, A, y, spec)
    print(f"wrote instance (n={spec.n}, m={spec.m}, spikes={spec.spikes}) to {args.out}")
    return 0


def _cmd_run(args) -> int:
    A, y, f_true, meta = load_problem(args.problem)
    cfg = meta.get("config", {})
    spec = ExperimentSpec(
        n=A.shape[1], m=A.shape[0],
        spikes=int(cfg.get("spikes", 0)),
        noise=float(cfg.get("noise", 0.0)),
        trials=1, seed=int(cfg.get("seed", 0)),
        memory=args.memory, max_iters=args.max_iters,
    )
    rows = []
    for solver in _solvers(args.solver):
        if args.tau is None:
            if f_true is None:
                print("error: --tau auto needs f_true.csv in the problem directory",
                      file=sys.stderr)
                return 1
            best_tau, best_out, best_mse = None, None, np.inf
            for tau in tau_grid(A, y):
                out = run_solver(solver, SparseProblem(A, y, tau), spec)
                err = mse(out.f_hat, f_true)
                if np.isfinite(err) and err < best_mse:
                    best_tau, best_out, best_mse = tau, out, err
            if best_out is None:
                print(f"error: every tau failed for {solver}", file=sys.stderr)
                return 1
            tau_used, out = best_tau, best_out
        else:
            tau_used = args.tau
            out = run_solver(solver, SparseProblem(A, y, tau_used), spec)
        row = {
            "solver": solver,
            "tau": float(tau_used),
            "nnz": count_nonzeros(out.f_hat),
            "iterations": out.iterations,
            "status": out.status,
            "wall_time_s": out.wall_time_s,
        }
        if f_true is not None:
            row["mse"] = mse(out.f_hat, f_true)
        rows.append((row, out))
        msg = (f"{solver}: tau={row['tau']:.6g} iters={row['iterations']} "
               f"nnz={row['nnz']} status={row['status']}")
        if "mse" in row:
            msg += f" mse={row['mse']:.6e}"
        print(msg)
    if args.out is not None:
        import json
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "run.json", "w", newline="\n") as fh:
            json.dump({"config": spec.config_dict(),
                       "results": [r for r, _ in rows]}, fh, sort_keys=True, indent=2)
            fh.write("\n")
        header = ["index"] + (["f_true"] if f_true is not None else [])
        header += [f"f_hat_{r['solver']}" for r, _ in rows]
        with open(out_dir / "reconstruction.csv", "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(A.shape[1]):
                cells = [str(i)]
                if f_true is not None:
                    cells.append(repr(float(f_true[i])))
                cells += [repr(float(out.f_hat[i])) for _, out in rows]
                fh.write(",".join(cells) + "\n")
        print(f"wrote run.json and reconstruction.csv to {out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    for solver in _solvers(args.solver):
        spec = ExperimentSpec(n=args.n, m=args.m, spikes=args.spikes,
                              noise=args.noise, trials=1, seed=args.seed,
                              solvers=(solver,), memory=args.memory,
                              max_iters=args.max_iters)
        sw = tau_sweep(spec, solver)
        print(f"{solver}: best tau = {sw.best_tau!r}")
        for row in sw.rows:
            print(f"  tau={row['tau']:.6g} mse={row['mse']:.6e} "
                  f"nnz={row['nnz']} iters={row['iterations']} status={row['status']}")
        if args.out is not None:
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_csv(
                out_dir / f"sweep_{solver}.csv", spec,
                ["tau", "mse", "nnz", "iterations", "status", "excluded"],
                ([row["tau"], row["mse"], row["nnz"], row["iterations"],
                  row["status"], row["excluded"]] for row in sw.rows),
            )
    if args.out is not None:
        print(f"wrote sweep CSVs to {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    spec = ExperimentSpec(
        n=args.n, m=args.m, spikes=args.spikes, noise=args.noise,
        trials=args.trials, seed=args.seed, tau=args.tau,
        solvers=_solvers(args.solver), memory=args.memory,
        max_iters=args.max_iters, redraw_per_trial=args.redraw_per_trial,
    )
    summary = run_experiment(spec, out_dir=args.out)
    for solver, stats in summary.per_solver.items():
        print(f"{solver}: tau={stats['tau']:.6g} mean_mse={stats['mean_mse']:.6e} "
              f"std_mse={stats['std_mse']:.3e} mean_nnz={stats['mean_nnz']:.1f} "
              f"mean_iters={stats['mean_iterations']:.1f} "
              f"mean_time={stats['mean_time_s']:.2f}s")
    print(f"wrote outputs to {args.out} (total {summary.total_time_s:.1f}s)")
    return 0


def _cmd_report(args) -> int:
    rows = aggregate_reports(args.trials_csv, out_path=args.out)
    for rec in rows:
        print(f"{rec['solver']}: runs={rec['runs']} mean_mse={rec['mean_mse']:.6e} "
              f"std_mse={rec['std_mse']:.3e} mean_nnz={rec['mean_nnz']:.1f}")
    if args.out is not None:
        print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "experiment": _cmd_experiment,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
