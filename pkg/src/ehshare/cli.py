"""Experiment command line: generation, solves, sweeps, flows and scaling.

Every command is deterministic given ``--seed``: repeat r of any sweep
point draws from the stream keyed by (seed, r), so matched seeds line up
across parameter values.  Emitted allocations are projected onto the
constraint set first (see :func:`ehshare.model.repair_allocation`), so CSV
rows always describe feasible operating points and their true objective.

Set ``EHSHARE_THREADS`` to bound the worker pool used for sweep points and
repeats; rows are written in parameter order regardless of scheduling.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .admm import AdmmParams, SolveReport, solve
from .baselines import solve_equal_bandwidth, solve_greedy_bandwidth, solve_window
from .model import Scenario, feasibility, objective, repair_allocation
from .scenarios import GenConfig, ScenarioFormatError, generate, load, save

__all__ = ["run", "main", "emit_report", "sweep_rows", "flow_rows",
           "baseline_rows", "scaling_rows"]

SWEEP_HEADER = ["param_value", "mean_objective", "std_objective",
                "mean_grid_energy", "mean_coop_energy", "mean_discharge"]
FLOWS_HEADER = ["node", "harvested_used", "donated_in", "donated_out",
                "grid", "transmit", "discharged", "battery_residual"]
BASELINES_HEADER = ["scheme", "window", "lambda", "mean_objective",
                    "std_objective"]
SCALING_HEADER = ["n_users", "iterations", "objective", "time_per_iter_ms"]
REPORT_HEADER = ["objective", "raw_objective", "iterations", "converged",
                 "theorem1_satisfied", "battery_lower", "battery_upper",
                 "power_balance", "power_cap", "donation_usage",
                 "bandwidth_sum", "nonnegativity"]


def _workers() -> int:
    env = os.environ.get("EHSHARE_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _parallel_map(fn, tasks):
    """Ordered map over tasks, fanned out to processes when allowed."""
    tasks = list(tasks)
    workers = min(_workers(), len(tasks)) if tasks else 1
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _solve_repaired(sc: Scenario, params: AdmmParams):
    rep = solve(sc, params)
    best = repair_allocation(sc, rep.state)
    return rep, best


def _sweep_task(args):
    cfg, params, repeat = args
    sc = generate(cfg, repeat)
    _, best = _solve_repaired(sc, params)
    return (objective(sc, best), float(best.g.sum()), float(best.r.sum()),
            float(best.d.sum()))


def sweep_rows(cfg: GenConfig, param: str, values, params: AdmmParams,
               repeats: int | None = None) -> list[list]:
    """Seed-matched cost sweep; ``param`` is ``grid_cost`` or ``coop_cost``."""
    if param not in ("grid_cost", "coop_cost"):
        raise ValueError("param must be 'grid_cost' or 'coop_cost'")
    reps = cfg.repeats if repeats is None else repeats
    values = sorted(float(v) for v in values)
    tasks = [(replace(cfg, **{param: v}), params, r)
             for v in values for r in range(reps)]
    flat = _parallel_map(_sweep_task, tasks)
    rows = []
    for i, v in enumerate(values):
        chunk = flat[i * reps:(i + 1) * reps]
        objs = np.array([c[0] for c in chunk])
        rows.append([v, float(objs.mean()),
                     float(objs.std(ddof=1)) if reps > 1 else 0.0,
                     float(np.mean([c[1] for c in chunk])),
                     float(np.mean([c[2] for c in chunk])),
                     float(np.mean([c[3] for c in chunk]))])
    return rows


def _flow_task(args):
    cfg, params, repeat = args
    sc = generate(cfg, repeat)
    _, best = _solve_repaired(sc, params)
    batt_final = (sc.cumulative_harvest[:, -1] - best.l.sum(axis=1)
                  - best.r.sum(axis=(1, 2))
                  + sc.transfer_efficiency * best.r.sum(axis=(0, 2))
                  - best.s.sum(axis=1) - best.d.sum(axis=1))
    return np.stack([
        best.l.sum(axis=1),
        best.r.sum(axis=(0, 2)),
        best.r.sum(axis=(1, 2)),
        best.g.sum(axis=1),
        best.p.sum(axis=1),
        best.d.sum(axis=1),
        batt_final,
    ])


def flow_rows(cfg: GenConfig, params: AdmmParams,
              repeats: int | None = None) -> list[list]:
    """Seed-averaged per-node energy decomposition."""
    reps = cfg.repeats if repeats is None else repeats
    stacks = _parallel_map(_flow_task, [(cfg, params, r) for r in range(reps)])
    mean = np.mean(stacks, axis=0)
    return [[node] + [float(v) for v in mean[:, node]]
            for node in range(cfg.n_users)]


def _baseline_task(args):
    cfg, params, repeat, scheme, window = args
    sc = generate(cfg, repeat)
    if scheme == "proposed":
        _, best = _solve_repaired(sc, params)
        return objective(sc, best)
    if scheme == "equal":
        return solve_equal_bandwidth(sc, params).objective
    if scheme == "greedy":
        return solve_greedy_bandwidth(sc, params).objective
    if scheme == "window":
        return solve_window(sc, window, params).objective
    raise ValueError(f"unknown scheme {scheme!r}")


def baseline_rows(cfg: GenConfig, lambdas, windows, params: AdmmParams,
                  repeats: int | None = None) -> list[list]:
    """Scheme comparison over a grid-cost grid, seed matched per scheme."""
    reps = cfg.repeats if repeats is None else repeats
    lambdas = sorted(float(v) for v in lambdas)
    schemes = ([("proposed", None)]
               + [("window", int(t)) for t in windows]
               + [("equal", None), ("greedy", None)])
    tasks = [(replace(cfg, grid_cost=lam), params, r, scheme, window)
             for scheme, window in schemes
             for lam in lambdas
             for r in range(reps)]
    flat = _parallel_map(_baseline_task, tasks)
    rows = []
    i = 0
    for scheme, window in schemes:
        for lam in lambdas:
            objs = np.array(flat[i:i + reps])
            i += reps
            rows.append([scheme, "" if window is None else window, lam,
                         float(objs.mean()),
                         float(objs.std(ddof=1)) if reps > 1 else 0.0])
    return rows


def _scaling_task(args):
    cfg, params, repeat = args
    sc = generate(cfg, repeat)
    t0 = time.perf_counter()
    rep = solve(sc, params)
    elapsed = time.perf_counter() - t0
    best = repair_allocation(sc, rep.state)
    return (rep.iterations, objective(sc, best),
            1000.0 * elapsed / max(1, rep.iterations))


def scaling_rows(cfg: GenConfig, n_values, params: AdmmParams,
                 repeats: int | None = None) -> list[list]:
    """Iteration count, objective and per-iteration time versus N."""
    reps = cfg.repeats if repeats is None else repeats
    rows = []
    for n in sorted(int(v) for v in n_values):
        cfg_n = replace(cfg, n_users=n)
        out = _parallel_map(_scaling_task,
                            [(cfg_n, params, r) for r in range(reps)])
        rows.append([n, float(np.mean([o[0] for o in out])),
                     float(np.mean([o[1] for o in out])),
                     float(np.mean([o[2] for o in out]))])
    return rows


def emit_report(report: SolveReport, fmt: str, path: str,
                repaired_objective: float | None = None,
                repaired_residuals=None) -> None:
    """Write a solve report; numbers keep full precision in either format."""
    if fmt == "json":
        doc = report.to_json_dict()
        if repaired_objective is not None:
            doc["repaired"] = {
                "objective": repaired_objective,
                "residuals": repaired_residuals.as_dict(),
            }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        return
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    res = (repaired_residuals if repaired_residuals is not None
           else report.residuals).as_dict()
    row = [repaired_objective if repaired_objective is not None
           else report.objective,
           report.objective, report.iterations, report.converged,
           report.theorem1_satisfied] + [res[k] for k in REPORT_HEADER[5:]]
    _write_csv(path, REPORT_HEADER, [row])


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_trace(path: str, trace) -> None:
    _write_csv(path, ["iter", "psi"], list(enumerate(trace)))


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip() != ""]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip() != ""]


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="load this scenario JSON instead of generating")
    p.add_argument("--n", type=int, default=5, help="number of links")
    p.add_argument("--k", type=int, default=5, help="number of slots")
    p.add_argument("--delta", default="10",
                   help="mean per-slot harvest; scalar or comma list per node")
    p.add_argument("--variance", type=float, default=4.0,
                   help="variance of the untruncated harvest Gaussian")
    p.add_argument("--gain", default="exponential",
                   help="'exponential' or 'constant:<level>'")
    p.add_argument("--bmax", type=float, default=20.0, help="battery capacity")
    p.add_argument("--pmax", type=float, default=20.0, help="per-slot energy cap")
    p.add_argument("--weight", type=float, default=1.0, help="link weight")
    p.add_argument("--lambda", dest="lam", default="0.1",
                   help="grid energy cost (comma grid where applicable)")
    p.add_argument("--mu", default="0.2",
                   help="cooperation cost (comma grid where applicable)")
    p.add_argument("--transfer-efficiency", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=12)
    p.add_argument("--repeat", type=int, default=0,
                   help="repeat index used by single-solve commands")


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", type=float, default=1e-3)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--eta", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=20000)
    p.add_argument("--strict-paper", action="store_true")
    p.add_argument("--stop-on-residuals", action="store_true")
    p.add_argument("--residual-tol", type=float, default=1e-6)


def _cfg_from_args(args, lam: float | None = None,
                   mu: float | None = None) -> GenConfig:
    gain_model, gain_constant = args.gain, 1.0
    if gain_model.startswith("constant"):
        parts = gain_model.split(":")
        gain_model = "constant"
        if len(parts) > 1:
            gain_constant = float(parts[1])
    delta = _floats(args.delta)
    return GenConfig(
        n_users=args.n,
        n_slots=args.k,
        delta=delta[0] if len(delta) == 1 else tuple(delta),
        harvest_variance=args.variance,
        gain_model=gain_model,
        gain_constant=gain_constant,
        battery_cap=args.bmax,
        power_cap=args.pmax,
        weight=args.weight,
        grid_cost=_floats(args.lam)[0] if lam is None else lam,
        coop_cost=_floats(args.mu)[0] if mu is None else mu,
        transfer_efficiency=args.transfer_efficiency,
        seed=args.seed,
        repeats=args.repeats,
    )


def _params_from_args(args) -> AdmmParams:
    return AdmmParams(
        rho=args.rho, gamma=args.gamma, tau=args.tau, eta=args.eta,
        max_iter=args.max_iter,
        strict_paper_problem1=args.strict_paper,
        stop_on_residuals=args.stop_on_residuals,
        residual_tol=args.residual_tol,
    )


def _scenario_from_args(args) -> Scenario:
    if args.scenario:
        return load(args.scenario)
    return generate(_cfg_from_args(args), args.repeat)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehshare",
        description="joint energy-bandwidth allocation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a scenario JSON")
    _add_scenario_args(p_gen)
    p_gen.add_argument("--out", required=True)

    p_solve = sub.add_parser("solve", help="solve one scenario")
    _add_scenario_args(p_solve)
    _add_solver_args(p_solve)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--format", choices=("csv", "json"), default="json")
    p_solve.add_argument("--trace", help="also write the psi trace CSV here")

    for name, param in (("sweep-lambda", "grid_cost"), ("sweep-mu", "coop_cost")):
        p_sw = sub.add_parser(name, help=f"sweep {param} over a grid")
        _add_scenario_args(p_sw)
        _add_solver_args(p_sw)
        p_sw.add_argument("--out", required=True)
        p_sw.set_defaults(sweep_param=param)

    p_fl = sub.add_parser("flows", help="per-node energy decomposition")
    _add_scenario_args(p_fl)
    _add_solver_args(p_fl)
    p_fl.add_argument("--out", required=True)

    p_bl = sub.add_parser("baselines", help="compare schemes over a lambda grid")
    _add_scenario_args(p_bl)
    _add_solver_args(p_bl)
    p_bl.add_argument("--windows", default="0,1",
                      help="comma list of window sizes to include")
    p_bl.add_argument("--out", required=True)

    p_sc = sub.add_parser("scaling", help="iteration cost versus network size")
    _add_scenario_args(p_sc)
    _add_solver_args(p_sc)
    p_sc.add_argument("--n-grid", default="5,10,15,20")
    p_sc.add_argument("--out", required=True)
    return parser


def run(argv: list[str] | None = None) -> int:
    """Entry point; returns a process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except (ScenarioFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "generate":
        cfg = _cfg_from_args(args)
        sc = generate(cfg, args.repeat)
        save(sc, args.out, provenance={
            "config": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in vars(cfg).items()},
            "repeat": args.repeat,
        })
        return 0

    params = _params_from_args(args)
    if args.command == "solve":
        sc = _scenario_from_args(args)
        rep = solve(sc, params)
        best = repair_allocation(sc, rep.state)
        emit_report(rep, args.format, args.out,
                    repaired_objective=objective(sc, best),
                    repaired_residuals=feasibility(sc, best))
        if args.trace:
            _write_trace(args.trace, rep.psi_trace)
        return 0

    if args.command in ("sweep-lambda", "sweep-mu"):
        values = _floats(args.lam if args.sweep_param == "grid_cost" else args.mu)
        cfg = _cfg_from_args(args)
        rows = sweep_rows(cfg, args.sweep_param, values, params)
        _write_csv(args.out, SWEEP_HEADER, rows)
        return 0

    if args.command == "flows":
        cfg = _cfg_from_args(args)
        rows = flow_rows(cfg, params)
        _write_csv(args.out, FLOWS_HEADER, rows)
        return 0

    if args.command == "baselines":
        cfg = _cfg_from_args(args)
        rows = baseline_rows(cfg, _floats(args.lam), _ints(args.windows), params)
        _write_csv(args.out, BASELINES_HEADER, rows)
        return 0

    if args.command == "scaling":
        cfg = _cfg_from_args(args)
        rows = scaling_rows(cfg, _ints(args.n_grid), params)
        _write_csv(args.out, SCALING_HEADER, rows)
        return 0

    raise ValueError(f"unknown command {args.command!r}")


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
