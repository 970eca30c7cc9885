"""Command line interface.

    hetero-alloc run      --scenario FILE --mode centralized|mixed --out DIR [--seed N] [--latency N] [--plots]
    hetero-alloc compare  --scenario FILE --out DIR [--latency N] [--plots]
    hetero-alloc analyze  --trace FILE
    hetero-alloc allocate --scenario FILE [--relaxation hull|bigm] [--check]

``--scenario`` takes a path or the name of a bundled scenario. Exit codes:
0 success, 2 allocation infeasible, 3 milestone failure, 1 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .allocator import AllocationProblem, InfeasibleAllocation, brute_force_allocation, solve_allocation
from .analysis import check_prop1_convergence, lyapunov_value, convergence_hypotheses
from .scenario import BUNDLED, resolve_scenario
from .sim import SimulationAborted, compare, milestones_ok, run_centralized, run_mixed
from .trace import RunTrace

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_MILESTONE = 0, 1, 2, 3


def _scenario(args):
    sc = resolve_scenario(args.scenario)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "latency", None) is not None:
        over["latency"] = args.latency
    if getattr(args, "duration", None) is not None:
        over["duration"] = args.duration
    return sc.with_overrides(**over) if over else sc


def _report_milestones(trace) -> int:
    ms = trace.meta.get("milestones", [])
    for m in ms:
        found = "never" if m["found_t"] is None else f"{m['found_t']:.2f}s"
        want = "any time" if m["expected_t"] is None else f"{m['expected_t']:.2f}s +- {m['tol']:g}"
        print(f"  milestone {m['name']:<24} {'ok ' if m['ok'] else 'FAIL'}  found {found} (expected {want})")
    return EXIT_OK if milestones_ok(trace) else EXIT_MILESTONE


def _write(trace, sc, out, plots, stem):
    out = Path(out)
    csv_path, side = trace.write(out / f"{stem}.csv", sidecar={"scenario_path": sc.source})
    print(f"wrote {csv_path} and {side}")
    if plots:
        from .plots import trace_plots
        for p in trace_plots(trace, out, prefix=f"{stem}_"):
            print(f"wrote {p}")


def cmd_run(args) -> int:
    sc = _scenario(args)
    mode = args.mode or sc.sim.mode
    trace = run_centralized(sc) if mode == "centralized" else run_mixed(sc)
    _write(trace, sc, args.out, args.plots, f"{sc.name}_{mode}")
    return _report_milestones(trace)


def cmd_compare(args) -> int:
    sc = _scenario(args)
    trace, gap = compare(sc)
    _write(trace, sc, args.out, args.plots, f"{sc.name}_compare")
    gap_path = Path(args.out) / f"{sc.name}_input_gap.csv"
    with open(gap_path, "w") as fh:
        fh.write("t,max_abs_u_minus_uhat\n")
        for t, g in zip(trace.t, gap):
            fh.write(f"{t:.17g},{g:.17g}\n")
    print(f"wrote {gap_path}")
    print(f"max |u - uhat| = {gap.max():.3e} at t = {trace.t[int(np.argmax(gap))]:.2f}s")
    return _report_milestones(trace)


def cmd_analyze(args) -> int:
    trace = RunTrace.read(args.trace)
    dV = np.diff(trace.V)
    summary = {
        "steps": trace.steps,
        "duration": float(trace.t[-1] - trace.t[0]) if trace.steps else 0.0,
        "allocation_changes": [round(float(trace.t[k]), 6) for k in trace.alpha_changes()],
        "V_initial": float(trace.V[0]) if trace.steps else None,
        "V_final": float(trace.V[-1]) if trace.steps else None,
        "V_increases": int(np.sum(dV > 0)),
        "V_max_increase": float(dV.max()) if dV.size else 0.0,
    }
    if trace.uhat is not None:
        summary["max_input_gap"] = float(trace.input_gap().max())
    src = trace.meta.get("source")
    if src and Path(src).exists():
        sc = resolve_scenario(src)
        V = [lyapunov_value(sc.tasks, sc.gamma, trace.x[k], trace.t[k], trace.alpha[k]) if len(sc.tasks) else 0.0
             for k in range(trace.steps)]
        summary["V_recomputed_exact"] = bool(np.array_equal(np.array(V), trace.V))
        rep = check_prop1_convergence(trace.objective, trace.u, trace.alpha, hypotheses=convergence_hypotheses(sc))
        summary["convergence"] = rep.to_dict()
    if trace.meta.get("milestones"):
        summary["milestones"] = trace.meta["milestones"]
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_allocate(args) -> int:
    sc = _scenario(args)
    a = sc.allocator
    prob = AllocationProblem(sc.model, sc.tasks, sc.dynamics, sc.x0, 0.0, C=a.C, l=a.l, kappa=a.kappa,
                             delta_max=a.delta_max, gamma=sc.gamma, n_min=a.n_min, n_max=a.n_max)
    sol = solve_allocation(prob, relaxation=args.relaxation)
    out = sol.to_dict()
    if args.check:
        ref = brute_force_allocation(prob)
        out["brute_force_objective"] = ref.objective
        out["brute_force_alpha"] = ref.alpha.tolist()
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetero-alloc", description="Energy-aware task allocation for heterogeneous robot teams.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    scen_help = f"scenario JSON path or bundled name ({', '.join(BUNDLED)})"

    r = sub.add_parser("run", help="simulate a scenario and write its trace")
    r.add_argument("--scenario", required=True, help=scen_help)
    r.add_argument("--mode", choices=("centralized", "mixed"))
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--latency", type=int)
    r.add_argument("--duration", type=float)
    r.add_argument("--plots", action="store_true")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="mixed run with centralized reference inputs")
    c.add_argument("--scenario", required=True, help=scen_help)
    c.add_argument("--out", required=True)
    c.add_argument("--latency", type=int)
    c.add_argument("--duration", type=float)
    c.add_argument("--plots", action="store_true")
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("analyze", help="summarize a trace file")
    a.add_argument("--trace", required=True)
    a.set_defaults(func=cmd_analyze)

    al = sub.add_parser("allocate", help="solve the allocation problem at the initial state")
    al.add_argument("--scenario", required=True, help=scen_help)
    al.add_argument("--relaxation", choices=("hull", "bigm"), default="hull")
    al.add_argument("--check", action="store_true", help="also enumerate every allocation")
    al.set_defaults(func=cmd_allocate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InfeasibleAllocation, SimulationAborted) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
