"""Command-line interface: run / sweep / trace / validate."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness, metrics, optimizer, solvers
from .baselines import SCHEMES, run_scheme
from .channel import load_scenario, parse_config_text, sample_scenario, scenario_from_config
from .optimizer import RunOptions


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--scheme", default="proposed", choices=SCHEMES)


def _load(args) -> "tuple":
    with open(args.config, "r", encoding="utf-8") as fh:
        entries = parse_config_text(fh.read())
    scen = scenario_from_config(entries)
    if args.seed is not None:
        scen = scen.replace(seed=args.seed)
    return entries, scen


def _print_report(result) -> None:
    rep = result.report
    print(metrics.MetricReport.CSV_HEADER)
    print(rep.to_csv_row())
    print(f"converged={int(result.converged)} degraded={int(result.state.degraded)} "
          f"sweeps={len(result.state.objective_trace)} "
          f"outer={result.state.t2} "
          f"violation={result.state.violation_trace[-1] if result.state.violation_trace else float('nan'):.3e}")
    for name, val in rep.margins.items():
        print(f"margin.{name}={val:.6g}")


def cmd_run(args) -> int:
    _, scen = _load(args)
    result = run_scheme(args.scheme, scen, RunOptions())
    _print_report(result)
    return 0 if result.converged else 1


def cmd_trace(args) -> int:
    _, scen = _load(args)
    result = optimizer.run(scen, RunOptions(), trace_path=args.out)
    _print_report(result)
    print(f"trace written to {args.out}")
    return 0 if result.converged else 1


def cmd_sweep(args) -> int:
    entries, scen = _load(args)
    spec = harness.sweep_from_config(entries, scen, args.out, trials=args.trials)
    if args.scheme != "proposed" and args.scheme not in spec.schemes:
        spec.schemes = list(spec.schemes) + [args.scheme]
    results = harness.run_sweep(spec)
    n_fail = sum(1 for r in results if not r.converged)
    print(f"{len(results)} trials -> {spec.out} and {harness.aggregate_path(spec.out)}"
          f" ({n_fail} unconverged)")
    return 0


def cmd_validate(args) -> int:
    """Fast self-contained invariant battery (independent of pytest)."""
    failures = []

    def check(name, ok):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        if not ok:
            failures.append(name)

    _, scen = _load(args)
    scen = scen.replace(seed=scen.seed if args.seed is None else args.seed)
    channels = sample_scenario(scen, scen.seed)
    opts = RunOptions(t2_max=8)

    res1 = optimizer.run(scen, opts, channels=channels)
    res2 = optimizer.run(scen, opts, channels=channels)
    check("determinism: identical objective traces",
          res1.state.objective_trace == res2.state.objective_trace)

    mono_ok = True
    by_outer = {}
    for outer, inner, rho, obj, viol, rate in res1.state.sweep_rows:
        by_outer.setdefault(outer, []).append(obj)
    for objs in by_outer.values():
        for a, b in zip(objs, objs[1:]):
            if b < a - 1e-9:
                mono_ok = False
    check("inner sweeps non-decreasing per outer iteration", mono_ok)

    check("final phases unit modulus",
          float(np.max(np.abs(np.abs(res1.vars.phi) - 1.0))) <= 1e-9)
    lo, hi = scen.region(0)
    check("final positions inside region",
          bool(np.all(res1.vars.u >= lo - 1e-12) and np.all(res1.vars.u <= hi + 1e-12)))
    check("power budget respected",
          float(np.linalg.norm(res1.vars.w) ** 2) <= scen.power_cap * (1 + 1e-9))

    vars, aux = res1.vars, res1.aux
    grad_ok = True
    for k in range(scen.k_users):
        sur = solvers.build_position_surrogate(channels, vars, aux, k, vars.u[k])
        eps = 1e-8
        for dim in range(2):
            e = np.zeros(2)
            e[dim] = eps

            def psi(u):
                f = channels.user_frv(k, u)
                return float(2.0 * np.real(f.conj() @ sur.varsigma)) + sur.eps5
            fd = (psi(vars.u[k] + e) - psi(vars.u[k] - e)) / (2 * eps)
            if abs(fd - sur.grad[dim]) > 1e-4 * max(abs(fd), 1.0):
                grad_ok = False
    check("position gradient matches finite differences", grad_ok)

    print(f"{'OK' if not failures else 'FAILED'}: {len(failures)} failures")
    return 0 if not failures else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="risac",
        description="Movable-antenna aided secure RIS-ISAC beamforming simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single trial, prints the metric report")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_trace = sub.add_parser("trace", help="single trial with iteration-trace CSV")
    _add_common(p_trace)
    p_trace.add_argument("--out", required=True)
    p_trace.set_defaults(func=cmd_trace)

    p_sweep = sub.add_parser("sweep", help="Monte-Carlo sweep from a config file")
    _add_common(p_sweep)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--trials", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="fast invariant/oracle battery")
    _add_common(p_val)
    p_val.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:           # trial failures -> diagnostic + exit 1
        print(f"trial failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
