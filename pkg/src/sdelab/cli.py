"""Command-line front end.

Exit codes: 0 all requested checks passed, 1 a diagnostic failed,
2 validation problem, 3 numeric failure.  The default output directory is
``$SDELAB_OUT`` or ``./out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import (DegenerateWeights, DivergentMoment, GridMismatch,
                     IntensityBoundViolated, IoError, MissingDriverRecord,
                     NonConvergent, QuadratureFailure, RangeError,
                     ValidationError)
from .kernels import geometric_partition, moment_bound, tv_continuity_modulus
from .pathcalc import qv_estimate
from .scenarios import (ScenarioSpec, build_bundle, counterexample_cauchy,
                        counterexample_stable, emit_report, load_spec,
                        report_json, run_scenario, scenario_names)

_NUMERIC_ERRORS = (NonConvergent, QuadratureFailure, RangeError, DivergentMoment,
                   IntensityBoundViolated, DegenerateWeights, GridMismatch,
                   MissingDriverRecord)


def _out_dir(args):
    d = args.out or os.environ.get("SDELAB_OUT") or "out"
    os.makedirs(d, exist_ok=True)
    return d


def _spec_from_args(args) -> ScenarioSpec:
    if getattr(args, "config", None):
        spec = load_spec(args.config)
    else:
        if not getattr(args, "name", None):
            raise ValidationError("either --config or --name is required")
        spec = ScenarioSpec(name=args.name)
    if getattr(args, "paths", None):
        spec.n_paths = args.paths
    if getattr(args, "steps", None):
        spec.n_steps = args.steps
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    return spec


def _write_paths_csv(ens, out_dir, max_paths=25):
    path = os.path.join(out_dir, "paths.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("path_id,t,Y,X,jump_flag,jump_size\n")
        dt = float(ens.times[1] - ens.times[0])
        for i in range(min(max_paths, ens.n_paths)):
            p = ens.path(i)
            flags = np.zeros(len(ens.times))
            sizes = np.zeros(len(ens.times))
            for jt, jw in zip(p.jump_times, p.jump_w):
                node = min(int(np.ceil((jt - 1e-12) / dt)), len(ens.times) - 1)
                flags[node] = 1
                sizes[node] += jw
            for k, t in enumerate(ens.times):
                fh.write(f"{i},{float(t)!r},{float(p.y[k])!r},{float(p.x[k])!r},"
                         f"{int(flags[k])},{float(sizes[k])!r}\n")
    return path


def _print_report(report, out_dir, fmt, include_paths=None):
    path = emit_report(report, fmt=fmt, out_dir=out_dir)
    for d in report.diagnostics:
        print(f"{report.scenario}::{d.name}: {d.status.upper()} "
              f"(statistic {d.statistic:.4g}, tolerance {d.tolerance:.4g})")
    print(f"report written to {path} [{report.wall_clock:.1f}s]", file=sys.stderr)
    return 0 if report.status == "pass" else 1


def cmd_check_coefficients(args):
    spec = _spec_from_args(args)
    bundle = build_bundle(spec)
    out_dir = _out_dir(args)
    from .coefficients import check_hypotheses
    rep = check_hypotheses(bundle.coeffs.potential)
    table = bundle.coeffs.table()
    path = os.path.join(out_dir, f"coefficients_{bundle.name}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,sigma_value,h,hprime\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(json.dumps(rep.to_dict(), sort_keys=True, indent=2))
    print(f"tables written to {path}", file=sys.stderr)
    return 0


def cmd_check_kernel(args):
    spec = _spec_from_args(args)
    bundle = build_bundle(spec)
    if bundle.kernel is None:
        raise ValidationError(f"scenario {bundle.name} has no jump kernel")
    out_dir = _out_dir(args)
    y_grid = np.linspace(-2.0, 2.0, 9)
    rep = moment_bound(bundle.kernel, y_grid, radius=bundle.trunc.radius)
    part = geometric_partition(1e-3, 50.0, 129)
    tv = tv_continuity_modulus(bundle.kernel, bundle.kernel.alpha, y_grid, part)
    path = os.path.join(out_dir, f"kernel_{bundle.name}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("y,moment,m1,m2,tv_modulus\n")
        tvv = [float(v) for v in tv.values] + [""]
        for (y, mom, m1, m2, _), t in zip(rep.rows(), tvv):
            fh.write(f"{y!r},{mom!r},{m1!r},{m2!r},{t}\n")
    print(f"moment sup = {rep.sup:.8g}; tv modulus max = {tv.max:.4g}")
    print(f"table written to {path}", file=sys.stderr)
    return 0


def cmd_simulate(args):
    spec = _spec_from_args(args)
    spec.diagnostics = ()
    report, ens = run_scenario(spec)
    out_dir = _out_dir(args)
    csv_path = _write_paths_csv(ens, out_dir, max_paths=args.dump_paths)
    summary = os.path.join(out_dir, f"summary_{report.scenario}.json")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write(report_json(report))
    print(f"simulated {ens.n_paths} paths "
          f"({ens.excluded_count} excluded, {len(ens.jump_time)} jumps)")
    print(f"paths -> {csv_path}; summary -> {summary}", file=sys.stderr)
    return 0


def cmd_verify_martingale(args):
    spec = _spec_from_args(args)
    spec.diagnostics = ("martingale",)
    report, ens = run_scenario(spec)
    out_dir = _out_dir(args)
    from .generator import martingale_residual_ensemble
    from .scenarios import build_bundle, standard_profiles
    bundle = build_bundle(spec)
    prof = standard_profiles()[0]
    M = martingale_residual_ensemble(ens, prof, bundle.functional, bundle.kernel,
                                     bundle.trunc, bundle.coeffs)
    res_path = os.path.join(out_dir, f"residuals_{report.scenario}.csv")
    with open(res_path, "w", encoding="utf-8") as fh:
        fh.write("path_id,t,M_f\n")
        for i in range(min(args.dump_paths, ens.n_paths)):
            for t, v in zip(ens.times, M[i]):
                fh.write(f"{i},{float(t)!r},{float(v)!r}\n")
    print(f"residual paths -> {res_path}", file=sys.stderr)
    return _print_report(report, out_dir, args.format)


def cmd_qv(args):
    spec = _spec_from_args(args)
    spec.diagnostics = ("qv",)
    report, ens = run_scenario(spec)
    out_dir = _out_dir(args)
    T = float(ens.times[-1])
    from .pathcalc import aligned_window_ladder
    eps = aligned_window_ladder(ens.times)
    path = os.path.join(out_dir, f"qv_{report.scenario}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epsilon,t,value\n")
        for i in range(min(args.dump_paths, ens.n_paths)):
            est = qv_estimate(ens.path(i), eps, T)
            for e, v in zip(est.epsilons, est.values):
                fh.write(f"{float(e)!r},{T!r},{float(v)!r}\n")
    print(f"sweep written to {path}", file=sys.stderr)
    return _print_report(report, out_dir, args.format)


def cmd_dirichlet(args):
    spec = _spec_from_args(args)
    spec.diagnostics = ("dirichlet",)
    report, _ = run_scenario(spec)
    return _print_report(report, _out_dir(args), args.format)


def cmd_counterexample(args):
    if args.which == "stable":
        from .simulator import SimConfig
        config = None
        if args.paths:
            config = SimConfig(horizon=1.0, n_steps=args.steps or 64,
                               n_paths=args.paths,
                               master_seed=args.seed if args.seed is not None
                               else 41)
        report = counterexample_stable(gamma=args.gamma, config=config)
    else:
        report = counterexample_cauchy(
            n_samples=args.samples,
            seed=args.seed if args.seed is not None else 7)
    return _print_report(report, _out_dir(args), args.format)


def cmd_run(args):
    spec = _spec_from_args(args)
    report, ens = run_scenario(spec)
    out_dir = _out_dir(args)
    if args.dump_paths:
        _write_paths_csv(ens, out_dir, max_paths=args.dump_paths)
    return _print_report(report, out_dir, args.format)


def build_parser():
    p = argparse.ArgumentParser(prog="sdelab",
                                description="stochastic lab for SDEs with "
                                            "irregular drift and jumps")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dump_default=25):
        sp.add_argument("--name", choices=scenario_names(), help="registry scenario")
        sp.add_argument("--config", help="declarative scenario file (YAML)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory "
                        "(default $SDELAB_OUT or ./out)")
        sp.add_argument("--paths", type=int, default=None)
        sp.add_argument("--steps", type=int, default=None)
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--dump-paths", type=int, default=dump_default,
                        help="number of paths to export as CSV")

    for name, fn in (
        ("check-coefficients", cmd_check_coefficients),
        ("check-kernel", cmd_check_kernel),
        ("simulate", cmd_simulate),
        ("verify-martingale", cmd_verify_martingale),
        ("qv", cmd_qv),
        ("dirichlet", cmd_dirichlet),
        ("run", cmd_run),
    ):
        sp = sub.add_parser(name)
        common(sp)
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("counterexample")
    sp.add_argument("which", choices=("stable", "cauchy"))
    sp.add_argument("--gamma", type=float, default=0.5)
    sp.add_argument("--samples", type=int, default=1_000_000)
    common(sp)
    sp.set_defaults(fn=cmd_counterexample)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except IoError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
