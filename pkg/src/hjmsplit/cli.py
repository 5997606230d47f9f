"""Command-line entry point: simulate | converge | price | martingale | calibrate | budget.

Every command reads a model TOML and an initial-curve CSV, writes CSV with a
header row, and is byte-identical across reruns and thread counts.  Exit code
2 flags unparseable inputs, 1 flags domain errors, 0 is success.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import reports
from .calibration import (
    CalibSettings,
    GASettings,
    LMSettings,
    calibrate,
    default_bounds,
    read_surface_csv,
)
from .curve import read_curve_csv
from .engine import make_grid, simulate_ensemble
from .model import VolSpec, load_model_file, save_model_file
from .pricing import Payoff, PayoffKind, _initial_grid_values, martingale_check, price
from .qmc import generate, plan_budget
from .splitting import Scheme, SimConfig
from .studies import convergence_study, fit_slope, richardson_errors

__all__ = ["main"]


class InputError(Exception):
    """Unreadable or unparseable input file / flag combination (exit code 2)."""


def _parse_scheme(name: str) -> Scheme:
    try:
        return Scheme[name.upper()]
    except KeyError:
        raise InputError(f"unknown scheme {name!r}; choose from "
                         + ", ".join(s.name.lower() for s in Scheme))


def _load_inputs(args) -> tuple[VolSpec, object]:
    try:
        spec = load_model_file(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"model file {args.model}: {exc}")
    try:
        curve = read_curve_csv(args.curve)
    except (OSError, ValueError) as exc:
        raise InputError(f"curve file {args.curve}: {exc}")
    return spec, curve


def _sim_config(args, horizon: float) -> SimConfig:
    return SimConfig(
        horizon=horizon,
        steps_per_year=args.steps_per_year,
        scheme=_parse_scheme(args.scheme),
        kind=args.kind,
        n_paths=args.paths,
        skip=args.skip,
    )


def _add_sim_flags(p, scheme="nv", steps=12, paths=2048):
    p.add_argument("--model", required=True, help="model parameter TOML file")
    p.add_argument("--curve", required=True, help="initial forward curve CSV")
    p.add_argument("--scheme", default=scheme,
                   help="euler_maruyama | lt_fwd | lt_bwd | nv | swss")
    p.add_argument("--steps-per-year", type=int, default=steps)
    p.add_argument("--paths", type=int, default=paths)
    p.add_argument("--kind", default="sobol", choices=["sobol", "pseudo"],
                   help="point set: Sobol sequence or seeded pseudo-random")
    p.add_argument("--skip", type=int, default=1,
                   help="Sobol start index / pseudo-random seed")
    p.add_argument("--out", required=True, help="output CSV path")


def cmd_simulate(args) -> int:
    spec, curve = _load_inputs(args)
    config = _sim_config(args, args.horizon)
    dx, n_nodes = make_grid(config, spec, reach=0.0)
    h0 = _initial_grid_values(curve, dx, n_nodes)
    uniforms = generate(config.point_set(spec.d))
    mean_h = np.zeros(n_nodes)
    mean_v = mean_z = 0.0
    res = simulate_ensemble(spec, config, h0, uniforms)
    for w, batch in zip(res.weights, res.terminals):
        k = batch.h.shape[0]
        mean_h += w * np.sum(batch.h, axis=0) / k
        mean_v += w * float(np.sum(batch.v) / k)
        mean_z += w * float(np.sum(batch.z) / k)
    xs = dx * np.arange(n_nodes)
    reports.write_rows(
        args.out,
        ["maturity_years", "initial_rate", "mean_terminal_rate"],
        zip(xs, h0, mean_h),
    )
    print(f"simulated {config.n_paths} paths to T={args.horizon}: "
          f"mean v={mean_v:.6g} mean z={mean_z:.6g}")
    if args.plot:
        reports.plot_terminal_curve(xs, h0, mean_h, reports.figure_path(args.out))
    return 0


def cmd_converge(args) -> int:
    spec, curve = _load_inputs(args)
    try:
        ns = tuple(int(s) for s in args.ns.split(","))
    except ValueError:
        raise InputError(f"--ns must be comma-separated integers, got {args.ns!r}")
    rows, slopes = convergence_study(
        spec,
        curve,
        ns=ns,
        n_ref=args.ref_n,
        n_paths=args.paths,
        kind=args.kind,
        skip=args.skip,
        threads=args.threads,
        timings=args.timings,
    )
    header = ["scheme", "n_steps", "n_paths", "estimate", "reference",
              "abs_error", "fitted_slope"]
    table = [[r.scheme, r.n_steps, r.n_paths, r.estimate, r.reference,
              r.abs_error, slopes[r.scheme]] for r in rows]
    if args.timings:
        header.append("seconds")
        for row, r in zip(table, rows):
            row.append(r.seconds)
    reports.write_rows(args.out, header, table)
    rich_ns, rich_errs = richardson_errors(rows)
    rich_slope = fit_slope(rich_ns, rich_errs) if len(rich_ns) >= 2 else float("nan")
    for scheme, slope in slopes.items():
        print(f"{scheme}: slope {slope:.3f}")
    print(f"SWSS Richardson: slope {rich_slope:.3f}")
    if args.plot:
        reports.plot_convergence(rows, slopes, reports.figure_path(args.out))
    return 0


def cmd_price(args) -> int:
    spec, curve = _load_inputs(args)
    payoff = Payoff(
        kind=PayoffKind(args.payoff),
        maturity=args.maturity,
        tenor=args.tenor,
        strike=args.strike,
        payments=args.payments,
    )
    config = _sim_config(args, args.maturity)
    est = price(spec, config, curve, payoff, threads=args.threads)
    reports.write_rows(
        args.out,
        ["payoff", "maturity", "tenor", "strike", "payments",
         "scheme", "n_steps", "n_paths", "value"],
        [[payoff.kind.value, payoff.maturity, payoff.tenor, payoff.strike,
          payoff.payments, est.scheme.value, est.n_steps, est.n_paths, est.value]],
    )
    print(f"{payoff.kind.value} value {est.value:.8g}")
    return 0


def cmd_martingale(args) -> int:
    spec, curve = _load_inputs(args)
    config = _sim_config(args, args.horizon)
    lhs, rhs, rel_gap = martingale_check(
        spec, config, curve, args.horizon, args.tenor, threads=args.threads
    )
    reports.write_rows(
        args.out,
        ["horizon", "tenor", "scheme", "n_steps", "n_paths",
         "simulated", "curve_implied", "rel_gap"],
        [[args.horizon, args.tenor, config.scheme.value, config.n_steps,
          config.n_paths, lhs, rhs, rel_gap]],
    )
    print(f"martingale gap {rel_gap:.3e}")
    return 0


_CALIB_KEYS = {
    "population": int, "generations": int, "tournament": int,
    "crossover": float, "mutation_scale": float, "seed": int,
    "max_iters": int, "damping": float, "grad_tol": float,
    "step_tol": float, "fd_step": float,
    "scheme": str, "steps_per_year": int, "paths": int, "skip": int,
    "lower": str, "upper": str,
}


def _read_calib_settings(path, threads: int) -> CalibSettings:
    """Key-value settings file: `key = value` lines, `#` comments."""
    raw = {}
    if path is not None:
        try:
            with open(path) as f:
                lines = f.readlines()
        except OSError as exc:
            raise InputError(f"settings file {path}: {exc}")
        for lineno, line in enumerate(lines, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected `key = value`")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _CALIB_KEYS:
                raise InputError(f"{path}:{lineno}: unknown setting {key!r}")
            try:
                raw[key] = _CALIB_KEYS[key](value.strip())
            except ValueError:
                raise InputError(f"{path}:{lineno}: bad value for {key!r}")
    lower, upper = default_bounds()
    for name, default in (("lower", lower), ("upper", upper)):
        if name in raw:
            vals = np.array([float(v) for v in raw[name].split(",")])
            if vals.size != default.size:
                raise InputError(f"{name} needs {default.size} comma-separated values")
            raw[name] = vals
    ga = GASettings(**{k: raw[k] for k in
                       ("population", "generations", "tournament", "crossover",
                        "mutation_scale", "seed") if k in raw})
    lm = LMSettings(**{k: raw[k] for k in
                       ("max_iters", "damping", "grad_tol", "step_tol", "fd_step")
                       if k in raw})
    return CalibSettings(
        lower=raw.get("lower", lower),
        upper=raw.get("upper", upper),
        ga=ga,
        lm=lm,
        scheme=_parse_scheme(raw.get("scheme", "nv")),
        steps_per_year=raw.get("steps_per_year", 12),
        n_paths=raw.get("paths", 2048),
        skip=raw.get("skip", 1),
        threads=threads,
    )


def cmd_calibrate(args) -> int:
    spec, curve = _load_inputs(args)
    try:
        target = read_surface_csv(args.surface)
    except (OSError, ValueError) as exc:
        raise InputError(f"surface file {args.surface}: {exc}")
    settings = _read_calib_settings(args.settings, args.threads)
    fitted, report = calibrate(target, curve, spec, settings)
    reports.write_rows(
        args.out,
        ["cell", "maturity", "strike", "market", "model", "residual"],
        report.rows(),
    )
    if args.out_model:
        save_model_file(args.out_model, fitted)
    print(f"rmse={report.rmse:.6e} cells={target.n_cells} "
          f"evaluations={report.n_evaluations} wall_seconds={report.wall_seconds:.1f}")
    if args.plot:
        reports.plot_surface_fit(report, reports.figure_path(args.out))
    return 0


def cmd_budget(args) -> int:
    n, k = plan_budget(args.eps, args.order, args.c_disc, args.c_int)
    print(f"n={n} K={k}")
    if args.out:
        reports.write_rows(
            args.out,
            ["order", "eps", "c_disc", "c_int", "n_steps_per_year", "n_paths"],
            [[args.order, args.eps, args.c_disc, args.c_int, n, k]],
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjmsplit",
        description="Forward-curve SPDE simulation, pricing, and calibration "
                    "via high-order splitting schemes and quasi-Monte Carlo.",
    )
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads; results are thread-count independent")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="ensemble-mean terminal curve")
    _add_sim_flags(p)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--plot", action="store_true", help="render a PNG next to the CSV")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("converge", help="scheme ladder against a fine reference")
    _add_sim_flags(p, scheme="swss", paths=2 ** 14)
    p.add_argument("--ns", default="4,8,16,32,64",
                   help="comma-separated steps-per-year ladder")
    p.add_argument("--ref-n", type=int, default=256,
                   help="steps per year of the reference run")
    p.add_argument("--timings", action="store_true",
                   help="append a wall-clock seconds column (breaks byte-identity)")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the CSV")
    p.set_defaults(fn=cmd_converge)

    p = sub.add_parser("price", help="one contract, one CSV row")
    _add_sim_flags(p)
    p.add_argument("--payoff", default="zcb",
                   choices=[k.value for k in PayoffKind])
    p.add_argument("--maturity", type=float, default=1.0)
    p.add_argument("--tenor", type=float, default=0.25)
    p.add_argument("--strike", type=float, default=0.0)
    p.add_argument("--payments", type=int, default=1)
    p.set_defaults(fn=cmd_price)

    p = sub.add_parser("martingale", help="bond expected-value diagnostic")
    _add_sim_flags(p)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--tenor", type=float, default=0.25)
    p.set_defaults(fn=cmd_martingale)

    p = sub.add_parser("calibrate", help="fit 13 parameters to a caplet surface")
    p.add_argument("--model", required=True,
                   help="template model TOML (OU parameters and benchmarks)")
    p.add_argument("--curve", required=True, help="initial forward curve CSV")
    p.add_argument("--surface", required=True, help="target caplet surface CSV")
    p.add_argument("--settings", default=None,
                   help="key = value settings file (GA/LM/simulation)")
    p.add_argument("--out", required=True, help="fit report CSV path")
    p.add_argument("--out-model", default=None,
                   help="write the fitted model TOML here")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the CSV")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("budget", help="(n, K) meeting an accuracy target")
    p.add_argument("--order", type=float, required=True, help="weak order s")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--c-disc", type=float, required=True,
                   help="discretization error constant")
    p.add_argument("--c-int", type=float, required=True,
                   help="integration error constant")
    p.add_argument("--out", default=None, help="optional CSV output")
    p.set_defaults(fn=cmd_budget)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
