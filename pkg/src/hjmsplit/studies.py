"""Convergence and stability studies: scheme ladders, extrapolation, QMC vs MC.

These harnesses drive the ensemble simulator over ladders of step counts or
path counts and fit log-log slopes, producing the rows behind the `converge`
CLI command and the acceptance checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import StateBatch, integral_weights, make_grid, simulate_ensemble
from .model import VolSpec
from .pricing import Payoff, _initial_grid_values, _path_values, _payoff_on_batch
from .qmc import PointSet, generate
from .splitting import Scheme, SimConfig, extrapolate

__all__ = [
    "smooth_payoff",
    "estimate_functional",
    "fit_slope",
    "ConvergenceRow",
    "convergence_study",
    "richardson_errors",
    "qmc_vs_mc_study",
    "moment_stability",
]


def smooth_payoff(batch: StateBatch) -> np.ndarray:
    """Smooth cylinder functional exp(-int_0^1 h) * cos(v) of terminal states."""
    w = integral_weights(batch.dx, batch.h.shape[1], 1.0)
    return np.exp(-(batch.h @ w)) * np.cos(batch.v)


def estimate_functional(
    spec: VolSpec,
    config: SimConfig,
    initial,
    evaluate=smooth_payoff,
    reach: float = 1.0,
    threads: int = 1,
) -> float:
    """Ensemble average of a terminal-state functional under the config."""
    dx, n_nodes = make_grid(config, spec, reach)
    h0 = _initial_grid_values(initial, dx, n_nodes)
    uniforms = generate(config.point_set(spec.d))
    vals = _path_values(spec, config, h0, uniforms, evaluate, threads)
    return float(np.sum(vals) / vals.size)


def fit_slope(ns, errors) -> float:
    """Least-squares slope of log(error) against log(n); zero errors are dropped."""
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(ns[keep]), np.log(errors[keep]), 1)[0])


@dataclass(frozen=True)
class ConvergenceRow:
    scheme: str
    n_steps: int
    n_paths: int
    estimate: float
    reference: float
    abs_error: float
    seconds: float


def convergence_study(
    spec: VolSpec,
    initial,
    schemes: tuple[Scheme, ...] = (Scheme.LT_FWD, Scheme.LT_BWD, Scheme.NV, Scheme.SWSS),
    ns: tuple[int, ...] = (4, 8, 16, 32),
    n_ref: int = 256,
    n_paths: int = 2 ** 14,
    horizon: float = 1.0,
    kind: str = "sobol",
    skip: int = 1,
    evaluate=smooth_payoff,
    reach: float = 1.0,
    threads: int = 1,
    timings: bool = False,
) -> tuple[list[ConvergenceRow], dict[str, float]]:
    """Scheme ladder against a fine-step reference; returns rows and fitted slopes.

    The reference is the SWSS estimate at n_ref steps per year on the same
    point set family.
    """
    import time

    def run(scheme: Scheme, n: int) -> tuple[float, float]:
        cfg = SimConfig(horizon=horizon, steps_per_year=n, scheme=scheme,
                        kind=kind, n_paths=n_paths, skip=skip)
        t0 = time.perf_counter()
        est = estimate_functional(spec, cfg, initial, evaluate, reach, threads)
        return est, time.perf_counter() - t0

    reference, _ = run(Scheme.SWSS, n_ref)
    rows: list[ConvergenceRow] = []
    slopes: dict[str, float] = {}
    for scheme in schemes:
        errs = []
        for n in ns:
            est, secs = run(scheme, n)
            err = abs(est - reference)
            rows.append(ConvergenceRow(scheme.value, n, n_paths, est, reference,
                                       err, secs if timings else 0.0))
            errs.append(err)
        slopes[scheme.value] = fit_slope(ns, errs)
    return rows, slopes


def richardson_errors(rows: list[ConvergenceRow], scheme: Scheme = Scheme.SWSS,
                      order_step: int = 2):
    """Extrapolated estimates from consecutive ladder entries of one scheme.

    Returns (ns_coarse, extrapolated_errors) against the rows' reference.
    """
    sel = sorted((r for r in rows if r.scheme == scheme.value), key=lambda r: r.n_steps)
    ns, errs = [], []
    for a, b in zip(sel, sel[1:]):
        if b.n_steps != 2 * a.n_steps:
            continue
        ex = extrapolate(a.estimate, b.estimate, order_step)
        ns.append(a.n_steps)
        errs.append(abs(ex - a.reference))
    return ns, errs


def qmc_vs_mc_study(
    spec: VolSpec,
    initial,
    payoff: Payoff,
    ks: tuple[int, ...] = tuple(2 ** m for m in range(9, 15)),
    steps_per_year: int = 12,
    scheme: Scheme = Scheme.SWSS,
    k_ref: int = 2 ** 16,
    mc_replications: int = 32,
    threads: int = 1,
):
    """Integration-error decay of Sobol vs pseudo-random paths at fixed bias.

    Both estimators share the step count, so the reference (a large Sobol run)
    isolates the integration error.  Returns (ks, sobol_errors, mc_rmse).
    """
    dx, n_nodes = None, None

    def run(kind: str, k: int, seed_or_skip: int) -> float:
        cfg = SimConfig(horizon=payoff.maturity, steps_per_year=steps_per_year,
                        scheme=scheme, kind=kind, n_paths=k, skip=seed_or_skip)
        nonlocal dx, n_nodes
        dx, n_nodes = make_grid(cfg, spec, payoff.reach)
        h0 = _initial_grid_values(initial, dx, n_nodes)
        uniforms = generate(cfg.point_set(spec.d))
        vals = _path_values(spec, cfg, h0, uniforms,
                            lambda b: _payoff_on_batch(payoff, b), threads)
        return float(np.sum(vals) / vals.size)

    reference = run("sobol", k_ref, 1)
    sobol_err = np.array([abs(run("sobol", k, 1) - reference) for k in ks])
    mc_rmse = []
    for k in ks:
        sq = [(run("pseudo", k, seed) - reference) ** 2 for seed in range(mc_replications)]
        mc_rmse.append(float(np.sqrt(np.mean(sq))))
    return list(ks), sobol_err.tolist(), mc_rmse, reference


def moment_stability(
    spec: VolSpec,
    initial,
    beta: float = 0.5,
    horizon: float = 1.0,
    ns: tuple[int, ...] = (4, 8, 16, 32, 64),
    scheme: Scheme = Scheme.SWSS,
    n_paths: int = 2 ** 12,
    threads: int = 1,
):
    """Empirical mean of cosh(beta * ||state_T||) across step counts.

    The order-0 state norm is sqrt(h(0)^2 + v^2); the initial weight
    cosh(beta * ||state_0||) is returned for forming the stability constant.
    """

    def weight(batch: StateBatch) -> np.ndarray:
        return np.cosh(beta * np.sqrt(batch.h[:, 0] ** 2 + batch.v**2))

    means = []
    for n in ns:
        cfg = SimConfig(horizon=horizon, steps_per_year=n, scheme=scheme,
                        kind="sobol", n_paths=n_paths, skip=1)
        means.append(estimate_functional(spec, cfg, initial, weight, 1.0, threads))
    xs = np.array([0.0])
    h0 = initial(xs) if callable(initial) else np.array([initial.values[0]])
    initial_weight = float(np.cosh(beta * np.sqrt(float(h0[0]) ** 2)))
    return list(ns), means, initial_weight
