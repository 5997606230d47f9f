"""Caplet-surface calibration: genetic global search refined by Levenberg-Marquardt.

The 13 free parameters are the volatility polynomial coefficients (3 per
benchmark), the common exponential decay, and the 3 tanh scalings; the OU
parameters and benchmark maturities stay fixed.  All objective evaluations
share one Sobol point set (common random numbers), so the residual vector is
a smooth deterministic function of the parameters and finite-difference
Jacobians are stable at small path counts.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import integral_weights, make_grid, simulate_ensemble
from .model import VolSpec
from .pricing import (
    ImpliedVolError,
    Payoff,
    PayoffKind,
    _initial_grid_values,
    _payoff_on_batch,
    black_implied_vol,
)
from .qmc import generate
from .splitting import Scheme, SimConfig

__all__ = [
    "N_PARAMS",
    "pack_params",
    "unpack_params",
    "CalibTarget",
    "CapletQuoter",
    "GASettings",
    "LMSettings",
    "CalibSettings",
    "FitReport",
    "objective_residuals",
    "genetic_search",
    "levenberg_marquardt",
    "calibrate",
    "synthetic_target",
    "read_surface_csv",
    "write_surface_csv",
]

N_PARAMS = 13

# residual reported for a cell whose implied-vol inversion fails (flagged)
_PENALTY = 10.0


def pack_params(spec: VolSpec) -> np.ndarray:
    """Free parameters as a flat vector: 9 poly coefficients, decay, 3 scalings."""
    if spec.d != 3 or spec.poly_coeffs.shape[1] != 3:
        raise ValueError("calibration expects 3 benchmarks with quadratic polynomials")
    return np.concatenate(
        [spec.poly_coeffs.ravel(), [spec.decay], spec.scalings]
    )


def unpack_params(x: np.ndarray, template: VolSpec) -> VolSpec:
    """Inverse of pack_params; OU parameters and benchmarks come from template."""
    x = np.asarray(x, dtype=float)
    if x.shape != (N_PARAMS,):
        raise ValueError(f"expected {N_PARAMS} parameters, got shape {x.shape}")
    return dataclasses.replace(
        template,
        poly_coeffs=x[:9].reshape(3, 3),
        decay=float(x[9]),
        scalings=x[10:13],
    )


@dataclass(frozen=True)
class CalibTarget:
    """Caplet quote cells: parallel arrays plus a common tenor and quote kind."""

    maturities: np.ndarray
    strikes: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    tenor: float = 0.25
    quote_kind: str = "vol"  # "vol" (Black implied) or "price"

    def __post_init__(self):
        for name in ("maturities", "strikes", "values", "weights"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.maturities.size
        if n < 1:
            raise ValueError("target needs at least one cell")
        if not (self.strikes.size == self.values.size == self.weights.size == n):
            raise ValueError("cell arrays must have equal length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.quote_kind not in ("vol", "price"):
            raise ValueError(f"unknown quote kind {self.quote_kind!r}")

    @property
    def n_cells(self) -> int:
        return self.maturities.size


class CapletQuoter:
    """Prices every target cell from one simulation with per-maturity snapshots.

    The Sobol point set is drawn once at construction; repeated quote() calls
    with different parameters reuse it, which keeps the calibration objective
    deterministic and smooth.
    """

    def __init__(
        self,
        target: CalibTarget,
        initial,
        template: VolSpec,
        scheme: Scheme = Scheme.NV,
        steps_per_year: int = 12,
        n_paths: int = 2048,
        skip: int = 1,
        threads: int = 1,
    ):
        self.target = target
        self.threads = threads
        horizon = float(np.max(target.maturities))
        self.config = SimConfig(
            horizon=horizon,
            steps_per_year=steps_per_year,
            scheme=scheme,
            kind="sobol",
            n_paths=n_paths,
            skip=skip,
        )
        dt = self.config.dt
        snaps = np.unique(target.maturities)
        off_grid = np.abs(snaps / dt - np.round(snaps / dt)) > 1e-9
        if np.any(off_grid):
            raise ValueError(f"maturities {snaps[off_grid]} are not on the step grid")
        self.snapshot_times = tuple(float(t) for t in snaps)
        dx, n_nodes = make_grid(self.config, template, reach=target.tenor)
        self.h0 = _initial_grid_values(initial, dx, n_nodes)
        self.uniforms = generate(self.config.point_set(template.d))
        # forward LIBOR and annuity per maturity, off the initial curve, used
        # on both sides of price <-> vol conversion
        self._fwd = {}
        self._annuity = {}
        for t in self.snapshot_times:
            da = self.h0 @ integral_weights(dx, n_nodes, t)
            db = self.h0 @ integral_weights(dx, n_nodes, t + target.tenor)
            self._fwd[t] = (np.exp(db - da) - 1.0) / target.tenor
            self._annuity[t] = target.tenor * np.exp(-db)

    def prices(self, spec: VolSpec) -> np.ndarray:
        """Discounted caplet price per target cell."""
        res = simulate_ensemble(
            spec,
            self.config,
            self.h0,
            self.uniforms,
            snapshot_times=self.snapshot_times,
        )
        out = np.empty(self.target.n_cells)
        for t in self.snapshot_times:
            sel = np.flatnonzero(self.target.maturities == t)
            batches = res.snapshots[t]
            for i in sel:
                p = Payoff(
                    kind=PayoffKind.CAPLET,
                    maturity=t,
                    tenor=self.target.tenor,
                    strike=float(self.target.strikes[i]),
                )
                acc = 0.0
                for w, batch in zip(res.weights, batches):
                    vals = _payoff_on_batch(p, batch)
                    acc += w * float(np.sum(vals) / vals.size)
                out[i] = acc
        return out

    def quotes(self, spec: VolSpec) -> tuple[np.ndarray, np.ndarray]:
        """Model quote per cell plus a boolean flag for failed vol inversions."""
        prices = self.prices(spec)
        flags = np.zeros(self.target.n_cells, dtype=bool)
        if self.target.quote_kind == "price":
            return prices, flags
        vols = np.empty(self.target.n_cells)
        for i in range(self.target.n_cells):
            t = float(self.target.maturities[i])
            try:
                vols[i] = black_implied_vol(
                    prices[i],
                    forward=self._fwd[t],
                    strike=float(self.target.strikes[i]),
                    expiry=t,
                    annuity=self._annuity[t],
                )
            except ImpliedVolError:
                vols[i] = np.nan
                flags[i] = True
        return vols, flags


def objective_residuals(
    x: np.ndarray, quoter: CapletQuoter, template: VolSpec
) -> np.ndarray:
    """Weighted residual per cell; failed inversions get a large finite penalty."""
    spec = unpack_params(x, template)
    model, flags = quoter.quotes(spec)
    res = np.where(flags, _PENALTY, model - quoter.target.values)
    return quoter.target.weights * res


@dataclass(frozen=True)
class GASettings:
    population: int = 64
    generations: int = 30
    tournament: int = 4
    crossover: float = 0.7
    mutation_scale: float = 0.1  # Gaussian sigma as a fraction of box width
    seed: int = 0


@dataclass(frozen=True)
class LMSettings:
    max_iters: int = 50
    damping: float = 1e-3
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    fd_step: float = 1e-6


def genetic_search(
    residual_fn,
    lower: np.ndarray,
    upper: np.ndarray,
    settings: GASettings = GASettings(),
    start: np.ndarray | None = None,
) -> np.ndarray:
    """Best member after tournament selection, uniform crossover, Gaussian mutation.

    Elitism of one: the incumbent best survives every generation unchanged.
    Deterministic for a fixed seed.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not np.all(np.isfinite(lower) & np.isfinite(upper)) or np.any(lower > upper):
        raise ValueError("bounds must be finite with lower <= upper")
    rng = np.random.default_rng(settings.seed)
    width = upper - lower
    npop = settings.population
    pop = lower + rng.random((npop, lower.size)) * width
    if start is not None:
        pop[0] = np.clip(start, lower, upper)
    scores = np.array([float(np.sum(residual_fn(m) ** 2)) for m in pop])

    for _ in range(settings.generations):
        elite = int(np.argmin(scores))
        children = [pop[elite].copy()]
        while len(children) < npop:
            picks = rng.integers(0, npop, size=(2, settings.tournament))
            pa = pop[picks[0][np.argmin(scores[picks[0]])]]
            pb = pop[picks[1][np.argmin(scores[picks[1]])]]
            if rng.random() < settings.crossover:
                mask = rng.random(lower.size) < 0.5
                child = np.where(mask, pa, pb)
            else:
                child = pa.copy()
            child = child + rng.normal(0.0, settings.mutation_scale, lower.size) * width
            children.append(np.clip(child, lower, upper))
        pop = np.array(children)
        scores = np.array([float(np.sum(residual_fn(m) ** 2)) for m in pop])
    return pop[int(np.argmin(scores))].copy()


def levenberg_marquardt(
    residual_fn,
    start: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    settings: LMSettings = LMSettings(),
) -> np.ndarray:
    """Damped Gauss-Newton on the residual vector with box projection.

    Forward-difference Jacobian with step 1e-6*(1+|param|); damping multiplied
    by 10 on a rejected step and divided by 10 on acceptance; singular normal
    equations raise the damping instead of aborting.
    """
    x = np.clip(np.asarray(start, dtype=float), lower, upper)
    lam = settings.damping
    r = residual_fn(x)
    cost = float(np.sum(r**2))
    for _ in range(settings.max_iters):
        steps = settings.fd_step * (1.0 + np.abs(x))
        jac = np.empty((r.size, x.size))
        for i in range(x.size):
            xp = x.copy()
            xp[i] = min(x[i] + steps[i], upper[i]) if x[i] < upper[i] else x[i] - steps[i]
            jac[:, i] = (residual_fn(xp) - r) / (xp[i] - x[i])
        grad = jac.T @ r
        if np.max(np.abs(grad)) < settings.grad_tol:
            break
        jtj = jac.T @ jac
        scale = np.diag(np.maximum(np.diag(jtj), 1e-12))
        accepted = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(jtj + lam * scale, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = np.clip(x + step, lower, upper)
            if np.linalg.norm(x_new - x) < settings.step_tol:
                return x
            r_new = residual_fn(x_new)
            cost_new = float(np.sum(r_new**2))
            if cost_new < cost:
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
    return x


@dataclass(frozen=True)
class CalibSettings:
    lower: np.ndarray
    upper: np.ndarray
    ga: GASettings = GASettings()
    lm: LMSettings = LMSettings()
    scheme: Scheme = Scheme.NV
    steps_per_year: int = 12
    n_paths: int = 2048
    skip: int = 1
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.lower.shape != (N_PARAMS,) or self.upper.shape != (N_PARAMS,):
            raise ValueError(f"bounds must have shape ({N_PARAMS},)")


@dataclass
class FitReport:
    """Per-cell fit plus summary statistics of a calibration run."""

    maturities: np.ndarray
    strikes: np.ndarray
    market: np.ndarray
    model: np.ndarray
    residuals: np.ndarray
    flagged: np.ndarray
    rmse: float
    wall_seconds: float
    n_evaluations: int

    def rows(self):
        """(cell id, maturity, strike, market, model, residual) per cell."""
        for i in range(self.maturities.size):
            yield (i, self.maturities[i], self.strikes[i], self.market[i],
                   self.model[i], self.residuals[i])


def default_bounds() -> tuple[np.ndarray, np.ndarray]:
    """Box constraints wide enough for the demo model family."""
    lower = np.concatenate([np.full(9, 0.0), [0.2], np.full(3, 1.0)])
    upper = np.concatenate([np.full(9, 0.08), [4.0], np.full(3, 250.0)])
    return lower, upper


def calibrate(
    target: CalibTarget,
    initial,
    template: VolSpec,
    settings: CalibSettings,
) -> tuple[VolSpec, FitReport]:
    """Genetic search followed by Levenberg-Marquardt from its best point."""
    quoter = CapletQuoter(
        target,
        initial,
        template,
        scheme=settings.scheme,
        steps_per_year=settings.steps_per_year,
        n_paths=settings.n_paths,
        skip=settings.skip,
        threads=settings.threads,
    )
    n_evals = 0

    def residual_fn(x):
        nonlocal n_evals
        n_evals += 1
        return objective_residuals(x, quoter, template)

    t0 = time.perf_counter()
    best = genetic_search(residual_fn, settings.lower, settings.upper, settings.ga)
    fitted = levenberg_marquardt(
        residual_fn, best, settings.lower, settings.upper, settings.lm
    )
    wall = time.perf_counter() - t0

    spec = unpack_params(fitted, template)
    model, flags = quoter.quotes(spec)
    residuals = quoter.target.weights * np.where(flags, _PENALTY, model - target.values)
    rmse = float(np.sqrt(np.sum(residuals**2) / target.n_cells))
    report = FitReport(
        maturities=target.maturities.copy(),
        strikes=target.strikes.copy(),
        market=target.values.copy(),
        model=model,
        residuals=residuals,
        flagged=flags,
        rmse=rmse,
        wall_seconds=wall,
        n_evaluations=n_evals,
    )
    return spec, report


def synthetic_target(
    generator: VolSpec,
    initial,
    maturities=None,
    moneyness=None,
    tenor: float = 0.25,
    quote_kind: str = "vol",
    **quoter_kwargs,
) -> CalibTarget:
    """Surface generated by the model itself: 10 maturity slices x 12 strikes."""
    if maturities is None:
        maturities = 0.25 * np.arange(1, 11)
    if moneyness is None:
        moneyness = np.linspace(0.7, 1.3, 12)
    maturities = np.asarray(maturities, dtype=float)
    moneyness = np.asarray(moneyness, dtype=float)
    mats = np.repeat(maturities, moneyness.size)
    shell = CalibTarget(
        maturities=mats,
        strikes=np.ones_like(mats),
        values=np.zeros_like(mats),
        weights=np.ones_like(mats),
        tenor=tenor,
        quote_kind=quote_kind,
    )
    quoter = CapletQuoter(shell, initial, generator, **quoter_kwargs)
    strikes = np.concatenate([quoter._fwd[float(t)] * moneyness for t in maturities])
    target = CalibTarget(
        maturities=mats,
        strikes=strikes,
        values=np.zeros_like(mats),
        weights=np.ones_like(mats),
        tenor=tenor,
        quote_kind=quote_kind,
    )
    quoter = CapletQuoter(target, initial, generator, **quoter_kwargs)
    values, flags = quoter.quotes(generator)
    if np.any(flags):
        raise ValueError("generator parameters produce uninvertible cells")
    return dataclasses.replace(target, values=values)


_SURFACE_HEADER = ["maturity_years", "tenor_years", "strike", "quote_type", "value"]


def write_surface_csv(path, target: CalibTarget) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_SURFACE_HEADER)
        for i in range(target.n_cells):
            w.writerow([
                repr(float(target.maturities[i])),
                repr(float(target.tenor)),
                repr(float(target.strikes[i])),
                target.quote_kind,
                repr(float(target.values[i])),
            ])


def read_surface_csv(path) -> CalibTarget:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _SURFACE_HEADER:
            raise ValueError(f"expected header {_SURFACE_HEADER}, got {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError("surface file has no cells")
    mats = np.array([float(r[0]) for r in rows])
    tenors = {float(r[1]) for r in rows}
    kinds = {r[3] for r in rows}
    if len(tenors) != 1 or len(kinds) != 1:
        raise ValueError("all cells must share one tenor and one quote type")
    return CalibTarget(
        maturities=mats,
        strikes=np.array([float(r[2]) for r in rows]),
        values=np.array([float(r[4]) for r in rows]),
        weights=np.ones(mats.size),
        tenor=tenors.pop(),
        quote_kind=kinds.pop(),
    )
