"""Payoff evaluation, expectation estimation, and implied-vol conversion.

Payoffs are discounted by the clamped bank account exp(-Phi(z)): Phi is the
identity on economically sensible paths (z >= -clamp) and smoothly bounded
below by -2*clamp otherwise, which keeps all discounted payoffs bounded by
exp(2*clamp) times the raw payoff.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .curve import ForwardCurve, ModelState, integrate
from .engine import StateBatch, integral_weights, make_grid, simulate_ensemble
from .model import VolSpec
from .qmc import generate
from .splitting import Scheme, SimConfig, curve_spacing

__all__ = [
    "PayoffKind",
    "Payoff",
    "Estimate",
    "clamp_phi",
    "payoff_value",
    "price",
    "martingale_check",
    "black76_price",
    "black_implied_vol",
]

_CHUNK = 4096  # fixed path-block size so results never depend on thread count


class PayoffKind(str, enum.Enum):
    ZCB = "zcb"
    CAPLET = "caplet"
    PAYER_SWAPTION = "payer_swaption"


@dataclass(frozen=True)
class Payoff:
    """Contract descriptor evaluated on the terminal state at the horizon."""

    kind: PayoffKind
    maturity: float  # simulation horizon T in years
    tenor: float = 0.25
    strike: float = 0.0
    payments: int = 1  # swaption only
    clamp: float = 1.0

    def __post_init__(self):
        if self.tenor <= 0 or self.payments < 1 or self.clamp <= 0:
            raise ValueError("tenor and clamp must be positive, payments >= 1")

    @property
    def reach(self) -> float:
        """How far past the horizon the terminal curve is read."""
        if self.kind is PayoffKind.PAYER_SWAPTION:
            return self.payments * self.tenor
        return self.tenor


@dataclass(frozen=True)
class Estimate:
    value: float
    n_paths: int
    scheme: Scheme
    n_steps: int

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("estimate must be finite")


def clamp_phi(z, clamp: float = 1.0):
    """Monotone C^1 log-discount clamp: identity for z >= -clamp, >= -2*clamp."""
    if clamp <= 0:
        raise ValueError("clamp must be positive")
    z = np.asarray(z, dtype=float)
    excess = np.maximum(-z - clamp, 0.0)
    out = np.where(z >= -clamp, z, -clamp - clamp * np.tanh(excess / clamp))
    return out if out.ndim else float(out)


def _payoff_on_batch(p: Payoff, batch: StateBatch) -> np.ndarray:
    """Vectorized discounted payoff over a batch of terminal states."""
    n_nodes = batch.h.shape[1]
    if p.reach > batch.dx * (n_nodes - 1) * (1 + 1e-12):
        raise ValueError(f"terminal curve too short for payoff reach {p.reach}")
    disc = np.exp(-clamp_phi(batch.z, p.clamp))
    if p.kind is PayoffKind.ZCB:
        y = batch.h @ integral_weights(batch.dx, n_nodes, p.tenor)
        return disc * np.exp(-y)
    if p.kind is PayoffKind.CAPLET:
        y = batch.h @ integral_weights(batch.dx, n_nodes, p.tenor)
        libor = (np.exp(y) - 1.0) / p.tenor
        return disc * np.maximum(libor - p.strike, 0.0)
    # payer swaption: [sum_i P_i * (exp(int_{(i-1)d}^{id} h) - (1+dK))]_+
    cuts = np.stack(
        [integral_weights(batch.dx, n_nodes, i * p.tenor) for i in range(p.payments + 1)],
        axis=1,
    )  # (N, I+1)
    y = batch.h @ cuts  # int_0^{i*tenor} h
    legs = np.exp(-y[:, 1:]) * (np.exp(y[:, 1:] - y[:, :-1]) - (1.0 + p.tenor * p.strike))
    return disc * np.maximum(legs.sum(axis=1), 0.0)


def payoff_value(p: Payoff, terminal: ModelState) -> float:
    """Discounted payoff of a single terminal state."""
    batch = StateBatch(
        dx=terminal.curve.dx,
        h=terminal.curve.values[None, :],
        v=np.array([terminal.v]),
        z=np.array([terminal.z]),
    )
    return float(_payoff_on_batch(p, batch)[0])


def _initial_grid_values(initial, dx: float, n_nodes: int) -> np.ndarray:
    """Initial curve on the simulation grid: callable or resampled ForwardCurve."""
    xs = dx * np.arange(n_nodes)
    if callable(initial):
        return np.asarray(initial(xs), dtype=float)
    if initial.x_max < xs[-1] * (1 - 1e-12):
        raise ValueError(
            f"initial curve reaches {initial.x_max}y but the simulation needs {xs[-1]}y"
        )
    return np.interp(xs, initial.grid, initial.values)


def _path_values(
    spec: VolSpec,
    config: SimConfig,
    h0: np.ndarray,
    uniforms: np.ndarray,
    evaluate,
    threads: int = 1,
) -> np.ndarray:
    """Per-path weighted payoff values, chunked deterministically over paths."""
    k = uniforms.shape[0]
    out = np.empty(k)

    def run(lo: int, hi: int) -> None:
        res = simulate_ensemble(spec, config, h0, uniforms[lo:hi])
        vals = np.zeros(hi - lo)
        for w, batch in zip(res.weights, res.terminals):
            vals += w * evaluate(batch)
        out[lo:hi] = vals

    blocks = [(lo, min(lo + _CHUNK, k)) for lo in range(0, k, _CHUNK)]
    if threads <= 1 or len(blocks) == 1:
        for lo, hi in blocks:
            run(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: run(*b), blocks))
    return out


def price(
    spec: VolSpec,
    config: SimConfig,
    initial,
    p: Payoff,
    threads: int = 1,
) -> Estimate:
    """QMC estimate of the discounted payoff expectation at the payoff horizon.

    `initial` is a ForwardCurve (resampled onto the scheme grid) or a callable
    x -> rate evaluated exactly on the grid.
    """
    if abs(p.maturity - config.horizon) > 1e-12:
        config = SimConfig(
            horizon=p.maturity,
            steps_per_year=config.steps_per_year,
            scheme=config.scheme,
            kind=config.kind,
            n_paths=config.n_paths,
            skip=config.skip,
            swss_randomized=config.swss_randomized,
        )
    dx, n_nodes = make_grid(config, spec, p.reach)
    h0 = _initial_grid_values(initial, dx, n_nodes)
    uniforms = generate(config.point_set(spec.d))
    vals = _path_values(
        spec, config, h0, uniforms, lambda b: _payoff_on_batch(p, b), threads
    )
    return Estimate(
        value=float(np.sum(vals) / vals.size),
        n_paths=config.n_paths,
        scheme=config.scheme,
        n_steps=config.n_steps,
    )


def martingale_check(
    spec: VolSpec,
    config: SimConfig,
    initial,
    horizon: float,
    tenor: float,
    threads: int = 1,
) -> tuple[float, float, float]:
    """Bond expected-value diagnostic.

    lhs = simulated price of a zero coupon bond of the given tenor at the
    horizon, rhs = exp(-int_0^{horizon+tenor} h0); returns (lhs, rhs, rel_gap).
    """
    p = Payoff(kind=PayoffKind.ZCB, maturity=horizon, tenor=tenor)
    est = price(spec, config, initial, p, threads=threads)
    if callable(initial):
        # half spacing under NV so the zero-vol gap closes to rounding
        dx = curve_spacing(replace(config, horizon=horizon))
        n = int(round((horizon + tenor) / dx)) + 1
        curve0 = ForwardCurve(dx=dx, values=np.asarray(initial(dx * np.arange(n))))
    else:
        curve0 = initial
    rhs = math.exp(-integrate(curve0, 0.0, horizon + tenor))
    rel_gap = abs(est.value - rhs) / rhs
    return est.value, rhs, rel_gap


# --- Black-76 quoting --------------------------------------------------------


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def black76_price(forward: float, strike: float, vol: float, expiry: float,
                  annuity: float = 1.0) -> float:
    """Black-76 call value annuity * (F N(d1) - K N(d2))."""
    if forward <= 0 or strike <= 0 or expiry <= 0:
        raise ValueError("forward, strike and expiry must be positive")
    if vol <= 0:
        return annuity * max(forward - strike, 0.0)
    s = vol * math.sqrt(expiry)
    d1 = (math.log(forward / strike) + 0.5 * s * s) / s
    return annuity * (forward * _norm_cdf(d1) - strike * _norm_cdf(d1 - s))


class ImpliedVolError(ValueError):
    """Price outside the no-arbitrage bounds of the Black-76 formula."""


def black_implied_vol(price_value: float, forward: float, strike: float,
                      expiry: float, annuity: float = 1.0,
                      tol: float = 1e-10) -> float:
    """Unique Black-76 vol matching the price, by bracketing and bisection."""
    lo_price = annuity * max(forward - strike, 0.0)
    hi_price = annuity * forward
    if price_value < lo_price - tol or price_value > hi_price:
        raise ImpliedVolError(
            f"price {price_value} outside Black-76 bounds [{lo_price}, {hi_price}]"
        )
    if price_value <= lo_price + tol * max(1.0, lo_price) and strike != forward:
        return 0.0
    lo, hi = 0.0, 1.0
    while black76_price(forward, strike, hi, expiry, annuity) < price_value:
        hi *= 2.0
        if hi > 1e4:
            raise ImpliedVolError("implied volatility bracket exploded")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        diff = black76_price(forward, strike, mid, expiry, annuity) - price_value
        if abs(diff) < tol:
            return mid
        if diff > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
