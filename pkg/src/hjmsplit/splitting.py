"""Split flows and weak approximation schemes on a single model state.

Composition convention: a semigroup product P^a P^b f corresponds to applying
flow b to the state first, then flow a.  Misreading this silently degrades
the order of the composed schemes, so all scheme definitions below funnel
through `_apply_chain`, which takes flows listed in operator order and
applies them right to left.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .curve import ModelState, integrate, shift_decay_flow
from .model import VolSpec, g_scalar, hjm_drift, lambda_values, stratonovich_drift
from .qmc import DimensionBudget, PointSet, inverse_normal_cdf

__all__ = [
    "Scheme",
    "SimConfig",
    "drift_flow",
    "diffusion_flow",
    "step",
    "simulate_path",
    "extrapolate",
]


class Scheme(str, enum.Enum):
    EULER_MARUYAMA = "EULER_MARUYAMA"
    LT_FWD = "LT_FWD"
    LT_BWD = "LT_BWD"
    NV = "NV"
    SWSS = "SWSS"

    @property
    def weak_order(self) -> int:
        return 2 if self in (Scheme.NV, Scheme.SWSS) else 1


@dataclass(frozen=True)
class SimConfig:
    """Time discretization and point-set configuration of a simulation."""

    horizon: float
    steps_per_year: int
    scheme: Scheme = Scheme.SWSS
    kind: str = "sobol"
    n_paths: int = 2048
    skip: int = 1
    swss_randomized: bool = False  # randomized ordering, consumes 1 extra coordinate

    def __post_init__(self):
        if self.horizon <= 0 or self.steps_per_year < 1:
            raise ValueError("horizon must be positive, steps_per_year >= 1")
        n = self.horizon * self.steps_per_year
        if abs(n - round(n)) > 1e-9:
            raise ValueError("horizon must be a whole number of time steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon * self.steps_per_year))

    @property
    def dt(self) -> float:
        return 1.0 / self.steps_per_year

    def budget(self, d: int) -> DimensionBudget:
        name = self.scheme.value
        if self.scheme is Scheme.SWSS and self.swss_randomized:
            name = "SWSS_RANDOMIZED"
        return DimensionBudget(scheme=name, n_steps=self.n_steps, d=d)

    def point_set(self, d: int) -> PointSet:
        return PointSet(kind=self.kind, n_paths=self.n_paths,
                        dim=self.budget(d).dim, skip=self.skip)


def curve_spacing(config: SimConfig) -> float:
    """Grid spacing aligned with the scheme's shifts (half steps for NV)."""
    dt = config.dt
    return 0.5 * dt if config.scheme is Scheme.NV else dt


def drift_flow(spec: VolSpec, state: ModelState, dt: float) -> ModelState:
    """One classical RK4 step of dh/dt = V0(h, v) over [0, dt]; v, z untouched."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        return state

    def f(vals: np.ndarray) -> np.ndarray:
        s = ModelState(curve=replace(state.curve, values=vals), v=state.v, z=state.z)
        return stratonovich_drift(spec, s).curve_component

    y0 = state.curve.values
    k1 = f(y0)
    k2 = f(y0 + 0.5 * dt * k1)
    k3 = f(y0 + 0.5 * dt * k2)
    k4 = f(y0 + dt * k3)
    y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return ModelState(curve=replace(state.curve, values=y1), v=state.v, z=state.z)


def diffusion_flow(spec: VolSpec, j: int, state: ModelState, w: float) -> ModelState:
    """Flow of the j-th driving field evaluated at signed time w (one RK4 step).

    Solves dh/ds = g_j(h, v) lam_j, dv/ds = gamma_j from s=0 to s=w.
    """
    if not math.isfinite(w):
        raise ValueError("Brownian increment must be finite")
    gamma = float(spec.ou_loadings[j])
    lam = lambda_values(spec, state.curve.grid)[j]
    cj = float(spec.scalings[j])
    tj = float(spec.benchmarks[j])

    def g(vals: np.ndarray, v: float) -> float:
        curve = replace(state.curve, values=vals)
        return float(np.tanh(cj * np.exp(v) * integrate(curve, 0.0, tj)))

    y0, v0 = state.curve.values, state.v
    g1 = g(y0, v0)
    g2 = g(y0 + 0.5 * w * g1 * lam, v0 + 0.5 * w * gamma)
    g3 = g(y0 + 0.5 * w * g2 * lam, v0 + 0.5 * w * gamma)
    g4 = g(y0 + w * g3 * lam, v0 + w * gamma)
    y1 = y0 + (w / 6.0) * (g1 + 2.0 * g2 + 2.0 * g3 + g4) * lam
    return ModelState(curve=replace(state.curve, values=y1), v=v0 + w * gamma, z=state.z)


def _apply_chain(state: ModelState, flows) -> ModelState:
    """Apply flows listed in operator (semigroup) order: last in the list acts first."""
    for flow in reversed(list(flows)):
        state = flow(state)
    return state


def _inner_flows(spec: VolSpec, dws: np.ndarray, dt: float):
    """Operator-ordered inner flows [drift, diff_1, ..., diff_d]."""
    flows = [lambda s: drift_flow(spec, s, dt)]
    for j in range(spec.d):
        flows.append(lambda s, j=j: diffusion_flow(spec, j, s, float(dws[j])))
    return flows


def _em_step(spec: VolSpec, state: ModelState, dws: np.ndarray, dt: float) -> ModelState:
    """Exponential Euler-Maruyama: Ito drift and noise added, then exact shift."""
    lam_grid = lambda_values(spec, state.curve.grid)
    vals = state.curve.values + dt * hjm_drift(spec, state)
    v = state.v
    for j in range(spec.d):
        vals = vals + g_scalar(spec, j, state) * lam_grid[j] * float(dws[j])
        v += float(spec.ou_loadings[j]) * float(dws[j])
    mid = ModelState(curve=replace(state.curve, values=vals), v=v, z=state.z)
    return shift_decay_flow(mid, dt, spec.ou_alpha)


def step(
    spec: VolSpec,
    config: SimConfig,
    state: ModelState,
    gaussians: np.ndarray,
    aux_uniform: float | None = None,
) -> ModelState:
    """One time step of the configured scheme.

    `gaussians` are the d Brownian increments of the step; `aux_uniform` is
    required only by NV, whose forward/backward inner sweep is a pathwise
    Bernoulli realization of the averaged scheme.
    """
    dws = np.asarray(gaussians, dtype=float)
    if dws.shape != (spec.d,):
        raise ValueError(f"expected {spec.d} Brownian increments, got {dws.shape}")
    dt = config.dt
    shift = lambda s, h: shift_decay_flow(s, h, spec.ou_alpha)
    inner = _inner_flows(spec, dws, dt)

    if config.scheme is Scheme.EULER_MARUYAMA:
        return _em_step(spec, state, dws, dt)
    if config.scheme is Scheme.LT_FWD:
        return _apply_chain(state, [lambda s: shift(s, dt)] + inner)
    if config.scheme is Scheme.LT_BWD:
        return _apply_chain(state, list(reversed(inner)) + [lambda s: shift(s, dt)])
    if config.scheme is Scheme.NV:
        if aux_uniform is None:
            raise ValueError("NV requires the auxiliary Bernoulli coordinate")
        sweep = inner if aux_uniform < 0.5 else list(reversed(inner))
        half = [lambda s: shift(s, 0.5 * dt)]
        return _apply_chain(state, half + sweep + half)
    raise ValueError(f"step() does not apply to scheme {config.scheme}; "
                     "SWSS steps both Lie-Trotter chains (see simulate_path)")


def _gaussian_layout(config: SimConfig, d: int, uniforms: np.ndarray):
    """Split a path's uniforms into per-step increments and auxiliaries."""
    n, dt = config.n_steps, config.dt
    if config.scheme is Scheme.NV:
        blocks = uniforms.reshape(n, d + 1)
        return inverse_normal_cdf(blocks[:, :d]) * math.sqrt(dt), blocks[:, d]
    if config.scheme is Scheme.SWSS and config.swss_randomized:
        return inverse_normal_cdf(uniforms[1:].reshape(n, d)) * math.sqrt(dt), uniforms[0]
    return inverse_normal_cdf(uniforms.reshape(n, d)) * math.sqrt(dt), None


def simulate_path(
    spec: VolSpec,
    config: SimConfig,
    initial: ModelState,
    path_uniforms: np.ndarray,
) -> list[tuple[float, ModelState]]:
    """Run one path; returns weighted terminal states.

    All schemes yield a single state of weight 1 except deterministic SWSS,
    which returns the forward- and backward-ordered Lie-Trotter chains run on
    the same increments with weights 1/2 each (the average is taken at the
    payoff level).
    """
    uniforms = np.asarray(path_uniforms, dtype=float).reshape(-1)
    expected = config.budget(spec.d).dim
    if uniforms.size != expected:
        raise ValueError(f"path needs {expected} uniforms, got {uniforms.size}")
    dws, aux = _gaussian_layout(config, spec.d, uniforms)

    if config.scheme is Scheme.SWSS:
        orderings: list[tuple[float, Scheme]]
        if config.swss_randomized:
            chosen = Scheme.LT_FWD if aux < 0.5 else Scheme.LT_BWD
            orderings = [(1.0, chosen)]
        else:
            orderings = [(0.5, Scheme.LT_FWD), (0.5, Scheme.LT_BWD)]
        out = []
        for weight, scheme in orderings:
            sub = replace(config, scheme=scheme, swss_randomized=False)
            s = initial
            for k in range(config.n_steps):
                s = step(spec, sub, s, dws[k])
            out.append((weight, s))
        return out

    s = initial
    for k in range(config.n_steps):
        a = float(aux[k]) if config.scheme is Scheme.NV else None
        s = step(spec, config, s, dws[k], aux_uniform=a)
    return [(1.0, s)]


def extrapolate(value_n: float, value_2n: float, order_step: int = 2) -> float:
    """Richardson combination removing the leading n^{-order_step} error term."""
    w = 2.0**order_step
    return (w * value_2n - value_n) / (w - 1.0)
