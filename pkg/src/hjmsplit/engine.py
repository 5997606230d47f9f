"""Vectorized path ensemble simulator.

Runs all K paths of a scheme simultaneously on arrays h (K, N), v (K,),
z (K,).  The key structural fact: every split field is a linear combination
of 2d fixed grid functions -- the loadings lam_j and the drift shapes
M_j = lam_j * int_0^x lam_j -- with per-path scalar coefficients that depend
on the state only through v and the benchmark integrals I_j = int_0^{t_j} h.
Each step therefore tracks (v, I) through the RK4 stages in scalar space,
accumulates basis coefficients, and touches the full curve array once per
step (plus the shift).  The math is identical to the per-state flows in
`splitting`, up to floating-point association.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curve import ForwardCurve
from .model import VolSpec, lambda_values
from .qmc import generate, inverse_normal_cdf
from .splitting import Scheme, SimConfig, curve_spacing

__all__ = ["StateBatch", "EnsembleResult", "make_grid", "simulate_ensemble"]


@dataclass
class StateBatch:
    """Arrays of per-path states sharing one grid."""

    dx: float
    h: np.ndarray  # (K, N)
    v: np.ndarray  # (K,)
    z: np.ndarray  # (K,)


@dataclass
class EnsembleResult:
    """Weighted terminal chains plus optional snapshots at intermediate steps.

    snapshots[t] is a list with one StateBatch per chain, in the same order
    (and with the same weights) as `terminals`.
    """

    weights: list[float]
    terminals: list[StateBatch]
    snapshots: dict[float, list[StateBatch]]


def integral_weights(dx: float, n_nodes: int, b: float) -> np.ndarray:
    """Weights w with w @ h = int_0^b of the affine interpolant of h."""
    if b < -1e-12 or b > dx * (n_nodes - 1) * (1 + 1e-12):
        raise ValueError(f"integration bound {b} outside the grid")
    w = np.zeros(n_nodes)
    pos = min(b / dx, n_nodes - 1.0)
    k = int(pos)
    w[: k + 1] += dx
    w[0] -= 0.5 * dx
    w[k] -= 0.5 * dx
    frac = (pos - k) * dx
    if frac > 0.0:
        # partial cell [k*dx, b]: trapezoid with the interpolated endpoint
        t = frac / dx
        w[k] += frac * (1.0 - 0.5 * t)
        w[k + 1] += 0.5 * frac * t
    return w


def make_grid(config: SimConfig, spec: VolSpec, reach: float) -> tuple[float, int]:
    """Grid spacing and node count so shifted curves stay exact wherever used.

    The tail filled by flat extrapolation never influences the benchmark
    integrals or payoff integrals when x_max >= horizon + max(reach, t_j).
    """
    dx = curve_spacing(config)
    x_max = config.horizon + max(reach, float(np.max(spec.benchmarks)))
    n = int(round(x_max / dx)) + 1
    return dx, n


class _Precomp:
    """Grid-level constants shared by all chains."""

    def __init__(self, spec: VolSpec, dx: float, n_nodes: int):
        self.spec = spec
        self.dx = dx
        grid = dx * np.arange(n_nodes)
        lam = lambda_values(spec, grid)  # (d, N)
        cum = np.zeros_like(lam)
        np.cumsum(0.5 * dx * (lam[:, 1:] + lam[:, :-1]), axis=1, out=cum[:, 1:])
        self.basis = np.vstack([lam, lam * cum])  # (2d, N): lam rows then M rows
        self.weights = np.stack(
            [integral_weights(dx, n_nodes, float(t)) for t in spec.benchmarks], axis=1
        )  # (N, d)
        self.basis_ints = self.basis @ self.weights  # (2d, d)
        self.lam_ints = self.basis_ints[: spec.d]  # int_0^{t_i} lam_j
        self.m_ints = self.basis_ints[spec.d :]


class _Chain:
    """One scheme chain over the whole path ensemble."""

    def __init__(self, pre: _Precomp, h0: np.ndarray, v0: float, z0: float, k: int):
        self.pre = pre
        d = pre.spec.d
        self.h = np.tile(np.asarray(h0, dtype=float), (k, 1))
        self.v = np.full(k, float(v0))
        self.z = np.full(k, float(z0))
        self.coef = np.zeros((k, 2 * d))
        self.ints = self.h @ pre.weights  # (K, d), tracks pending coefs too

    def flush(self) -> None:
        if np.any(self.coef):
            self.h += self.coef @ self.pre.basis
            self.coef[:] = 0.0

    def batch(self) -> StateBatch:
        self.flush()
        return StateBatch(dx=self.pre.dx, h=self.h.copy(), v=self.v.copy(), z=self.z.copy())

    def shift(self, dt: float, idx=None) -> None:
        """Exact linear flow: bank-account integral, curve shift, OU decay of v."""
        pre = self.pre
        self.flush()
        slots = int(round(dt / pre.dx))
        zw = integral_weights(pre.dx, self.h.shape[1], dt)
        h = self._sel(self.h, idx)
        if idx is None:
            self.z += h @ zw
        else:
            self.z[idx] += h @ zw
        if slots:
            h[:, :-slots] = h[:, slots:]
            h[:, -slots:] = h[:, -1:]
        if idx is None:
            self.v *= np.exp(-pre.spec.ou_alpha * dt)
            self.ints = h @ pre.weights
        else:
            self.h[idx] = h
            self.v[idx] *= np.exp(-pre.spec.ou_alpha * dt)
            self.ints[idx] = h @ pre.weights

    # -- split flows; `idx` restricts to a subset of paths (NV branches) -----

    def _sel(self, arr, idx):
        return arr if idx is None else arr[idx]

    def diffusion(self, j: int, w: np.ndarray, idx=None) -> None:
        """RK4 flow of factor j to stochastic time w (per-path, signed)."""
        spec = self.pre.spec
        cj, tj_gamma = float(spec.scalings[j]), float(spec.ou_loadings[j])
        lam_int = self.pre.lam_ints[j, j]  # int_0^{t_j} lam_j
        v0 = self._sel(self.v, idx)
        i0 = self._sel(self.ints, idx)[:, j]
        e0 = np.exp(v0)
        eh = np.exp(v0 + 0.5 * w * tj_gamma)
        e1 = np.exp(v0 + w * tj_gamma)
        g1 = np.tanh(cj * e0 * i0)
        g2 = np.tanh(cj * eh * (i0 + 0.5 * w * g1 * lam_int))
        g3 = np.tanh(cj * eh * (i0 + 0.5 * w * g2 * lam_int))
        g4 = np.tanh(cj * e1 * (i0 + w * g3 * lam_int))
        delta = (w / 6.0) * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
        if idx is None:
            self.coef[:, j] += delta
            self.ints += delta[:, None] * self.pre.lam_ints[j]
            self.v += w * tj_gamma
        else:
            self.coef[idx, j] += delta
            self.ints[idx] += delta[:, None] * self.pre.lam_ints[j]
            self.v[idx] += w * tj_gamma

    def _drift_coeffs(self, ints: np.ndarray, ev: np.ndarray):
        """Stage coefficients (on M_j and lam_j) of the Stratonovich drift."""
        spec = self.pre.spec
        u = spec.scalings * ev[:, None] * ints
        g = np.tanh(u)
        lam_tj = np.diag(self.pre.lam_ints)
        sech2 = 1.0 - g * g
        corr = sech2 * spec.scalings * ev[:, None] * (g * lam_tj + spec.ou_loadings * ints)
        return g * g, -0.5 * corr

    def drift(self, dt: float, idx=None) -> None:
        """One RK4 step of the drift ODE; v and z untouched."""
        pre = self.pre
        d = pre.spec.d
        v0 = self._sel(self.v, idx)
        i0 = self._sel(self.ints, idx)
        ev = np.exp(v0)

        def advance(a, b, step):
            return i0 + step * (a @ pre.m_ints + b @ pre.lam_ints)

        a1, b1 = self._drift_coeffs(i0, ev)
        a2, b2 = self._drift_coeffs(advance(a1, b1, 0.5 * dt), ev)
        a3, b3 = self._drift_coeffs(advance(a2, b2, 0.5 * dt), ev)
        a4, b4 = self._drift_coeffs(advance(a3, b3, dt), ev)
        db = (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        da = (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        dints = db @ pre.lam_ints + da @ pre.m_ints
        if idx is None:
            self.coef[:, :d] += db
            self.coef[:, d:] += da
            self.ints += dints
        else:
            self.coef[idx, :d] += db
            self.coef[idx, d:] += da
            self.ints[idx] += dints

    def em_step(self, dt: float, dws: np.ndarray) -> None:
        """Exponential Euler-Maruyama: Ito drift and noise, then exact shift."""
        spec = self.pre.spec
        d = spec.d
        u = spec.scalings * np.exp(self.v)[:, None] * self.ints
        g = np.tanh(u)
        self.coef[:, :d] += g * dws
        self.coef[:, d:] += dt * g * g
        self.ints += (g * dws) @ self.pre.lam_ints + dt * (g * g) @ self.pre.m_ints
        self.v += dws @ spec.ou_loadings
        self.shift(dt)

    def inner_sweep(self, dt: float, dws: np.ndarray, forward: bool, idx=None) -> None:
        """Drift + diffusion flows in operator order [V0, V1, ..., Vd].

        forward: apply V_d, ..., V_1, then V0; backward: V0 first, then
        V_1, ..., V_d (semigroup products act right to left).
        """
        d = self.pre.spec.d
        col = lambda j: dws[:, j] if idx is None else dws[idx, j]
        if forward:
            for j in range(d - 1, -1, -1):
                self.diffusion(j, col(j), idx)
            self.drift(dt, idx)
        else:
            self.drift(dt, idx)
            for j in range(d):
                self.diffusion(j, col(j), idx)


def _layout(config: SimConfig, d: int, uniforms: np.ndarray):
    """Per-step Brownian increments (K, n, d) and auxiliary uniforms."""
    k, n = uniforms.shape[0], config.n_steps
    root_dt = np.sqrt(config.dt)
    if config.scheme is Scheme.NV:
        blocks = uniforms.reshape(k, n, d + 1)
        return inverse_normal_cdf(blocks[:, :, :d]) * root_dt, blocks[:, :, d]
    if config.scheme is Scheme.SWSS and config.swss_randomized:
        return inverse_normal_cdf(uniforms[:, 1:].reshape(k, n, d)) * root_dt, uniforms[:, 0]
    return inverse_normal_cdf(uniforms.reshape(k, n, d)) * root_dt, None


def simulate_ensemble(
    spec: VolSpec,
    config: SimConfig,
    h0: np.ndarray,
    uniforms: np.ndarray,
    v0: float = 0.0,
    z0: float = 0.0,
    snapshot_times: tuple[float, ...] = (),
) -> EnsembleResult:
    """Simulate all paths of `uniforms` (K x D) at once.

    h0 is the initial curve sampled on the grid implied by the config (see
    `make_grid`).  Snapshot times must be whole numbers of steps.
    """
    uniforms = np.asarray(uniforms, dtype=float)
    expected = config.budget(spec.d).dim
    if uniforms.ndim != 2 or uniforms.shape[1] != expected:
        raise ValueError(f"uniform matrix must be K x {expected}")
    dws, aux = _layout(config, spec.d, uniforms)
    k, n, dt = uniforms.shape[0], config.n_steps, config.dt
    pre = _Precomp(spec, curve_spacing(config), np.asarray(h0).size)

    snap_steps = {}
    for t in snapshot_times:
        m = t * config.steps_per_year
        if abs(m - round(m)) > 1e-9 or not (0 < round(m) <= n):
            raise ValueError(f"snapshot time {t} is not on the step grid")
        snap_steps.setdefault(int(round(m)), []).append(float(t))

    scheme = config.scheme
    if scheme is Scheme.SWSS and not config.swss_randomized:
        chains = [_Chain(pre, h0, v0, z0, k), _Chain(pre, h0, v0, z0, k)]
        directions = [True, False]
        weights = [0.5, 0.5]
    else:
        chains = [_Chain(pre, h0, v0, z0, k)]
        directions = [None]
        weights = [1.0]

    if scheme is Scheme.SWSS and config.swss_randomized:
        fwd_paths = np.flatnonzero(aux < 0.5)
        bwd_paths = np.flatnonzero(aux >= 0.5)

    snapshots: dict[float, list[StateBatch]] = {}
    for step_idx in range(n):
        w = dws[:, step_idx, :]
        for chain, direction in zip(chains, directions):
            if scheme is Scheme.EULER_MARUYAMA:
                chain.em_step(dt, w)
            elif scheme is Scheme.LT_FWD:
                chain.inner_sweep(dt, w, forward=True)
                chain.shift(dt)
            elif scheme is Scheme.LT_BWD:
                chain.shift(dt)
                chain.inner_sweep(dt, w, forward=False)
            elif scheme is Scheme.NV:
                chain.shift(0.5 * dt)
                fwd = np.flatnonzero(aux[:, step_idx] < 0.5)
                bwd = np.flatnonzero(aux[:, step_idx] >= 0.5)
                if fwd.size:
                    chain.inner_sweep(dt, w, forward=True, idx=fwd)
                if bwd.size:
                    chain.inner_sweep(dt, w, forward=False, idx=bwd)
                chain.shift(0.5 * dt)
            elif scheme is Scheme.SWSS and config.swss_randomized:
                # disjoint path sets run the two orderings independently
                if fwd_paths.size:
                    chain.inner_sweep(dt, w, forward=True, idx=fwd_paths)
                    chain.shift(dt, idx=fwd_paths)
                if bwd_paths.size:
                    chain.shift(dt, idx=bwd_paths)
                    chain.inner_sweep(dt, w, forward=False, idx=bwd_paths)
            else:  # deterministic SWSS chains
                if direction:
                    chain.inner_sweep(dt, w, forward=True)
                    chain.shift(dt)
                else:
                    chain.shift(dt)
                    chain.inner_sweep(dt, w, forward=False)
        if step_idx + 1 in snap_steps:
            for t in snap_steps[step_idx + 1]:
                snapshots[t] = [c.batch() for c in chains]

    return EnsembleResult(
        weights=weights,
        terminals=[c.batch() for c in chains],
        snapshots=snapshots,
    )
