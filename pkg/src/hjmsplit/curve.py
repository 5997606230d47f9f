"""Forward-curve state: piecewise affine curves on a uniform grid.

The curve is the Musiela-parametrized forward rate h(x) sampled at nodes
0, dx, 2*dx, ..., x_max.  Between nodes the curve is the affine
interpolant, so shifting by a whole number of grid slots is exact and
integrals of the interpolant are plain trapezoid sums.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ForwardCurve",
    "ModelState",
    "WeightedNorm",
    "evaluate",
    "integrate",
    "shift_decay_flow",
    "weighted_norm",
    "read_curve_csv",
    "write_curve_csv",
]


class CurveDomainError(ValueError):
    """Raised when an evaluation or integration leaves the curve's grid."""


class MeshAlignmentError(ValueError):
    """Raised when a shift is not a whole number of grid slots."""


@dataclass(frozen=True)
class ForwardCurve:
    """Piecewise affine forward curve on a uniform maturity grid.

    Parameters
    ----------
    dx : float
        Grid spacing in years, > 0.
    values : np.ndarray
        Rates at nodes 0, dx, ..., x_max; at least two nodes, all finite.
    """

    dx: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if not (self.dx > 0.0):
            raise ValueError(f"grid spacing must be positive, got {self.dx}")
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("curve needs at least 2 nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")

    @property
    def x_max(self) -> float:
        return self.dx * (self.values.size - 1)

    @property
    def grid(self) -> np.ndarray:
        return self.dx * np.arange(self.values.size)


@dataclass(frozen=True)
class ModelState:
    """Full state of the simulated model: curve, volatility level, log bank account."""

    curve: ForwardCurve
    v: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.v) and np.isfinite(self.z)):
            raise ValueError("v and z must be finite")


@dataclass(frozen=True)
class WeightedNorm:
    """cosh weight built on the order-i curve norm.

    norm(h, v)^2 = h(0)^2 + sum_{m<=i} int (D^m h)^2 exp(alpha*x) dx + v^2,
    with D^m a forward finite difference; the weight is cosh(beta * norm).
    """

    order: int = 0
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


def evaluate(curve: ForwardCurve, x: float) -> float:
    """Affine interpolation of the curve at maturity x in [0, x_max]."""
    if not (0.0 <= x <= curve.x_max * (1 + 1e-12)):
        raise CurveDomainError(f"maturity {x} outside [0, {curve.x_max}]")
    pos = min(x / curve.dx, curve.values.size - 1)
    k = int(pos)
    if k == curve.values.size - 1:
        return float(curve.values[-1])
    w = pos - k
    return float((1.0 - w) * curve.values[k] + w * curve.values[k + 1])


def _cum_trapz(values: np.ndarray, dx: float) -> np.ndarray:
    """Cumulative integral of the affine interpolant at every node."""
    out = np.empty_like(values, dtype=float)
    out[0] = 0.0
    np.cumsum(0.5 * dx * (values[1:] + values[:-1]), out=out[1:])
    return out


def integrate(curve: ForwardCurve, a: float, b: float) -> float:
    """Exact integral of the piecewise affine curve over [a, b]."""
    if a > b:
        raise CurveDomainError(f"reversed bounds [{a}, {b}]")
    if a < 0.0 or b > curve.x_max * (1 + 1e-12):
        raise CurveDomainError(f"bounds [{a}, {b}] outside [0, {curve.x_max}]")
    cum = _cum_trapz(curve.values, curve.dx)

    def at(x: float) -> float:
        pos = min(x / curve.dx, curve.values.size - 1)
        k = int(pos)
        if k == curve.values.size - 1:
            return float(cum[-1])
        w = (pos - k) * curve.dx
        # integral over the partial cell: affine segment
        y0 = curve.values[k]
        slope = (curve.values[k + 1] - curve.values[k]) / curve.dx
        return float(cum[k] + y0 * w + 0.5 * slope * w * w)

    return at(b) - at(a)


def shift_slots(curve: ForwardCurve, dt: float) -> int:
    """Number of grid slots corresponding to dt; errors if not mesh aligned."""
    slots = dt / curve.dx
    k = round(slots)
    if abs(slots - k) > 1e-9 * max(1.0, abs(slots)):
        raise MeshAlignmentError(
            f"dt={dt} is not a multiple of the grid spacing {curve.dx}"
        )
    return int(k)


def shift_decay_flow(state: ModelState, dt: float, ou_alpha: float) -> ModelState:
    """Exact flow of the linear part: curve shift, OU decay of v, bank-account update.

    The curve is shifted left by dt/dx slots with flat extrapolation at the
    long end; v decays by exp(-ou_alpha*dt); z picks up the exact integral of
    the shifting short rate, i.e. the integral of the pre-shift curve over
    [0, dt].
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        return state
    k = shift_slots(state.curve, dt)
    old = state.curve.values
    new = np.empty_like(old)
    if k >= old.size:
        new[:] = old[-1]
    else:
        new[: old.size - k] = old[k:]
        new[old.size - k :] = old[-1]
    z_inc = integrate(state.curve, 0.0, min(dt, state.curve.x_max))
    if dt > state.curve.x_max:
        # flat extrapolation of the short rate beyond the grid
        z_inc += old[-1] * (dt - state.curve.x_max)
    return ModelState(
        curve=replace(state.curve, values=new),
        v=state.v * float(np.exp(-ou_alpha * dt)),
        z=state.z + z_inc,
    )


def state_norm(state: ModelState, w: WeightedNorm) -> float:
    """Discrete H_i norm of (h, v) used inside the cosh weight."""
    vals = state.curve.values
    if vals.size < w.order + 2:
        raise ValueError("not enough nodes for the requested derivative order")
    total = float(vals[0]) ** 2 + state.v**2
    d = vals.astype(float)
    for m in range(1, w.order + 1):
        d = np.diff(d) / state.curve.dx
        x = state.curve.dx * np.arange(d.size)
        total += float(np.trapezoid(d * d * np.exp(w.alpha * x), dx=state.curve.dx))
    return float(np.sqrt(total))


def weighted_norm(state: ModelState, w: WeightedNorm) -> float:
    """cosh weight cosh(beta * ||(h, v)||) of the state; always >= 1."""
    return float(np.cosh(w.beta * state_norm(state, w)))


def resample(curve: ForwardCurve, dx: float) -> ForwardCurve:
    """Resample the affine interpolant onto a new uniform grid spacing.

    Exact for spacings that subdivide the original cells.
    """
    n = int(round(curve.x_max / dx)) + 1
    xs = dx * np.arange(n)
    vals = np.interp(xs, curve.grid, curve.values)
    return ForwardCurve(dx=dx, values=vals)


def read_curve_csv(path) -> ForwardCurve:
    """Read a curve from CSV with header (maturity_years, rate); grid must be uniform."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ValueError(f"{path}: expected header 'maturity_years,rate'")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least 2 curve nodes")
    xs = np.array([r[0] for r in rows])
    vals = np.array([r[1] for r in rows])
    if xs[0] != 0.0:
        raise ValueError(f"{path}: first maturity must be 0")
    dxs = np.diff(xs)
    dx = dxs[0]
    if dx <= 0 or not np.allclose(dxs, dx, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{path}: maturity grid is not uniform")
    return ForwardCurve(dx=float(dx), values=vals)


def write_curve_csv(path, curve: ForwardCurve) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["maturity_years", "rate"])
        for x, r in zip(curve.grid, curve.values):
            writer.writerow([repr(float(x)), repr(float(r))])
