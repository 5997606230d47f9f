"""Volatility structure and vector fields of the forward-curve dynamics.

The d driving fields are sigma_j(h, v) = g_j(h, v) * lam_j with a bounded
scalar g_j = tanh(c_j * exp(v) * int_0^{t_j} h) and exponential-polynomial
loadings lam_j(x) = (a_{j,0} + a_{j,1} x + a_{j,2} x^2) exp(-beta x).  The
no-arbitrage drift is sum_j sigma_j(x) int_0^x sigma_j, and the Stratonovich
form subtracts half the directional derivative of each diffusion field along
itself.  Because g_j is a scalar functional of the state, both reduce to
closed forms in the cached loading grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curve import ForwardCurve, ModelState, _cum_trapz, integrate

__all__ = [
    "VolSpec",
    "VectorFieldValue",
    "lambda_values",
    "g_scalar",
    "sigma",
    "hjm_drift",
    "stratonovich_drift",
    "diffusion_field",
    "load_model_file",
    "save_model_file",
]


@dataclass(frozen=True)
class VolSpec:
    """Model parameters for the d-factor volatility structure.

    Attributes
    ----------
    poly_coeffs : np.ndarray, shape (d, i0+1)
        Polynomial coefficients of each loading, lowest order first.
    decay : float
        Shared exponential decay rate beta > 0 of the loadings.
    scalings : np.ndarray, shape (d,)
        Activation scales c_j of the tanh volatility scalars.
    benchmarks : np.ndarray, shape (d,)
        Benchmark maturities t_j (years) of the driving yield integrals.
    ou_alpha : float
        Mean-reversion speed of the volatility state v, >= 0.
    ou_loadings : np.ndarray, shape (d,)
        Noise loadings gamma_j of v.
    """

    poly_coeffs: np.ndarray
    decay: float = 1.0
    scalings: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))
    benchmarks: np.ndarray = field(default_factory=lambda: np.array([0.5, 2.0, 10.0]))
    ou_alpha: float = 1.0
    ou_loadings: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1, 0.1]))

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.poly_coeffs, dtype=float))
        object.__setattr__(self, "poly_coeffs", coeffs)
        for name in ("scalings", "benchmarks", "ou_loadings"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            object.__setattr__(self, name, arr)
            if arr.size != coeffs.shape[0]:
                raise ValueError(f"{name} must have one entry per factor")
        if not (self.decay > 0.0):
            raise ValueError("decay must be positive (integrable loadings)")
        if self.ou_alpha < 0.0:
            raise ValueError("ou_alpha must be nonnegative")

    @property
    def d(self) -> int:
        return self.poly_coeffs.shape[0]


@dataclass(frozen=True)
class VectorFieldValue:
    """Value of a vector field at a state: curve node vector + scalar v part."""

    curve_component: np.ndarray
    v_component: float


def lambda_values(spec: VolSpec, x: np.ndarray) -> np.ndarray:
    """Loadings lam_j on the given maturities, shape (d, len(x))."""
    x = np.asarray(x, dtype=float)
    powers = x ** np.arange(spec.poly_coeffs.shape[1])[:, None]  # (i0+1, n)
    return (spec.poly_coeffs @ powers) * np.exp(-spec.decay * x)


def g_scalar(spec: VolSpec, j: int, state: ModelState) -> float:
    """Bounded volatility scalar tanh(c_j exp(v) int_0^{t_j} h) in (-1, 1)."""
    y = integrate(state.curve, 0.0, float(spec.benchmarks[j]))
    return float(np.tanh(spec.scalings[j] * np.exp(state.v) * y))


def sigma(spec: VolSpec, j: int, state: ModelState) -> np.ndarray:
    """Diffusion loading of factor j on the state's grid: g_j * lam_j."""
    lam = lambda_values(spec, state.curve.grid)[j]
    return g_scalar(spec, j, state) * lam


def hjm_drift(spec: VolSpec, state: ModelState) -> np.ndarray:
    """No-arbitrage drift sum_j sigma_j(x) int_0^x sigma_j at the grid nodes."""
    dx = state.curve.dx
    out = np.zeros_like(state.curve.values)
    for j in range(spec.d):
        sig = sigma(spec, j, state)
        out += sig * _cum_trapz(sig, dx)
    return out


def _correction_scalars(spec: VolSpec, state: ModelState) -> np.ndarray:
    """Coefficients s_j with correction field = sum_j s_j lam_j.

    Differentiating sigma_j = tanh(u_j) lam_j, u_j = c_j e^v int_0^{t_j} h,
    along the field (sigma_j, gamma_j) gives
    sech^2(u_j) c_j e^v (g_j int_0^{t_j} lam_j + gamma_j int_0^{t_j} h) lam_j.
    """
    ev = np.exp(state.v)
    out = np.empty(spec.d)
    lam_grid = lambda_values(spec, state.curve.grid)
    for j in range(spec.d):
        tj = float(spec.benchmarks[j])
        y = integrate(state.curve, 0.0, tj)
        u = spec.scalings[j] * ev * y
        g = np.tanh(u)
        lam_curve = ForwardCurve(dx=state.curve.dx, values=lam_grid[j])
        int_lam = integrate(lam_curve, 0.0, tj)
        sech2 = 1.0 / np.cosh(u) ** 2
        out[j] = sech2 * spec.scalings[j] * ev * (g * int_lam + spec.ou_loadings[j] * y)
    return out


def stratonovich_drift(spec: VolSpec, state: ModelState) -> VectorFieldValue:
    """Drift of the Stratonovich form: HJM drift minus half the Ito correction.

    The v component is zero: the OU pull -alpha*v lives in the linear split
    flow, and the constant noise loadings gamma_j have vanishing correction.
    """
    lam_grid = lambda_values(spec, state.curve.grid)
    corr = _correction_scalars(spec, state)
    curve_part = hjm_drift(spec, state) - 0.5 * (corr @ lam_grid)
    return VectorFieldValue(curve_component=curve_part, v_component=0.0)


def diffusion_field(spec: VolSpec, j: int, state: ModelState) -> VectorFieldValue:
    """Driving field of factor j: (sigma_j(h, v), gamma_j)."""
    return VectorFieldValue(
        curve_component=sigma(spec, j, state),
        v_component=float(spec.ou_loadings[j]),
    )


# --- parameter file (flat TOML) ---------------------------------------------

_ARRAYS = ("scalings", "benchmarks", "ou_loadings")


def load_model_file(path) -> VolSpec:
    """Read a VolSpec from a flat TOML file (see save_model_file for the schema)."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib
    with open(path, "rb") as f:
        data = tomllib.load(f)
    try:
        return VolSpec(
            poly_coeffs=np.array(data["poly_coeffs"], dtype=float),
            decay=float(data["decay"]),
            scalings=np.array(data["scalings"], dtype=float),
            benchmarks=np.array(data["benchmarks"], dtype=float),
            ou_alpha=float(data["ou_alpha"]),
            ou_loadings=np.array(data["ou_loadings"], dtype=float),
        )
    except KeyError as e:
        raise ValueError(f"{path}: missing model parameter {e}") from None


def save_model_file(path, spec: VolSpec) -> None:
    """Write a VolSpec as flat TOML; floats use repr so files round-trip bit-exactly."""
    lines = []
    rows = ", ".join(
        "[" + ", ".join(repr(float(c)) for c in row) + "]" for row in spec.poly_coeffs
    )
    lines.append(f"poly_coeffs = [{rows}]")
    lines.append(f"decay = {float(spec.decay)!r}")
    for name in _ARRAYS:
        arr = getattr(spec, name)
        lines.append(f"{name} = [" + ", ".join(repr(float(x)) for x in arr) + "]")
    lines.append(f"ou_alpha = {float(spec.ou_alpha)!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
