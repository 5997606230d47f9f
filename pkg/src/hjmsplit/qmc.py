"""Low-discrepancy and pseudo-random driving noise.

Sobol points are built from the Joe-Kuo direction numbers shipped with the
package (whitespace-separated lines ``d s a m_1..m_s``; set the
``HJMSPLIT_DIRECTION_FILE`` environment variable to substitute another table
in the same format).  Point ``i`` of the sequence is

    x_i = XOR_{bits j of gray(i)} v_j / 2^32,   gray(i) = i ^ (i >> 1),

which is the usual Gray-code ordering.  Index 0 is the all-zeros point and is
skipped by default since it maps to -inf under the inverse normal CDF.
"""

from __future__ import annotations

import functools
import importlib.resources
import math
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PointSet",
    "DimensionBudget",
    "generate",
    "sobol_points",
    "inverse_normal_cdf",
    "to_gaussians",
    "plan_budget",
    "max_table_dimension",
]

_BITS = 32
_SCALE = 0.5**_BITS


class DirectionTableError(ValueError):
    """Raised when the requested dimension exceeds the direction table."""


def _direction_file():
    override = os.environ.get("HJMSPLIT_DIRECTION_FILE")
    if override:
        return open(override)
    ref = importlib.resources.files("hjmsplit").joinpath("data/new-joe-kuo-6.4096")
    return ref.open("r")


@functools.lru_cache(maxsize=1)
def _load_table() -> list[tuple[int, int, list[int]]]:
    """Parse the Joe-Kuo file into (s, a, [m_1..m_s]) per dimension >= 2."""
    entries = []
    with _direction_file() as f:
        for line in f:
            parts = line.split()
            if not parts or not parts[0].isdigit():
                continue  # header
            d, s, a = int(parts[0]), int(parts[1]), int(parts[2])
            m = [int(t) for t in parts[3 : 3 + s]]
            if len(m) != s:
                raise ValueError(f"direction file: bad line for dimension {d}")
            entries.append((s, a, m))
    return entries


def max_table_dimension() -> int:
    return len(_load_table()) + 1


@functools.lru_cache(maxsize=8)
def _direction_vectors(dim: int) -> np.ndarray:
    """Direction integers v[dim, bit] for the first `dim` coordinates."""
    table = _load_table()
    if dim > len(table) + 1:
        raise DirectionTableError(
            f"dimension {dim} exceeds the direction table ({len(table) + 1})"
        )
    v = np.zeros((dim, _BITS), dtype=np.uint64)
    # first coordinate: van der Corput in base 2
    v[0] = [1 << (_BITS - k) for k in range(1, _BITS + 1)]
    for j in range(1, dim):
        s, a, m = table[j - 1]
        vj = [0] * _BITS
        for k in range(min(s, _BITS)):
            vj[k] = m[k] << (_BITS - 1 - k)
        for k in range(s, _BITS):
            x = vj[k - s] ^ (vj[k - s] >> s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    x ^= vj[k - i]
            vj[k] = x
        v[j] = vj
    return v


def sobol_points(start: int, count: int, dim: int) -> np.ndarray:
    """Rows start..start+count-1 of the Sobol sequence, shape (count, dim).

    Stateless: any index can be generated independently, so disjoint row
    blocks may be produced in parallel.  Index 0 is the all-zeros point.
    """
    v = _direction_vectors(dim)
    idx = np.arange(start, start + count, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    acc = np.zeros((count, dim), dtype=np.uint64)
    for bit in range(_BITS):
        mask = (gray >> np.uint64(bit)) & np.uint64(1)
        if not mask.any():
            if int(gray.max(initial=0)) >> bit == 0:
                break
            continue
        acc[mask.astype(bool)] ^= v[:, bit]
    return acc.astype(np.float64) * _SCALE


@dataclass(frozen=True)
class PointSet:
    """Specification of the K x D driving uniform matrix."""

    kind: str  # "sobol" or "pseudo"
    n_paths: int
    dim: int
    skip: int = 1  # sobol: first sequence index; pseudo: RNG seed

    def __post_init__(self):
        if self.kind not in ("sobol", "pseudo"):
            raise ValueError(f"unknown point set kind {self.kind!r}")
        if self.n_paths < 1 or self.dim < 1:
            raise ValueError("n_paths and dim must be positive")
        if self.kind == "sobol" and self.skip < 1:
            raise ValueError("sobol skip must be >= 1 (index 0 is the zero point)")


def generate(ps: PointSet) -> np.ndarray:
    """The deterministic K x D matrix of uniforms in (0, 1)."""
    if ps.kind == "sobol":
        return sobol_points(ps.skip, ps.n_paths, ps.dim)
    rng = np.random.default_rng(ps.skip)
    u = rng.random((ps.n_paths, ps.dim))
    # keep strictly inside (0,1); the boundary has probability zero anyway
    return np.clip(u, 1e-16, 1.0 - 1e-16)


# Wichura's AS241 (PPND16) rational approximation to the inverse standard
# normal CDF; absolute error well below the 1.2e-9 contract everywhere on (0,1).
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
      5.3941960214247511077e3, 2.1213794301586595867e4, 3.9307895800092710610e4,
      2.8729085735721942674e4, 5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
      6.89767334985100004550e-1, 1.48103976427480074590e-1, 1.51986665636164571966e-2,
      5.47593808499534494600e-4, 1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
      1.48753612908506148525e-2, 7.86869131145613259100e-4, 1.84631831751005468180e-5,
      1.42151175831644588870e-7, 2.04426310338993978564e-15)


def _ratpoly(coef_num, coef_den, r):
    num = np.full_like(r, coef_num[-1])
    for c in coef_num[-2::-1]:
        num = num * r + c
    den = np.full_like(r, coef_den[-1])
    for c in coef_den[-2::-1]:
        den = den * r + c
    return num / den


def inverse_normal_cdf(u):
    """Vectorized inverse standard normal CDF, |error| <= 1.2e-9 on (0,1)."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("uniforms must lie strictly in (0, 1)")
    q = u - 0.5
    x = np.empty_like(u)

    mid = np.abs(q) <= 0.425
    if mid.any():
        r = 0.180625 - q[mid] * q[mid]
        x[mid] = q[mid] * _ratpoly(_A, _B, r)
    tail = ~mid
    if tail.any():
        r = np.sqrt(-np.log(np.where(q[tail] < 0.0, u[tail], 1.0 - u[tail])))
        near = r <= 5.0
        xt = np.empty_like(r)
        xt[near] = _ratpoly(_C, _D, r[near] - 1.6)
        xt[~near] = _ratpoly(_E, _F, r[~near] - 5.0)
        x[tail] = np.where(q[tail] < 0.0, -xt, xt)
    return x if x.ndim else float(x)


def to_gaussians(uniforms: np.ndarray, dt: float) -> np.ndarray:
    """Map uniforms elementwise to Brownian increments over a step of length dt."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    return inverse_normal_cdf(uniforms) * math.sqrt(dt)


@dataclass(frozen=True)
class DimensionBudget:
    """Integration-space dimension of a scheme: steps n, d driving factors."""

    scheme: str
    n_steps: int
    d: int

    @property
    def dim(self) -> int:
        if self.scheme == "NV":
            return self.n_steps * (self.d + 1)
        if self.scheme == "SWSS_RANDOMIZED":
            return self.n_steps * self.d + 1
        # LT_FWD, LT_BWD, EULER_MARUYAMA, SWSS (deterministic average)
        return self.n_steps * self.d


def plan_budget(epsilon: float, s: float, c_disc: float, c_int: float) -> tuple[int, int]:
    """Smallest (n, K) with c_disc/n^s <= eps/2 and c_int/K <= eps/2.

    Uses the 1/K quasi-Monte Carlo error model, giving total work
    O(eps^{-1-1/s}) for a weak-order-s scheme.
    """
    if epsilon <= 0 or s < 1 or c_disc <= 0 or c_int <= 0:
        raise ValueError("epsilon, constants must be positive and s >= 1")
    n = math.ceil((2.0 * c_disc / epsilon) ** (1.0 / s))
    k = math.ceil(2.0 * c_int / epsilon)
    return max(n, 1), max(k, 1)
