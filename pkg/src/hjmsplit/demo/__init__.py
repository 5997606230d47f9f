"""Bundled demo inputs so every CLI command runs out of the box.

``model.toml`` holds a three-factor demo parameter set, ``curve.csv`` an
initial forward curve sampled out to ten years, and ``surface.csv`` a
synthetic 120-cell caplet implied-volatility surface generated by that
model on that curve.
"""

from pathlib import Path

_ROOT = Path(__file__).resolve().parent

MODEL_FILE = _ROOT / "model.toml"
CURVE_FILE = _ROOT / "curve.csv"
SURFACE_FILE = _ROOT / "surface.csv"
