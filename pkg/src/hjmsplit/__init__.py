"""Forward-curve SPDE simulation, pricing, and calibration.

Submodules
----------
curve        uniform-grid forward curves, integration, CSV round trip
model        13-parameter volatility specification and Stratonovich drift
qmc          Sobol / pseudo-random point sets mapped to Gaussian increments
splitting    the five splitting integrators and `SimConfig`
engine       path generation with thread-count-independent averaging
pricing      bonds, caplets, swaptions, Black-76 quoting, martingale check
studies      weak-order ladders, QMC-vs-MC comparison, moment stability
calibration  caplet-surface targets, genetic search, Levenberg-Marquardt
reports      delimited writers and matplotlib figure renders for the CLI
demo         bundled model, curve, and surface so every command runs as-is
"""
