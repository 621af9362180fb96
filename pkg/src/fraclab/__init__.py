"""Numerical laboratory for stochastic fractional scalar conservation laws
on the periodic torus: pseudospectral solvers, controlled (skeleton)
equations, exact linear oracles, rate-function evaluation, and Monte Carlo
experiment drivers."""

__version__ = "0.1.0"
