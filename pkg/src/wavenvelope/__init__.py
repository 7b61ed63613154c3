"""Numerical toolkit for weighted square-function and wave-envelope
estimates on the parabola: multiscale cap/tube/envelope geometry, the
weight functional kappa, both sides of the main inequalities on synthesized
band-limited fields, and sharpness-exponent experiments over grids of R."""

from .torus import GridSpec, TorusField, synthesize, point_eval, lp_norm

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "TorusField",
    "synthesize",
    "point_eval",
    "lp_norm",
    "__version__",
]
