"""Stacking energetics and phonon-stability diagnostics for twisted bilayers."""

from . import errors, ergodic, geometry, misfit, potentials, relax, stability

__version__ = "0.1.0"

__all__ = [
    "errors",
    "ergodic",
    "geometry",
    "misfit",
    "potentials",
    "relax",
    "stability",
    "__version__",
]
