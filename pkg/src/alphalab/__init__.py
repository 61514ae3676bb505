"""Numerical laboratory for perturbed-energy (alpha) harmonic maps."""

__version__ = "0.1.0"

from .geometry import build_sphere, build_torus, integrate  # noqa: F401
from .fields import identity_map, make_map  # noqa: F401
