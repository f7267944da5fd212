"""Minimizing-movement (JKO) scheme for the thin-film Muskat system.

The package provides exact one-dimensional optimal transport primitives, the
energy and entropy functionals of the two-layer system, a particle-based JKO
solver with optimality certificates, an independent finite-volume reference
solver and a diagnostics harness.
"""

from importlib.metadata import PackageNotFoundError, version

from .functionals import EnergyForm, PairState, PhysParams
from .transport1d import Grid, GridDensity, QuantileState

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

__all__ = ["EnergyForm", "Grid", "GridDensity", "PairState", "PhysParams", "QuantileState", "__version__"]
