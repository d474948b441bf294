"""tridge: ADER-DG engine with a-posteriori finite-volume subcell limiting.

Solves 1D/2D first-order hyperbolic systems (with conservative flux,
non-conservative products and sources) on tripartitioned adaptive Cartesian
meshes, driven by a line-oriented specification file via the ``engine`` CLI.
"""

__version__ = "0.1.0"

from .basis import NodalBasis, build_operators, gauss_legendre
from .errors import ConfigurationError, NumericalFailure

__all__ = [
    "NodalBasis",
    "build_operators",
    "gauss_legendre",
    "ConfigurationError",
    "NumericalFailure",
]
