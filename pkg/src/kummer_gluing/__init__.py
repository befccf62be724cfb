"""Numerical gluing construction of Calabi-Yau metrics on Kummer surfaces.

Eguchi-Hanson patches are grafted into the flat orbifold T^4/{+-1}, the
linearized operator is inverted through a parametrix on long cylindrical
necks, and the Monge-Ampere equation is solved by Picard iteration.
"""

from .assembly import GluedGeometry, Lattice, assemble
from .cross_section import CrossSectionSpec, EigenSystem, spectrum
from .eguchi_hanson import EGUCHI_HANSON, EUCLIDEAN, RadialProfile
from .errors import KummerError
from .solver import SolveConfig, SolveReport, solve

__all__ = [
    "CrossSectionSpec", "EGUCHI_HANSON", "EUCLIDEAN", "EigenSystem", "GluedGeometry",
    "KummerError", "Lattice", "RadialProfile", "SolveConfig", "SolveReport",
    "assemble", "solve", "spectrum",
]
__version__ = "0.1.0"
