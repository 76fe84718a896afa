"""Unit normals of implicit hypersurfaces and their extension off the surface.

The main entry points:

* ``ImplicitSurface``: a regular level set ``psi = 0`` with exact jets.
* ``TubularNeighborhood``: closest-point coordinates, signed distance and the
  proper (unit gradient) extension of the normal.
* ``verify_properness``: sampled check that a unit field has a symmetric,
  autoparallel Jacobian throughout the tube.
* ``eikonal_grid``: a fast-marching solver for ``|grad phi| = 1`` on a grid.
"""

from .catalog import CATALOG, builtin_surface, builtin_tube
from .expr import Jet2, eval_jet2, parse, unparse
from .gunter import Tolerances, gunter_matrix, verify_properness
from .surface import ImplicitSurface, VectorFieldSample, load_surface
from .tubular import TubularCoord, TubularNeighborhood, validate_epsilon

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "ImplicitSurface",
    "Jet2",
    "Tolerances",
    "TubularCoord",
    "TubularNeighborhood",
    "VectorFieldSample",
    "builtin_surface",
    "builtin_tube",
    "eval_jet2",
    "gunter_matrix",
    "load_surface",
    "parse",
    "unparse",
    "validate_epsilon",
    "verify_properness",
]
