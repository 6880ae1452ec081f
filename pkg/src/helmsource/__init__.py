"""Point-source and refractive-index reconstruction for the 2D Helmholtz equation
from boundary Cauchy data, with P1 finite elements on the unit square."""

__version__ = "0.1.0"

from .forward import CauchyData, ForwardSolver, Medium, PointSourceSet, Scene  # noqa: F401
from .mesh_fem import Mesh, build_unit_square_mesh  # noqa: F401
