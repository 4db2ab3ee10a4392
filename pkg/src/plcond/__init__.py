"""Forward, inverse and stability tools for piecewise-affine conductivities on a known partition."""
from .conductivity import PiecewiseLinearConductivity
from .fem import FemSystem, assemble, solve_dirichlet, solve_neumann
from .geometry import DomainPartition, Mesh, build_partition, triangulate
from .maps import LocalDtoNMap, assemble_dton, assemble_ntod, operator_norm

__version__ = "0.1.0"

__all__ = [
    "DomainPartition", "FemSystem", "LocalDtoNMap", "Mesh", "PiecewiseLinearConductivity", "assemble",
    "assemble_dton", "assemble_ntod", "build_partition", "operator_norm", "solve_dirichlet", "solve_neumann",
    "triangulate",
]
