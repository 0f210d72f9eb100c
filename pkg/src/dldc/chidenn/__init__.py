"""Convolution-enhanced finite elements (C-HiDeNN) on structured linear meshes."""

from .fem import fem_error_norms, fem_nodes, fem_solve
from .mesh import (Mesh, PatchTopology, UnsupportedMeshError, build_patch_topology,
                   structured_mesh_1d, structured_mesh_2d)
from .poisson import (PoissonProblem, PoissonSolution, SolverError, assemble, assemble_and_solve,
                      error_norms, manufactured_problem, quadrature_energy_change,
                      two_point_problem)
from .rpim import ConvPatchFunction, IllConditionedPatchError, rpim_patch_function
from .space import ChidennSpace, Interpolants, combine_interpolants, interpolate
from .study import (ConvergenceTable, check_interpolation_properties, convergence_study,
                    dofs_for_error, fit_rate)

__all__ = [n for n in dir() if not n.startswith("_")]
