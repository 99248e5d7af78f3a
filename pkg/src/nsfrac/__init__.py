"""2D finite-element incompressible Navier-Stokes solver.

Incremental pressure-correction fractional stepping on triangle meshes,
in a naive per-step-assembled form and an optimized preassembled form,
with passive scalar transport, pluggable problems and a verification
harness for convergence studies.
"""

from .assembly import (Operators, apply_dirichlet, apply_dirichlet_single,
                       assemble_body_force, assemble_convection,
                       assemble_divergence, assemble_gradient, assemble_load,
                       assemble_mass, assemble_stiffness, build_operators)
from .fem import (DirichletBC, Field, LagrangeSpace, QuadratureRule, build_space,
                  dirichlet_dofs, eval_basis, interpolate, quadrature_rule)
from .fracstep import (CheckpointError, Hooks, NSParameters, SolutionState,
                       SolverError, StepDiagnostics, checkpoint, kinetic_energy,
                       restore, run)
from .mesh import (Mesh, boundary_vertices, build_rectangle, cell_areas,
                   mesh_from_arrays, mesh_size_h, write_vtk)
from .problems import (Channel2D, DrivenCavity, ExactSolution, Problem,
                       ScalarSpec, TaylorGreen2D, get_problem, schema_check)
from .sparse import (BreakdownError, CsrMatrix, KrylovConfig, KrylovError,
                     PatternMismatchError, SolveResult, lump, solve,
                     subtract_mean)
from .verify import (ConvergenceRow, convergence_order, l2_error, rows_to_csv,
                     run_spatial_study, run_temporal_study)

__version__ = "0.1.0"
