"""Structure-preserving transient Maxwell solver on dual meshes.

The package couples a mimetic finite-difference discretization on a
Delaunay-Voronoi mesh pair with its mass-lumped finite-element twin,
verifies the two assemble to the same matrix, and solves each implicit
Crank-Nicolson step with flexible GMRES under block preconditioners
derived from the system's exact block factorization.
"""

from .dual import (
    DualGeometry,
    build_dual,
    check_nondegenerate,
    circumcenter,
    partition_identities,
)
from .errors import (
    DegenerateTetError,
    MeshConstructionError,
    NegativeMeasureError,
    NumericalBreakdownError,
    SingularMatrixError,
)
from .harness import (
    RunConfig,
    build_mesh,
    get_workspace,
    run_convergence,
    run_solve,
    run_sweep,
    run_timing,
)
from .linalg import (
    BlockOperator,
    KrylovConfig,
    SolveReport,
    direct_small_solve,
    fgmres,
)
from .manufactured import ManufacturedSolution, exact_fields
from .mesh import (
    TetMesh,
    boundary_maps,
    build_base_cube_pyramids,
    build_bcc_mesh,
    build_tet_mesh,
    incidence_curl,
    incidence_dual_grad,
    incidence_grad,
    load_mesh,
    refine_uniform,
    save_mesh,
)
from .operators import (
    MfdOperators,
    MfdSystem,
    StateVector,
    assemble_rhs,
    assemble_system,
    build_operators,
    divergence_of_b,
    energy,
    interpolate_b_faces,
    interpolate_e_edges,
    interpolate_p_nodes,
    lumped_norm,
    lumped_weights,
    project_current,
    step_crank_nicolson,
)
from .precond import (
    InnerSolverConfig,
    build_factorization,
    build_schur,
    make_preconditioner,
    verify_div_preservation,
    verify_eigen_clustering,
)

__version__ = "0.1.0"
