"""Function-space summation-by-parts operators on triangles and disks."""

from .fspace import (
    FunctionSpace,
    GaussianRbf,
    Monomial,
    Product,
    TrigLinear,
    derivative_spanning_set,
    eval_vandermonde,
    linear_plus_rbf,
    monomial_space,
    poly_cubic,
    product_spanning_set,
    space_from_config,
    translate_space,
    trig_diagonal,
    trig_tensor,
)
from .geometry import (
    NodeSet,
    build_node_set,
    disk,
    equidistant_surface_nodes,
    halton_interior_nodes,
    point_in_domain,
    rectangle,
    triangle,
    unit_triangle,
)
from .mesh import Mesh, disk_mesh, match_faces, structured_triangulation
from .operator import (
    SbpOperator,
    assemble_operator,
    operator_from_json,
    operator_to_json,
    validate_operator,
)
from .quadrature import (
    EscalationError,
    PocsConfig,
    PocsFailure,
    Quadrature,
    QuadratureInfeasible,
    build_surface_quadrature,
    build_volume_quadrature,
    compute_moments,
    escalate_nodes,
)
from .solver import (
    AdvectionProblem,
    MmsSource,
    PaperLiteralSource,
    SolverConfig,
    advected_sine_problem,
    build_context,
    compute_error,
    llf_flux,
    rhs_multiblock,
    rhs_single_domain,
    run_experiment,
    ssprk33_step,
    steady_problem,
    total_energy,
    total_mass,
    zero_problem,
)

__version__ = "0.1.0"
