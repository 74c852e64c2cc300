"""Node control domain meshless method for two-phase (oil-water) porous flow.

GFDM stencils on a connectable point cloud, node control volumes from an
overdetermined least-squares system, and a locally conservative fully
implicit discretization with wells and general boundary conditions.
"""

from .assembler import (
    BoundaryCondition,
    BoundaryConditionSet,
    FlowSystem,
    ReservoirState,
    TransmissibilitySet,
    build_transmissibilities,
)
from .control_volume import ControlVolumeSolution, CvConfig, assemble_cv_system, pair_weight, solve_cv
from .errors import (
    ConfigError,
    ConnectivityError,
    ControlVolumeError,
    ConvergenceError,
    GeometryError,
    NcdmmError,
    PhysicsError,
    StencilError,
)
from .flow_model import FluidProps, RelPermTable, RockProps, WellSpec, default_relperm
from .gfdm import LocalStencil, WeightKind, apply_derivative, build_stencil, build_stencils, laplacian_row, weight
from .kernels import BACKEND
from .pipeline import Discretization, cartesian_cloud, discretize, flow_system, nearest_node
from .pointcloud import (
    ConnectivityGraph,
    Node,
    NodeKind,
    PointCloud,
    add_virtual_nodes,
    build_radius_connectivity,
    build_triangulation_connectivity,
    characteristic_angles,
    generate_pseudo_cartesian_cloud,
    make_cloud,
)
from .solver import NewtonConfig, SimulationSchedule, advance, newton_solve

__version__ = "0.1.0"
