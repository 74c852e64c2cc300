"""From a real-node cloud to a ready :class:`FlowSystem`."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .assembler import BoundaryConditionSet, FlowSystem, TransmissibilitySet, build_transmissibilities
from .control_volume import ControlVolumeSolution, CvConfig, assemble_cv_system, solve_cv
from .flow_model import FluidProps, RelPermTable, RockProps, WellSpec
from .gfdm import LocalStencil, WeightKind, build_stencils
from .pointcloud import (
    ConnectivityGraph,
    PointCloud,
    add_virtual_nodes,
    build_radius_connectivity,
    build_triangulation_connectivity,
    characteristic_angles,
    generate_pseudo_cartesian_cloud,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Discretization:
    cloud: PointCloud  # with virtual nodes
    graph: ConnectivityGraph
    stencils: list[LocalStencil]
    theta: np.ndarray
    cv: ControlVolumeSolution
    trans: TransmissibilitySet


def rectangle(lx: float, ly: float, x0: float = 0.0, y0: float = 0.0):
    return [(x0, y0), (x0 + lx, y0), (x0 + lx, y0 + ly), (x0, y0 + ly)]


def cartesian_cloud(lx: float, ly: float, spacing: float, thickness: float = 1.0) -> PointCloud:
    """Uniform lattice on a rectangle, boundary nodes first."""
    return generate_pseudo_cartesian_cloud(rectangle(lx, ly), spacing, thickness)


def discretize(
    cloud: PointCloud,
    rock: RockProps,
    weight="w2",
    radius: float | None = None,
    triangles: Sequence[Sequence[int]] | None = None,
    cv_config: CvConfig = CvConfig(),
    spacing_hint: float | None = None,
    corner_fill: bool = True,
    min_neighbors: int = 5,
) -> Discretization:
    """Virtual nodes, connectivity, stencils, control volumes and transmissibilities.

    Exactly one of ``radius`` and ``triangles`` selects the connectivity rule.
    """
    if (radius is None) == (triangles is None):
        raise ValueError("give exactly one of radius and triangles")
    aug = cloud if cloud.n_virtual else add_virtual_nodes(cloud, spacing_hint, corner_fill=corner_fill)
    if radius is not None:
        graph = build_radius_connectivity(aug, radius, min_neighbors)
    else:
        graph = build_triangulation_connectivity(aug, triangles, min_neighbors)
    stencils = build_stencils(aug, graph, WeightKind.parse(weight))
    theta = characteristic_angles(aug)
    system = assemble_cv_system(graph, stencils, theta, aug.area, cv_config)
    cv = solve_cv(system)
    log.info("control volumes: constraint error %.3e, residual %.3e", cv.volume_constraint_error, cv.residual_norm)
    trans = build_transmissibilities(graph, stencils, cv, rock)
    return Discretization(aug, graph, stencils, theta, cv, trans)


def flow_system(
    disc: Discretization,
    fluid: FluidProps,
    rock: RockProps,
    relperm: RelPermTable,
    wells: Sequence[WellSpec] = (),
    bcs: BoundaryConditionSet | None = None,
    sw_init=0.2,
) -> FlowSystem:
    return FlowSystem.from_discretization(
        disc.cloud, disc.stencils, disc.cv, disc.trans, fluid, rock, relperm, wells, bcs, sw_init
    )


def nearest_node(cloud: PointCloud, xy) -> int:
    d = np.hypot(*(cloud.xy[: cloud.n_real] - np.asarray(xy, dtype=float)).T)
    return int(np.argmin(d))
