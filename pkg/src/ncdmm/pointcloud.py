"""Point clouds, virtual-node augmentation and connectable neighbour graphs.

Node ids are array indices.  Real nodes (interior and boundary) always come
first; virtual nodes placed outside the boundary are appended after them, so
``ids < cloud.n_real`` selects the real part.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConnectivityError, GeometryError

log = logging.getLogger(__name__)

_GEOM_EPS = 1e-10


class NodeKind(str, Enum):
    INTERIOR = "I"
    BOUNDARY = "B"
    VIRTUAL = "V"


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    kind: NodeKind
    outward_normal: tuple[float, float] | None = None
    parent_boundary_node: int | None = None


def _freeze(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Nodes stored column-wise.

    ``normals`` is NaN for interior nodes, ``parents`` is -1 for real nodes.
    ``boundary`` holds counterclockwise loops of boundary-node ids.
    """

    xy: np.ndarray
    kinds: np.ndarray
    normals: np.ndarray
    parents: np.ndarray
    boundary: tuple[tuple[int, ...], ...]
    thickness: float = 1.0

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        n = len(xy)
        kinds = np.asarray(self.kinds, dtype="<U1").reshape(n)
        normals = np.asarray(self.normals, dtype=float).reshape(n, 2)
        parents = np.asarray(self.parents, dtype=np.int64).reshape(n)
        object.__setattr__(self, "xy", _freeze(xy))
        object.__setattr__(self, "kinds", _freeze(kinds))
        object.__setattr__(self, "normals", _freeze(normals))
        object.__setattr__(self, "parents", _freeze(parents))
        object.__setattr__(self, "boundary", tuple(tuple(int(i) for i in loop) for loop in self.boundary))
        if self.thickness <= 0:
            raise GeometryError("thickness must be positive")
        is_virtual = kinds == NodeKind.VIRTUAL.value
        n_real = int(np.count_nonzero(~is_virtual))
        if is_virtual[:n_real].any():
            raise GeometryError("virtual nodes must be stored after all real nodes")
        object.__setattr__(self, "n_real", n_real)
        for i in np.flatnonzero(~np.isnan(normals[:, 0])):
            if abs(math.hypot(*normals[i]) - 1.0) > 1e-12:
                raise GeometryError(f"node {i}: outward normal is not a unit vector")
        for i in np.flatnonzero(is_virtual):
            p = parents[i]
            if not (0 <= p < n_real) or kinds[p] != NodeKind.BOUNDARY.value:
                raise GeometryError(f"virtual node {i} must reference a boundary node as parent")
        for loop in self.boundary:
            if len(loop) < 3:
                raise GeometryError("boundary loop needs at least 3 nodes")
            for i in loop:
                if not (0 <= i < n_real) or kinds[i] != NodeKind.BOUNDARY.value:
                    raise GeometryError(f"boundary loop references non-boundary node {i}")
            if _signed_area(xy[list(loop)]) <= 0:
                raise GeometryError("boundary loops must be counterclockwise")
            if not _is_simple(xy[list(loop)]):
                raise GeometryError("boundary loop is self-intersecting")

    n_real: int = field(init=False, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.xy)

    @property
    def n_virtual(self) -> int:
        return self.n_nodes - self.n_real

    def node(self, i: int) -> Node:
        nrm = self.normals[i]
        return Node(
            id=int(i),
            x=float(self.xy[i, 0]),
            y=float(self.xy[i, 1]),
            kind=NodeKind(self.kinds[i]),
            outward_normal=None if np.isnan(nrm[0]) else (float(nrm[0]), float(nrm[1])),
            parent_boundary_node=None if self.parents[i] < 0 else int(self.parents[i]),
        )

    @property
    def nodes(self) -> list[Node]:
        return [self.node(i) for i in range(self.n_nodes)]

    def ids_of(self, kind: NodeKind) -> np.ndarray:
        return np.flatnonzero(self.kinds == kind.value)

    @property
    def area(self) -> float:
        """Shoelace area of all boundary loops."""
        return float(sum(_signed_area(self.xy[list(loop)]) for loop in self.boundary))

    @property
    def domain_volume(self) -> float:
        return self.area * self.thickness

    def contains(self, pts, include_boundary=True) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        for loop in self.boundary:
            inside |= points_in_polygon(pts, self.xy[list(loop)], include_boundary)
        return inside


def make_cloud(real_xy, boundary_loops, thickness=1.0, normals=None) -> PointCloud:
    """Build a real-node cloud from coordinates and boundary loops.

    Nodes listed in a loop become boundary nodes; missing normals are computed
    as the bisector of the outward normals of the two incident segments.
    """
    xy = np.asarray(real_xy, dtype=float).reshape(-1, 2)
    n = len(xy)
    kinds = np.full(n, NodeKind.INTERIOR.value, dtype="<U1")
    nrm = np.full((n, 2), np.nan)
    loops = [list(map(int, loop)) for loop in boundary_loops]
    for loop in loops:
        kinds[loop] = NodeKind.BOUNDARY.value
        pts = xy[loop]
        for k, i in enumerate(loop):
            n1, n2 = _incident_normals(pts, k)
            b = n1 + n2
            nb = np.hypot(*b)
            nrm[i] = b / nb if nb > _GEOM_EPS else n1
    if normals is not None:
        given = np.asarray(normals, dtype=float).reshape(n, 2)
        ok = ~np.isnan(given[:, 0])
        nrm[ok] = given[ok]
    return PointCloud(xy, kinds, nrm, np.full(n, -1), loops, thickness)


# --- polygon helpers ----------------------------------------------------------


def _signed_area(poly) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-14 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return o1 * o2 < 0 and o3 * o4 < 0


def _is_simple(poly) -> bool:
    m = len(poly)
    if m > 400:
        return True  # quadratic check skipped on large loops
    for a in range(m):
        for b in range(a + 2, m):
            if a == 0 and b == m - 1:
                continue
            if _segments_cross(poly[a], poly[(a + 1) % m], poly[b], poly[(b + 1) % m]):
                return False
    return True


def _incident_normals(poly, k):
    """Outward unit normals of the segments entering and leaving vertex ``k`` (CCW loop)."""
    m = len(poly)
    prev, cur, nxt = poly[(k - 1) % m], poly[k], poly[(k + 1) % m]
    d1 = cur - prev
    d2 = nxt - cur
    n1 = np.array([d1[1], -d1[0]]) / np.hypot(*d1)
    n2 = np.array([d2[1], -d2[0]]) / np.hypot(*d2)
    return n1, n2


def _interior_angle(poly, k) -> float:
    m = len(poly)
    prev, cur, nxt = poly[(k - 1) % m], poly[k], poly[(k + 1) % m]
    u = prev - cur
    v = nxt - cur
    ang = math.atan2(v[0] * u[1] - v[1] * u[0], v[0] * u[0] + v[1] * u[1])
    if ang <= 0:
        ang += 2 * math.pi
    return ang


def _dist_to_segments(pts, poly):
    a = poly
    b = np.roll(poly, -1, axis=0)
    d = b - a
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nki,ki->nk", ap, d) / np.einsum("ki,ki->k", d, d), 0.0, 1.0)
    closest = a[None] + t[..., None] * d[None]
    return np.hypot(*(pts[:, None, :] - closest).transpose(2, 0, 1)).min(axis=1)


def points_in_polygon(pts, poly, include_boundary=True) -> np.ndarray:
    """Ray-casting inclusion test; points on the boundary count as inside if asked."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    poly = np.asarray(poly, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    xa, ya = poly[:, 0], poly[:, 1]
    xb, yb = np.roll(xa, -1), np.roll(ya, -1)
    for k in range(len(poly)):
        cond = (ya[k] > y) != (yb[k] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = xa[k] + (y - ya[k]) * (xb[k] - xa[k]) / (yb[k] - ya[k])
        inside ^= cond & (x < xc)
    scale = max(np.ptp(xa), np.ptp(ya), 1.0)
    on_edge = _dist_to_segments(pts, poly) <= _GEOM_EPS * scale
    return (inside | on_edge) if include_boundary else (inside & ~on_edge)


# --- characteristic angles and virtual nodes -----------------------------------


def characteristic_angles(cloud: PointCloud) -> np.ndarray:
    """Interior angle per real node: 2π inside, the corner angle on the boundary."""
    theta = np.full(cloud.n_real, 2 * math.pi)
    seen = np.zeros(cloud.n_real, dtype=int)
    for loop in cloud.boundary:
        pts = cloud.xy[list(loop)]
        for k, i in enumerate(loop):
            theta[i] = _interior_angle(pts, k)
            seen[i] += 1
    for i in cloud.ids_of(NodeKind.BOUNDARY):
        if seen[i] != 1:
            raise GeometryError(f"boundary node {i} must have exactly 2 incident segments (found in {seen[i]} loops)")
    return theta


def average_boundary_spacing(cloud: PointCloud) -> float:
    lengths = []
    for loop in cloud.boundary:
        pts = cloud.xy[list(loop)]
        lengths.append(np.hypot(*(np.roll(pts, -1, axis=0) - pts).T))
    return float(np.concatenate(lengths).mean())


def add_virtual_nodes(
    cloud: PointCloud,
    spacing_hint: float | None = None,
    corner_fill: bool = True,
    corner_angle: float = 0.75 * math.pi,
) -> PointCloud:
    """Append virtual nodes outside the boundary.

    Every boundary node gets one virtual node at ``spacing_hint`` along its
    bisector normal.  With ``corner_fill``, convex corners sharper than
    ``corner_angle`` instead get three: one along each incident edge normal
    and one at the parallelogram corner ``n1 + n2``, which completes the
    lattice ring around rectangular corners.
    """
    if cloud.n_virtual:
        raise GeometryError("cloud already carries virtual nodes")
    h = average_boundary_spacing(cloud) if spacing_hint is None else float(spacing_hint)
    if h <= 0:
        raise GeometryError("spacing_hint must be positive")
    vxy, vnrm, vpar = [], [], []
    for loop in cloud.boundary:
        pts = cloud.xy[list(loop)]
        for k, i in enumerate(loop):
            n1, n2 = _incident_normals(pts, k)
            if corner_fill and _interior_angle(pts, k) < corner_angle:
                diag = n1 + n2
                for d, off in ((n1, n1), (n2, n2), (diag / np.hypot(*diag), diag)):
                    vxy.append(cloud.xy[i] + h * off)
                    vnrm.append(d)
                    vpar.append(i)
            else:
                nb = cloud.normals[i]
                vxy.append(cloud.xy[i] + h * nb)
                vnrm.append(nb)
                vpar.append(i)
    vxy = np.array(vxy)
    bad = np.flatnonzero(cloud.contains(vxy, include_boundary=True))
    if len(bad):
        vid = cloud.n_real + int(bad[0])
        raise GeometryError(f"virtual node {vid} (parent {vpar[bad[0]]}) falls inside the domain")
    return PointCloud(
        np.vstack([cloud.xy, vxy]),
        np.concatenate([cloud.kinds, np.full(len(vxy), NodeKind.VIRTUAL.value)]),
        np.vstack([cloud.normals, np.array(vnrm)]),
        np.concatenate([cloud.parents, np.array(vpar, dtype=np.int64)]),
        cloud.boundary,
        cloud.thickness,
    )


# --- cloud generation -----------------------------------------------------------


def generate_pseudo_cartesian_cloud(boundary, lattice_spacing: float, thickness: float = 1.0) -> PointCloud:
    """Boundary nodes at ~``lattice_spacing`` arc length plus an inner Cartesian lattice.

    Lattice nodes strictly inside the polygon are kept unless they lie closer
    than half a spacing to a boundary node.
    """
    poly = np.asarray(boundary, dtype=float).reshape(-1, 2)
    if np.allclose(poly[0], poly[-1]):
        poly = poly[:-1]
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    if not _is_simple(poly):
        raise GeometryError("boundary polyline is self-intersecting")
    h = float(lattice_spacing)
    if h <= 0:
        raise GeometryError("lattice spacing must be positive")
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    if h > (hi - lo).max():
        raise GeometryError("lattice spacing exceeds the domain extent")

    bnodes = []
    for k in range(len(poly)):
        a, b = poly[k], poly[(k + 1) % len(poly)]
        nseg = max(1, int(round(np.hypot(*(b - a)) / h)))
        for s in range(nseg):
            bnodes.append(a + (b - a) * s / nseg)
    bnodes = np.array(bnodes)

    nx = int(math.floor((hi[0] - lo[0]) / h + 1e-9)) + 1
    ny = int(math.floor((hi[1] - lo[1]) / h + 1e-9)) + 1
    gx, gy = np.meshgrid(lo[0] + h * np.arange(nx), lo[1] + h * np.arange(ny))
    lattice = np.column_stack([gx.ravel(), gy.ravel()])
    lattice = lattice[points_in_polygon(lattice, poly, include_boundary=False)]
    if len(lattice):
        d, _ = cKDTree(bnodes).query(lattice)
        lattice = lattice[d >= 0.5 * h]

    xy = np.vstack([bnodes, lattice]) if len(lattice) else bnodes
    return make_cloud(xy, [list(range(len(bnodes)))], thickness)


# --- connectivity -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConnectivityGraph:
    """Symmetric neighbour relation over all nodes (real and virtual).

    Virtual nodes only keep back-links to real nodes; virtual-virtual links
    are never formed.  ``r_m`` is the weighting radius per node.
    """

    neighbors: tuple[np.ndarray, ...]
    r_m: np.ndarray
    n_real: int

    def __post_init__(self):
        nb = tuple(_freeze(np.asarray(sorted(set(int(j) for j in row)), dtype=np.int64)) for row in self.neighbors)
        object.__setattr__(self, "neighbors", nb)
        object.__setattr__(self, "r_m", _freeze(np.asarray(self.r_m, dtype=float)))

    @property
    def pairs(self) -> np.ndarray:
        """Unordered neighbouring pairs ``(i, j)``, ``i < j``, with at least one real node."""
        out = [(i, j) for i in range(len(self.neighbors)) for j in self.neighbors[i] if i < j]
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    @property
    def real_pairs(self) -> np.ndarray:
        p = self.pairs
        return p[(p[:, 0] < self.n_real) & (p[:, 1] < self.n_real)]

    def is_symmetric(self) -> bool:
        for i, row in enumerate(self.neighbors):
            for j in row:
                if i not in set(self.neighbors[j].tolist()):
                    return False
        return True


def _check_min_neighbors(neighbors, n_real, min_neighbors):
    for i in range(n_real):
        if len(neighbors[i]) < min_neighbors:
            raise ConnectivityError(
                f"node {i} has {len(neighbors[i])} neighbours (< {min_neighbors}); enlarge the radius or add nodes",
                node=i,
            )


RADIUS_TIE_RTOL = 1e-12


def build_radius_connectivity(cloud: PointCloud, r_m: float, min_neighbors: int = 5) -> ConnectivityGraph:
    """Every node within ``r_m`` of a real node is its neighbour.

    The radius is inclusive up to a relative ``RADIUS_TIE_RTOL``, so lattice
    neighbours sitting exactly on the circle are kept despite round-off.
    """
    if r_m <= 0:
        raise ConnectivityError("influence radius must be positive")
    tree = cKDTree(cloud.xy)
    n = cloud.n_nodes
    neighbors: list[set[int]] = [set() for _ in range(n)]
    hits = tree.query_ball_point(cloud.xy[: cloud.n_real], r_m * (1 + RADIUS_TIE_RTOL))
    for i, row in enumerate(hits):
        for j in row:
            if j != i:
                neighbors[i].add(j)
                neighbors[j].add(i)
    _check_min_neighbors(neighbors, cloud.n_real, min_neighbors)
    return ConnectivityGraph(tuple(neighbors), np.full(n, float(r_m)), cloud.n_real)


def build_triangulation_connectivity(
    cloud: PointCloud,
    triangles: Iterable[Sequence[int]],
    min_neighbors: int = 5,
    radius_factor: float = 1.5,
) -> ConnectivityGraph:
    """Neighbours from triangle edges, topped up to ``min_neighbors``.

    Interior nodes borrow their nearest real non-neighbours; boundary nodes
    borrow their nearest virtual nodes.  Additions are symmetric.  The
    weighting radius is ``radius_factor`` times the farthest final neighbour.
    """
    n = cloud.n_nodes
    neighbors: list[set[int]] = [set() for _ in range(n)]
    for tri in triangles:
        tri = [int(v) for v in tri]
        if len(tri) != 3 or len(set(tri)) != 3:
            raise ConnectivityError(f"malformed triangle {tri}")
        for v in tri:
            if not (0 <= v < cloud.n_real):
                raise ConnectivityError(f"triangle {tri} references unknown node {v}")
        a, b, c = tri
        for i, j in ((a, b), (b, c), (c, a)):
            neighbors[i].add(j)
            neighbors[j].add(i)

    real = np.arange(cloud.n_real)
    virtual = np.arange(cloud.n_real, n)
    boundary = set(cloud.ids_of(NodeKind.BOUNDARY).tolist())
    for i in range(cloud.n_real):
        deficit = min_neighbors - len(neighbors[i])
        if deficit <= 0:
            continue
        pool = virtual if i in boundary else real
        pool = np.array([j for j in pool if j != i and j not in neighbors[i]], dtype=np.int64)
        if len(pool) < deficit:
            raise ConnectivityError(f"node {i}: not enough candidate nodes to reach {min_neighbors} neighbours", node=i)
        d = np.hypot(*(cloud.xy[pool] - cloud.xy[i]).T)
        order = np.lexsort((pool, d))[:deficit]
        for j in pool[order]:
            neighbors[i].add(int(j))
            neighbors[int(j)].add(i)

    _check_min_neighbors(neighbors, cloud.n_real, min_neighbors)
    r_m = np.zeros(n)
    for i in range(n):
        if neighbors[i]:
            idx = np.fromiter(neighbors[i], dtype=np.int64)
            r_m[i] = radius_factor * np.hypot(*(cloud.xy[idx] - cloud.xy[i]).T).max()
    return ConnectivityGraph(tuple(neighbors), r_m, cloud.n_real)
