"""Generalized finite difference stencils.

Each stencil holds the 5 x n coefficient block ``m_kj`` such that the
derivative ``k`` (dx, dy, dxx, dyy, dxy) at the centre is approximated by
``sum_j m_kj (u_j - u_i)``.  Coefficients come from the weighted
least-squares fit of a second-order Taylor expansion over the neighbours.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, TextIO

import numpy as np

from . import kernels
from .errors import StencilError
from .pointcloud import ConnectivityGraph, Node, PointCloud

log = logging.getLogger(__name__)

#: condition limit of the column-scaled normal matrix
COND_LIMIT = 1e12

ROWS = {"dx": 0, "dy": 1, "dxx": 2, "dyy": 3, "dxy": 4}


class WeightKind(str, Enum):
    QUARTIC_SPLINE = "w1"
    INVERSE_CUBIC = "w2"

    @classmethod
    def parse(cls, value) -> "WeightKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown weight kind {value!r}; expected 'w1' or 'w2'") from None


def weight(kind, r, r_m):
    """Weight of a neighbour at distance ``r`` for influence radius ``r_m``.

    Vectorized over ``r``.  Zero beyond the radius.  ``w2`` is singular at
    ``r = 0`` and raises.
    """
    kind = WeightKind.parse(kind)
    if r_m <= 0:
        raise ValueError("r_m must be positive")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be non-negative")
    t = r / r_m
    inside = t <= 1.0
    if kind is WeightKind.QUARTIC_SPLINE:
        w = 1.0 - 6.0 * t**2 + 8.0 * t**3 - 3.0 * t**4
    else:
        if np.any(r == 0):
            raise ValueError("inverse cubic weight is singular at r = 0")
        w = t**-3.0
    w = np.where(inside, w, 0.0)
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True, eq=False)
class LocalStencil:
    center: int
    neighbors: np.ndarray
    r_m: float
    coeffs: np.ndarray
    offsets: np.ndarray
    kind: WeightKind = WeightKind.INVERSE_CUBIC
    reduced: bool = False
    condition: float = 1.0

    @property
    def n(self) -> int:
        return len(self.neighbors)

    def column(self, node: int) -> int:
        hit = np.flatnonzero(self.neighbors == node)
        if len(hit) == 0:
            raise KeyError(f"node {node} is not in the stencil of node {self.center}")
        return int(hit[0])

    def row(self, which: str) -> np.ndarray:
        try:
            return self.coeffs[ROWS[which]]
        except KeyError:
            raise ValueError(f"unknown derivative {which!r}; expected one of {sorted(ROWS)}") from None


def _finish(center, neighbors, r_m, kind, coeffs, offsets, cond, reduced):
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise StencilError(
            f"node {center}: stencil normal matrix is rank deficient (condition {cond:.3g}); "
            "neighbours are degenerate or too few",
            node=center,
        )
    if reduced:
        log.debug("node %d: cross derivative unobservable, 4-term basis used", center)
    for a in (neighbors, coeffs, offsets):
        a.setflags(write=False)
    return LocalStencil(center, neighbors, float(r_m), coeffs, offsets, kind, bool(reduced), float(cond))


def build_stencil(center: Node, neighbors: Sequence[Node], kind, r_m: float) -> LocalStencil:
    """Stencil of one node from explicit neighbour nodes."""
    kind = WeightKind.parse(kind)
    if len(neighbors) < 4:
        raise StencilError(f"node {center.id}: {len(neighbors)} neighbours, too few for a stencil", node=center.id)
    ids = np.array([nb.id for nb in neighbors], dtype=np.int64)
    d = np.array([(nb.x - center.x, nb.y - center.y) for nb in neighbors], dtype=float)
    w = weight(kind, np.hypot(d[:, 0], d[:, 1]), r_m)
    coeffs, cond, reduced = kernels.stencil_batch(np.array([0, len(ids)]), d[:, 0], d[:, 1], np.square(w))
    return _finish(center.id, ids, r_m, kind, coeffs, d, cond[0], reduced[0])


def build_stencils(cloud: PointCloud, graph: ConnectivityGraph, kind) -> list[LocalStencil]:
    """Stencils for every real node, solved in one batched kernel call."""
    kind = WeightKind.parse(kind)
    n = cloud.n_real
    nbrs = [graph.neighbors[i] for i in range(n)]
    for i, row in enumerate(nbrs):
        if len(row) < 4:
            raise StencilError(f"node {i}: {len(row)} neighbours, too few for a stencil", node=i)
    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(r) for r in nbrs])
    flat = np.concatenate(nbrs) if n else np.zeros(0, dtype=np.int64)
    centers = np.repeat(np.arange(n), np.diff(ptr))
    d = cloud.xy[flat] - cloud.xy[centers]
    dist = np.hypot(d[:, 0], d[:, 1])
    t = dist / graph.r_m[centers]
    if kind is WeightKind.QUARTIC_SPLINE:
        w = np.where(t <= 1.0, 1.0 - 6.0 * t**2 + 8.0 * t**3 - 3.0 * t**4, 0.0)
    else:
        if np.any(dist == 0):
            bad = int(centers[np.flatnonzero(dist == 0)[0]])
            raise StencilError(f"node {bad}: coincident neighbour", node=bad)
        w = np.where(t <= 1.0, t**-3.0, 0.0)
    coeffs, cond, reduced = kernels.stencil_batch(ptr, d[:, 0], d[:, 1], w * w)
    out = []
    for i in range(n):
        a, b = ptr[i], ptr[i + 1]
        out.append(
            _finish(i, flat[a:b].copy(), graph.r_m[i], kind, coeffs[:, a:b].copy(), d[a:b].copy(), cond[i], reduced[i])
        )
    n_red = int(np.count_nonzero(reduced))
    if n_red:
        log.info("%d stencils solved without the cross-derivative term", n_red)
    return out


def apply_derivative(stencil: LocalStencil, values, which: str) -> float:
    """``sum_j m_kj (u_j - u_i)`` for the selected derivative row."""
    values = np.asarray(values, dtype=float)
    diff = values[stencil.neighbors] - values[stencil.center]
    return float(stencil.row(which) @ diff)


def laplacian_row(stencil: LocalStencil) -> np.ndarray:
    """Per-neighbour Laplacian coefficients ``m_3j + m_4j``."""
    return stencil.coeffs[2] + stencil.coeffs[3]


def dump_stencils(stencils: Sequence[LocalStencil], fh: TextIO) -> None:
    for st in stencils:
        fh.write(f"{st.center} {st.n} {st.r_m:.17e}\n")
        for k, j in enumerate(st.neighbors):
            m = " ".join(f"{v:.17e}" for v in st.coeffs[:, k])
            fh.write(f"{j} {st.offsets[k, 0]:.17e} {st.offsets[k, 1]:.17e} {m}\n")
