"""Text file formats and the snapshot comparison metric.

All floating point output uses ``%.17e`` so that files round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError, NcdmmError
from .flow_model import RelPermTable
from .pointcloud import NodeKind, PointCloud

FMT = "{:.17e}"


def _rows(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if s:
                yield lineno, s.split()


# --- clouds -----------------------------------------------------------------------


def write_cloud(cloud: PointCloud, path, loops_path=None) -> None:
    """``id kind x y [nx ny [parent]]`` per node plus a loop file (default ``<path>.loops``)."""
    with open(path, "w") as fh:
        fh.write("# id kind x y [nx ny [parent]]\n")
        for i in range(cloud.n_nodes):
            x, y = cloud.xy[i]
            parts = [str(i), str(cloud.kinds[i]), FMT.format(x), FMT.format(y)]
            if not np.isnan(cloud.normals[i, 0]):
                parts += [FMT.format(cloud.normals[i, 0]), FMT.format(cloud.normals[i, 1])]
                if cloud.parents[i] >= 0:
                    parts.append(str(int(cloud.parents[i])))
            fh.write(" ".join(parts) + "\n")
    write_loops(cloud.boundary, loops_path or f"{path}.loops")


def write_loops(loops: Iterable[Sequence[int]], path) -> None:
    with open(path, "w") as fh:
        for loop in loops:
            fh.write(" ".join(str(int(i)) for i in loop) + "\n")


def read_loops(path) -> list[list[int]]:
    try:
        return [[int(v) for v in parts] for _, parts in _rows(path)]
    except ValueError as exc:
        raise GeometryError(f"{path}: malformed boundary loop ({exc})") from None


def read_cloud(path, loops_path=None, thickness: float = 1.0) -> PointCloud:
    ids, kinds, xy, nrm, par = [], [], [], [], []
    for lineno, parts in _rows(path):
        if len(parts) not in (4, 6, 7):
            raise GeometryError(f"{path}:{lineno}: expected 'id kind x y [nx ny [parent]]'")
        try:
            ids.append(int(parts[0]))
            kind = NodeKind(parts[1].upper()).value
            kinds.append(kind)
            xy.append((float(parts[2]), float(parts[3])))
            nrm.append((float(parts[4]), float(parts[5])) if len(parts) >= 6 else (math.nan, math.nan))
            par.append(int(parts[6]) if len(parts) == 7 else -1)
        except ValueError as exc:
            raise GeometryError(f"{path}:{lineno}: {exc}") from None
    if ids != list(range(len(ids))):
        raise GeometryError(f"{path}: node ids must be 0..n-1 in order")
    kinds_a = np.array(kinds)
    nrm_a = np.array(nrm, dtype=float).reshape(-1, 2)
    if np.any(np.isnan(nrm_a[kinds_a == NodeKind.VIRTUAL.value, 0])):
        raise GeometryError(f"{path}: virtual nodes need normals")
    if np.any((kinds_a == NodeKind.VIRTUAL.value) & (np.array(par) < 0)):
        raise GeometryError(f"{path}: virtual nodes need a parent id")
    loops = read_loops(loops_path or f"{path}.loops")
    cloud = PointCloud(np.array(xy), kinds_a, nrm_a, np.array(par), loops, thickness)
    # boundary nodes without explicit normals get bisector normals
    if np.any(np.isnan(nrm_a[kinds_a == NodeKind.BOUNDARY.value, 0])):
        from .pointcloud import make_cloud

        real = make_cloud(cloud.xy[: cloud.n_real], loops, thickness, nrm_a[: cloud.n_real])
        cloud = PointCloud(
            cloud.xy, cloud.kinds, np.vstack([real.normals, nrm_a[cloud.n_real :]]), cloud.parents, loops, thickness
        )
    return cloud


def read_triangles(path) -> list[tuple[int, int, int]]:
    out = []
    for lineno, parts in _rows(path):
        if len(parts) != 3:
            raise GeometryError(f"{path}:{lineno}: a triangle needs three node ids")
        try:
            out.append(tuple(int(v) for v in parts))
        except ValueError as exc:
            raise GeometryError(f"{path}:{lineno}: {exc}") from None
    return out


def read_relperm(path) -> RelPermTable:
    rows = []
    for lineno, parts in _rows(path):
        if len(parts) != 3:
            raise NcdmmError(f"{path}:{lineno}: expected 'Sw krw kro'")
        rows.append([float(v) for v in parts])
    return RelPermTable.from_rows(rows)


def read_columns(path, ncols: int | None = None) -> np.ndarray:
    data = [[float(v) for v in parts] for _, parts in _rows(path)]
    a = np.array(data, dtype=float)
    if ncols is not None and (a.ndim != 2 or a.shape[1] != ncols):
        raise NcdmmError(f"{path}: expected {ncols} columns")
    return a


# --- snapshots and reports ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Snapshot:
    node: np.ndarray
    xy: np.ndarray
    p: np.ndarray
    sw: np.ndarray


def write_snapshot(path, xy, p, sw) -> None:
    with open(path, "w") as fh:
        fh.write("# node x y p Sw\n")
        for i, ((x, y), pi, si) in enumerate(zip(xy, p, sw)):
            fh.write(f"{i} {FMT.format(x)} {FMT.format(y)} {FMT.format(pi)} {FMT.format(si)}\n")


def read_snapshot(path) -> Snapshot:
    a = read_columns(path, 5)
    return Snapshot(a[:, 0].astype(np.int64), a[:, 1:3], a[:, 3], a[:, 4])


def write_well_report(path, steps, wells) -> None:
    """One line per accepted step and well; rates are surface m³/d, positive into the reservoir."""
    with open(path, "w") as fh:
        fh.write("# time dt newton_iters well_id p_wf q_o q_w\n")
        for st in steps:
            for k, w in enumerate(wells):
                fh.write(
                    f"{FMT.format(st.time)} {FMT.format(st.dt)} {st.newton_iters} {w.name} "
                    f"{FMT.format(st.p_wf[k])} {FMT.format(st.rates[k, 0])} {FMT.format(st.rates[k, 1])}\n"
                )


def write_step_log(path, steps) -> None:
    with open(path, "w") as fh:
        fh.write("# time dt newton_iters cumulative_iters mass_error max_dp max_dsw\n")
        for st in steps:
            fh.write(
                f"{FMT.format(st.time)} {FMT.format(st.dt)} {st.newton_iters} {st.cumulative_iters} "
                f"{st.mass_error:.6e} {st.max_dp:.6e} {st.max_dsw:.6e}\n"
            )


# --- comparison -------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    error_p: float
    error_sw: float
    n_p: int

    def format(self) -> str:
        return f"error_p {self.error_p:.10e}\nerror_Sw {self.error_sw:.10e}\nn_p {self.n_p}\n"


def compare(candidate: Snapshot, reference: Snapshot, tolerance: float = 1e-6) -> ComparisonReport:
    """Root-mean-square pressure and saturation differences over matched nodes."""
    if len(candidate.p) == 0:
        raise NcdmmError("candidate snapshot is empty")
    tree = cKDTree(reference.xy)
    dist, idx = tree.query(candidate.xy, k=min(2, len(reference.p)))
    dist = np.atleast_2d(dist.T).T if dist.ndim == 1 else dist
    idx = np.atleast_2d(idx.T).T if idx.ndim == 1 else idx
    unmatched = np.flatnonzero(dist[:, 0] > tolerance)
    if len(unmatched):
        raise NcdmmError(f"candidate nodes {candidate.node[unmatched].tolist()} have no reference node within {tolerance} m")
    if dist.shape[1] > 1:
        amb = np.flatnonzero(dist[:, 1] <= tolerance)
        if len(amb):
            raise NcdmmError(f"candidate nodes {candidate.node[amb].tolist()} match several reference nodes")
    j = idx[:, 0]
    ep = math.sqrt(float(np.mean((candidate.p - reference.p[j]) ** 2)))
    es = math.sqrt(float(np.mean((candidate.sw - reference.sw[j]) ** 2)))
    return ComparisonReport(ep, es, len(j))


def compare_files(candidate, reference, tolerance: float = 1e-6) -> ComparisonReport:
    return compare(read_snapshot(candidate), read_snapshot(reference), tolerance)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
