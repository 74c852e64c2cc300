"""Node control volumes from an overdetermined least-squares system.

Every connected pair of real nodes contributes one balance row
``a_ij V_i - a_ji V_j = 0`` where ``a_ij`` is the Laplacian coefficient of
``j`` in the stencil of ``i``.  A single heavily weighted row pins the total
in-domain volume.  Virtual nodes carry no volume unknowns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr

from .errors import ControlVolumeError
from .gfdm import LocalStencil, laplacian_row
from .pointcloud import ConnectivityGraph

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class CvConfig:
    """``weighting`` is ``"plain"`` or ``"empirical"``; ``G`` multiplies the volume row."""

    weighting: str = "empirical"
    G: float = 1.0e6
    solver_tolerance: float = 1.0e-12

    def __post_init__(self):
        if self.weighting not in ("plain", "empirical"):
            raise ValueError(f"unknown cv weighting {self.weighting!r}; expected 'plain' or 'empirical'")
        if not self.G >= 1.0:
            raise ValueError("G must be >= 1")
        if not 0.0 < self.solver_tolerance <= 1e-2:
            raise ValueError("solver tolerance must lie in (0, 1e-2]")


@dataclass(frozen=True, eq=False)
class CvSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    pairs: np.ndarray  # retained (i, j)
    theta: np.ndarray
    V_omega: float
    config: CvConfig
    dropped: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def n_unknowns(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class ControlVolumeSolution:
    V: np.ndarray
    V_bar: np.ndarray
    theta: np.ndarray
    residual_norm: float
    volume_constraint_error: float
    iterations: int = 0


def pair_weight(a_ij: float, a_ji: float) -> float:
    """min/max ratio of the two one-sided coefficients; 0 drops the pair."""
    if not (a_ij > 0.0 and a_ji > 0.0):
        return 0.0
    return min(a_ij, a_ji) / max(a_ij, a_ji)


def pair_coefficients(stencils: Sequence[LocalStencil], pairs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(a_ij, a_ji)`` for each real pair."""
    lap = [laplacian_row(st) for st in stencils]
    pos = [{int(j): k for k, j in enumerate(st.neighbors)} for st in stencils]
    a_ij = np.empty(len(pairs))
    a_ji = np.empty(len(pairs))
    for e, (i, j) in enumerate(pairs):
        try:
            a_ij[e] = lap[i][pos[i][int(j)]]
            a_ji[e] = lap[j][pos[j][int(i)]]
        except KeyError:
            raise ControlVolumeError(f"pair ({i}, {j}) is not mutual in the stencils", nodes=(i, j)) from None
    return a_ij, a_ji


def assemble_cv_system(
    graph: ConnectivityGraph,
    stencils: Sequence[LocalStencil],
    theta,
    V_omega: float,
    config: CvConfig = CvConfig(),
) -> CvSystem:
    """Sparse ``(retained pairs + 1) x n_real`` system and its right-hand side.

    Pair rows are divided by one global scale, the median of
    ``max(a_ij, a_ji)``, so that relative row weights are those of the raw
    equations while ``G`` keeps a cloud-independent meaning.
    """
    n = graph.n_real
    theta = np.asarray(theta, dtype=float)
    if len(theta) != n or len(stencils) != n:
        raise ControlVolumeError("angles and stencils must cover every real node")
    if V_omega <= 0:
        raise ControlVolumeError("domain volume must be positive")
    pairs = graph.real_pairs
    a_ij, a_ji = pair_coefficients(stencils, pairs)
    keep = (a_ij > 0) & (a_ji > 0)
    for i, j in pairs[~keep]:
        log.warning("pair (%d, %d) dropped: non-positive Laplacian coefficient", i, j)
    if not keep.any():
        raise ControlVolumeError("no pair equation retained; graph disconnected or stencils degenerate")
    a_ij, a_ji, kept = a_ij[keep], a_ji[keep], pairs[keep]
    if config.weighting == "empirical":
        w = np.minimum(a_ij, a_ji) / np.maximum(a_ij, a_ji)
    else:
        w = np.ones(len(kept))
    scale = float(np.median(np.maximum(a_ij, a_ji)))
    m = len(kept)
    rows = np.concatenate([np.arange(m), np.arange(m), np.full(n, m)])
    cols = np.concatenate([kept[:, 0], kept[:, 1], np.arange(n)])
    vals = np.concatenate([w * a_ij / scale, -w * a_ji / scale, config.G * theta / (2 * math.pi)])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m + 1, n))
    rhs = np.zeros(m + 1)
    rhs[m] = config.G * V_omega
    return CvSystem(A, rhs, kept, theta, float(V_omega), config, pairs[~keep])


def solve_cv(system: CvSystem) -> ControlVolumeSolution:
    """Least-squares volumes; dense for small systems, LSQR otherwise."""
    A, b = system.matrix, system.rhs
    n = system.n_unknowns
    iters = 0
    if n < DENSE_LIMIT:
        V = np.linalg.lstsq(A.toarray(), b, rcond=None)[0]
    else:
        tol = system.config.solver_tolerance
        # start from the uniform partition so LSQR only resolves the pair balance
        x0 = np.full(n, system.V_omega / (system.theta / (2 * math.pi)).sum())
        out = lsqr(A, b, atol=tol, btol=tol, iter_lim=10 * n, x0=x0)
        V, istop, iters = out[0], out[1], out[2]
        if istop not in (1, 2, 4, 5) or iters >= 10 * n:
            raise ControlVolumeError(
                f"least-squares solve did not converge (stop code {istop}, {iters} iterations, "
                f"residual {out[3]:.3e})"
            )
    bad = np.flatnonzero(V <= 0)
    if len(bad):
        raise ControlVolumeError(f"non-positive control volume at nodes {bad.tolist()}", nodes=bad.tolist())
    V_bar = system.theta / (2 * math.pi) * V
    res = float(np.linalg.norm(A @ V - b))
    err = abs(V_bar.sum() - system.V_omega) / system.V_omega
    return ControlVolumeSolution(V, V_bar, system.theta, res, float(err), int(iters))


def write_cv(solution: ControlVolumeSolution, fh: TextIO) -> None:
    fh.write("# node V V_bar theta\n")
    for i, (v, vb, t) in enumerate(zip(solution.V, solution.V_bar, solution.theta)):
        fh.write(f"{i} {v:.17e} {vb:.17e} {t:.17e}\n")
