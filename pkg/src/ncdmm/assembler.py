"""Global two-phase system: transmissibilities, residual, Jacobian, boundary rows.

Unknown ordering is node-major: real node ``i`` owns ``x[2i] = p`` and
``x[2i+1] = Sw``; pressure unknowns of the virtual nodes that enter a
derivative-condition stencil follow; each well's bottom-hole pressure comes
last.  Residual rows follow the same layout (oil row ``2i``, water row
``2i+1``).  All residual rows are surface volume rates in m³/d.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from . import kernels
from .control_volume import ControlVolumeSolution, pair_coefficients
from .errors import ConnectivityError, PhysicsError
from .flow_model import (
    FluidProps,
    RelPermTable,
    RockProps,
    WellSpec,
    harmonic_perm,
    porosity,
    well_index,
    well_source,
)
from .gfdm import LocalStencil
from .pointcloud import ConnectivityGraph, NodeKind, PointCloud, _incident_normals
from .units import DARCY

log = logging.getLogger(__name__)


# --- transmissibilities -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransmissibilitySet:
    """Per retained real pair: geometric part, harmonic permeability and total ``T``.

    ``T = DARCY * thickness * k * T_geo`` in m³/d per (MPa / mPa·s).
    """

    pairs: np.ndarray
    T_geo: np.ndarray
    k: np.ndarray
    thickness: float
    asymmetry: np.ndarray
    dropped: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def T(self) -> np.ndarray:
        return DARCY * self.thickness * self.k * self.T_geo

    def with_permeability(self, k_node) -> "TransmissibilitySet":
        k_node = np.asarray(k_node, dtype=float)
        return replace(self, k=harmonic_perm(k_node[self.pairs[:, 0]], k_node[self.pairs[:, 1]]))


def build_transmissibilities(
    graph: ConnectivityGraph,
    stencils: Sequence[LocalStencil],
    cv: ControlVolumeSolution,
    rock: RockProps,
) -> TransmissibilitySet:
    """Symmetrized ``T_geo = (V_i a_ij + V_j a_ji) / 2`` on raw volumes."""
    pairs = graph.real_pairs
    a_ij, a_ji = pair_coefficients(stencils, pairs)
    left = cv.V[pairs[:, 0]] * a_ij
    right = cv.V[pairs[:, 1]] * a_ji
    keep = (left > 0) & (right > 0)
    for i, j in pairs[~keep]:
        log.warning("transmissibility of pair (%d, %d) dropped: non-positive one-sided product", i, j)
    left, right, kept = left[keep], right[keep], pairs[keep]
    T_geo = 0.5 * (left + right)
    asym = np.abs(left - right) / T_geo
    n = graph.n_real
    touched = np.zeros(n, dtype=bool)
    touched[kept.ravel()] = True
    if n > 1 and not touched.all():
        bad = np.flatnonzero(~touched)
        raise ConnectivityError(f"nodes {bad.tolist()} have no retained transmissibility", node=int(bad[0]))
    k_node = rock.perm(n)
    k = harmonic_perm(k_node[kept[:, 0]], k_node[kept[:, 1]]) if len(kept) else np.zeros(0)
    if len(asym):
        log.info("transmissibility asymmetry: max %.3e, mean %.3e", asym.max(), asym.mean())
    return TransmissibilitySet(kept, T_geo, np.atleast_1d(k), rock.thickness, asym, pairs[~keep])


def dump_transmissibilities(trans: TransmissibilitySet, fh: TextIO) -> None:
    fh.write("# i j T asymmetry_ratio\n")
    for (i, j), t, a in zip(trans.pairs, trans.T, trans.asymmetry):
        fh.write(f"{i} {j} {t:.17e} {a:.17e}\n")


# --- boundary conditions -------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryCondition:
    """``closed``, ``dirichlet`` (``p``, optional ``sw``), ``neumann`` (``flux`` = dp/dn in MPa/m)
    or ``robin`` (``alpha p + beta dp/dn = gamma``)."""

    kind: str = "closed"
    p: float | None = None
    sw: float | None = None
    flux: float = 0.0
    alpha: float = 0.0
    beta: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("closed", "dirichlet", "neumann", "robin"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "dirichlet" and self.p is None:
            raise ValueError("dirichlet condition needs a pressure value")
        if self.kind == "robin" and self.beta == 0.0:
            raise ValueError("robin condition needs a non-zero derivative coefficient")

    @property
    def is_derivative(self) -> bool:
        return self.kind in ("neumann", "robin")

    def derivative_coefficients(self) -> tuple[float, float, float]:
        """``(alpha, beta, gamma)`` of ``alpha p + beta dp/dn = gamma``."""
        if self.kind == "neumann":
            return 0.0, 1.0, float(self.flux)
        return float(self.alpha), float(self.beta), float(self.gamma)


CLOSED = BoundaryCondition("closed")


@dataclass(frozen=True, eq=False)
class BoundaryConditionSet:
    """Condition per boundary node; nodes not listed are closed."""

    conditions: Mapping[int, BoundaryCondition] = field(default_factory=dict)

    def __getitem__(self, node: int) -> BoundaryCondition:
        return self.conditions.get(int(node), CLOSED)

    def of_kind(self, kind: str) -> list[int]:
        return sorted(i for i, bc in self.conditions.items() if bc.kind == kind)

    @property
    def derivative_nodes(self) -> list[int]:
        return sorted(i for i, bc in self.conditions.items() if bc.is_derivative)

    @classmethod
    def from_selector(cls, cloud: PointCloud, rules: Sequence[tuple[Callable, BoundaryCondition]]):
        """Later rules override earlier ones; selectors map ``(x, y) -> bool``."""
        out: dict[int, BoundaryCondition] = {}
        for i in cloud.ids_of(NodeKind.BOUNDARY):
            for sel, bc in rules:
                if sel(*cloud.xy[i]):
                    out[int(i)] = bc
        return cls(out)


# --- state ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReservoirState:
    p: np.ndarray
    sw: np.ndarray
    p_wf: np.ndarray
    time: float = 0.0
    p_virtual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def copy(self, **kw) -> "ReservoirState":
        base = dict(p=self.p.copy(), sw=self.sw.copy(), p_wf=self.p_wf.copy(), time=self.time,
                    p_virtual=self.p_virtual.copy())
        base.update(kw)
        return ReservoirState(**base)


@dataclass(frozen=True)
class DerivativeBoundary:
    """Linear pieces of the derivative-condition treatment.

    ``grad`` maps the pressure vector (real then virtual unknowns) to the
    length-weighted outward normal gradient ``g_i`` of each real node (m·MPa/m);
    the boundary influx of phase ``a`` is ``DARCY k_i H lambda_a,i g_i``.
    ``rows``/``rhs`` are the virtual-node equations ``rows @ p = rhs``.
    """

    virtual_nodes: np.ndarray
    parents: np.ndarray
    grad: sp.csr_matrix
    rows: sp.csr_matrix
    rhs: np.ndarray
    row_scale: np.ndarray


@dataclass(frozen=True, eq=False)
class MassBalance:
    mass_old: np.ndarray  # (oil, water) surface m³
    mass_new: np.ndarray
    wells: np.ndarray  # net well volume into the domain over the step
    boundary: np.ndarray  # net boundary influx over the step

    @property
    def error(self) -> float:
        d = self.mass_new - self.mass_old - self.wells - self.boundary
        return float(np.abs(d).sum() / self.mass_old.sum())


class FlowSystem:
    """Residual and Jacobian of the fully implicit two-phase equations.

    Can be built from a complete discretization with :meth:`from_discretization`
    or directly from volumes and transmissibilities (e.g. a single tank cell).
    ``V_bar`` are in-domain areas (m²); volumes are ``V_bar * thickness``.
    """

    def __init__(
        self,
        V_bar,
        trans: TransmissibilitySet,
        fluid: FluidProps,
        rock: RockProps,
        relperm: RelPermTable,
        wells: Sequence[WellSpec] = (),
        well_indices: Sequence[float] | None = None,
        dirichlet: Mapping[int, tuple[float, float]] | None = None,
        derivative: DerivativeBoundary | None = None,
    ):
        self.V_bar = np.asarray(V_bar, dtype=float)
        self.n = len(self.V_bar)
        self.trans = trans
        self.fluid = fluid
        self.rock = rock
        self.relperm = relperm
        self.k = rock.perm(self.n)
        self.H = rock.thickness
        self.pore_ref = self.V_bar * self.H * rock.phi_ref
        self.T = trans.T
        self.pi = np.ascontiguousarray(trans.pairs[:, 0], dtype=np.int64) if len(trans.pairs) else np.zeros(0, np.int64)
        self.pj = np.ascontiguousarray(trans.pairs[:, 1], dtype=np.int64) if len(trans.pairs) else np.zeros(0, np.int64)
        self.wells = list(wells)
        for w in self.wells:
            if not 0 <= w.node < self.n:
                raise PhysicsError(f"well {w.name} sits on unknown node {w.node}")
        if well_indices is None:
            well_indices = [
                well_index(self.k[w.node], self.H, self.V_bar[w.node] * self.H, w.r_w, w.skin) for w in self.wells
            ]
        self.WI = np.asarray(well_indices, dtype=float)
        self.dirichlet = dict(dirichlet or {})
        self.deriv = derivative
        self.n_virtual = 0 if derivative is None else len(derivative.virtual_nodes)
        self.virtual_parents = np.zeros(0, dtype=np.int64) if derivative is None else derivative.parents
        self.n_wells = len(self.wells)
        self.off_v = 2 * self.n
        self.off_w = self.off_v + self.n_virtual
        self.size = self.off_w + self.n_wells
        self.is_dirichlet = np.zeros(self.n, dtype=bool)
        for i in self.dirichlet:
            self.is_dirichlet[i] = True
        self.row_o = np.where(self.is_dirichlet, -1, 2 * np.arange(self.n)).astype(np.int64)
        self.row_w = np.where(self.is_dirichlet, -1, 2 * np.arange(self.n) + 1).astype(np.int64)
        self.idx_p = (2 * np.arange(self.n)).astype(np.int64)
        self.idx_s = self.idx_p + 1
        # pressure unknown slots in x: real nodes then virtual nodes
        self.p_slots = np.concatenate([self.idx_p, self.off_v + np.arange(self.n_virtual)])

    def replace_well(self, k: int, spec: WellSpec) -> None:
        old = self.wells[k]
        self.wells[k] = spec
        if spec.node != old.node or spec.r_w != old.r_w or spec.skin != old.skin:
            self.WI[k] = well_index(self.k[spec.node], self.H, self.V_bar[spec.node] * self.H, spec.r_w, spec.skin)

    # construction from the full meshless discretization

    @classmethod
    def from_discretization(
        cls,
        cloud: PointCloud,
        stencils: Sequence[LocalStencil],
        cv: ControlVolumeSolution,
        trans: TransmissibilitySet,
        fluid: FluidProps,
        rock: RockProps,
        relperm: RelPermTable,
        wells: Sequence[WellSpec] = (),
        bcs: BoundaryConditionSet | None = None,
        sw_init: float | np.ndarray = 0.2,
    ) -> "FlowSystem":
        bcs = bcs or BoundaryConditionSet()
        sw_init = np.broadcast_to(np.asarray(sw_init, dtype=float), (cloud.n_real,))
        dirichlet = {}
        for i in bcs.of_kind("dirichlet"):
            bc = bcs[i]
            dirichlet[i] = (float(bc.p), float(sw_init[i] if bc.sw is None else bc.sw))
        deriv = build_derivative_boundary(cloud, stencils, bcs, dirichlet) if bcs.derivative_nodes else None
        return cls(cv.V_bar, trans, fluid, rock, relperm, wells, None, dirichlet, deriv)

    # state <-> vector

    def pack(self, state: ReservoirState) -> np.ndarray:
        x = np.empty(self.size)
        x[0 : 2 * self.n : 2] = state.p
        x[1 : 2 * self.n : 2] = state.sw
        if self.n_virtual:
            pv = state.p_virtual
            if len(pv) != self.n_virtual:
                pv = np.asarray(state.p)[self.virtual_parents]
            x[self.off_v : self.off_w] = pv
        x[self.off_w :] = state.p_wf
        return x

    def unpack(self, x: np.ndarray, time: float) -> ReservoirState:
        return ReservoirState(
            p=x[0 : 2 * self.n : 2].copy(),
            sw=x[1 : 2 * self.n : 2].copy(),
            p_wf=x[self.off_w :].copy(),
            time=time,
            p_virtual=x[self.off_v : self.off_w].copy(),
        )

    def initial_state(self, p0, sw0) -> ReservoirState:
        p = np.broadcast_to(np.asarray(p0, dtype=float), (self.n,)).copy()
        sw = np.broadcast_to(np.asarray(sw0, dtype=float), (self.n,)).copy()
        for i, (pd, sd) in self.dirichlet.items():
            p[i], sw[i] = pd, sd
        p_wf = np.array([w.value if w.control == "bhp" else p[w.node] for w in self.wells], dtype=float)
        pv = p[self.virtual_parents] if self.n_virtual else np.zeros(0)
        return ReservoirState(p, sw, p_wf, 0.0, pv)

    # properties

    def _props(self, p, sw):
        f = self.fluid
        Bo, dBo = f.b_oil(p)
        Bw, dBw = f.b_water(p)
        phi = porosity(self.rock.phi_ref, self.rock.c_r, p, self.rock.p_ref)
        dphi = np.full(self.n, self.rock.phi_ref * self.rock.c_r)
        krw, kro, dkrw, dkro = self.relperm.evaluate(sw)
        return dict(Bo=np.atleast_1d(Bo), dBo=np.atleast_1d(dBo), Bw=np.atleast_1d(Bw), dBw=np.atleast_1d(dBw),
                    phi=np.atleast_1d(phi), dphi=dphi, krw=np.atleast_1d(krw), kro=np.atleast_1d(kro),
                    dkrw=np.atleast_1d(dkrw), dkro=np.atleast_1d(dkro))

    def masses(self, state: ReservoirState) -> np.ndarray:
        """Surface volumes (oil, water) in place over all real nodes."""
        pr = self._props(state.p, state.sw)
        vol = self.V_bar * self.H * pr["phi"]
        return np.array([np.sum(vol * (1 - state.sw) / pr["Bo"]), np.sum(vol * state.sw / pr["Bw"])])

    # assembly

    def assemble(self, x: np.ndarray, x_old: np.ndarray, dt: float, jacobian: bool = True):
        """Residual vector and (optionally) the sparse Jacobian at ``x``."""
        if dt <= 0:
            raise PhysicsError("time step must be positive")
        n = self.n
        p = x[0 : 2 * n : 2]
        sw = x[1 : 2 * n : 2]
        p_old = x_old[0 : 2 * n : 2]
        sw_old = x_old[1 : 2 * n : 2]
        pr = self._props(p, sw)
        po = self._props(p_old, sw_old)
        R = np.zeros(self.size)
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []

        mu_o = np.full(n, self.fluid.mu_o)
        mu_w = np.full(n, self.fluid.mu_w)

        # pair fluxes
        npair = len(self.pi)
        if npair:
            jr = np.empty(kernels.NNZ_PER_PAIR * npair, dtype=np.int64)
            jc = np.empty(kernels.NNZ_PER_PAIR * npair, dtype=np.int64)
            jv = np.empty(kernels.NNZ_PER_PAIR * npair)
            kernels.pair_flux(
                self.pi, self.pj, self.T, p, pr["krw"], pr["kro"], pr["dkrw"], pr["dkro"],
                pr["Bw"], pr["Bo"], pr["dBw"], pr["dBo"], mu_w, mu_o,
                self.idx_p, self.idx_s, self.row_o, self.row_w, R, jr, jc, jv,
            )
            ok = jr >= 0
            rows.append(jr[ok])
            cols.append(jc[ok])
            vals.append(jv[ok])

        # accumulation on non-Dirichlet nodes
        free = ~self.is_dirichlet
        c = self.V_bar * self.H / dt
        acc_o = c * (pr["phi"] * (1 - sw) / pr["Bo"] - po["phi"] * (1 - sw_old) / po["Bo"])
        acc_w = c * (pr["phi"] * sw / pr["Bw"] - po["phi"] * sw_old / po["Bw"])
        R[self.row_o[free]] -= acc_o[free]
        R[self.row_w[free]] -= acc_w[free]
        if jacobian:
            fi = np.flatnonzero(free)
            d_o_dp = c * (1 - sw) * (pr["dphi"] / pr["Bo"] - pr["phi"] * pr["dBo"] / pr["Bo"] ** 2)
            d_w_dp = c * sw * (pr["dphi"] / pr["Bw"] - pr["phi"] * pr["dBw"] / pr["Bw"] ** 2)
            d_o_ds = -c * pr["phi"] / pr["Bo"]
            d_w_ds = c * pr["phi"] / pr["Bw"]
            for rr, cc, vv in (
                (self.row_o, self.idx_p, d_o_dp),
                (self.row_o, self.idx_s, d_o_ds),
                (self.row_w, self.idx_p, d_w_dp),
                (self.row_w, self.idx_s, d_w_ds),
            ):
                rows.append(rr[fi])
                cols.append(cc[fi])
                vals.append(-vv[fi])

        # Dirichlet rows
        for i, (pd, sd) in self.dirichlet.items():
            R[2 * i] = p[i] - pd
            R[2 * i + 1] = sw[i] - sd
        if jacobian and self.dirichlet:
            di = np.array(sorted(self.dirichlet), dtype=np.int64)
            rows += [2 * di, 2 * di + 1]
            cols += [2 * di, 2 * di + 1]
            vals += [np.ones(len(di)), np.ones(len(di))]

        # derivative boundary conditions
        if self.n_virtual:
            self._assemble_derivative(x, p, pr, R, rows, cols, vals, jacobian)

        # wells
        for w_id, (w, WI) in enumerate(zip(self.wells, self.WI)):
            self._assemble_well(w_id, w, WI, x, p, pr, R, rows, cols, vals, jacobian)

        if not np.all(np.isfinite(R)):
            bad = int(np.flatnonzero(~np.isfinite(R))[0])
            raise PhysicsError(f"non-finite residual in row {bad} ({self.describe_row(bad)})")
        if not jacobian:
            return R, None
        J = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.size, self.size)
        )
        return R, J

    def residual(self, x, x_old, dt):
        return self.assemble(x, x_old, dt, jacobian=False)[0]

    def fd_jacobian(self, x, x_old, dt, eps=1e-7) -> np.ndarray:
        """Dense central-difference Jacobian, for verification only."""
        J = np.empty((self.size, self.size))
        for k in range(self.size):
            h = eps * max(1.0, abs(x[k]))
            xp = x.copy()
            xm = x.copy()
            xp[k] += h
            xm[k] -= h
            J[:, k] = (self.residual(xp, x_old, dt) - self.residual(xm, x_old, dt)) / (2 * h)
        return J

    def _assemble_derivative(self, x, p, pr, R, rows, cols, vals, jacobian):
        d = self.deriv
        p_all = x[self.p_slots]
        g = d.grad @ p_all
        lam_o = pr["kro"] / (pr["Bo"] * self.fluid.mu_o)
        lam_w = pr["krw"] / (pr["Bw"] * self.fluid.mu_w)
        base = DARCY * self.k * self.H
        bo = base * lam_o * g
        bw = base * lam_w * g
        free = ~self.is_dirichlet
        nz = np.flatnonzero((np.diff(d.grad.indptr) > 0) & free)
        R[self.row_o[nz]] += bo[nz]
        R[self.row_w[nz]] += bw[nz]
        # virtual rows
        R[self.off_v : self.off_w] = d.rows @ p_all - d.rhs
        if not jacobian:
            return
        G = d.grad[nz].tocoo()
        gi = nz[G.row]
        rows += [self.row_o[gi], self.row_w[gi]]
        cols += [self.p_slots[G.col], self.p_slots[G.col]]
        vals += [base[gi] * lam_o[gi] * G.data, base[gi] * lam_w[gi] * G.data]
        dlo_dp = -pr["kro"] * pr["dBo"] / (pr["Bo"] ** 2 * self.fluid.mu_o)
        dlw_dp = -pr["krw"] * pr["dBw"] / (pr["Bw"] ** 2 * self.fluid.mu_w)
        dlo_ds = pr["dkro"] / (pr["Bo"] * self.fluid.mu_o)
        dlw_ds = pr["dkrw"] / (pr["Bw"] * self.fluid.mu_w)
        for rr, cc, vv in (
            (self.row_o, self.idx_p, dlo_dp),
            (self.row_w, self.idx_p, dlw_dp),
            (self.row_o, self.idx_s, dlo_ds),
            (self.row_w, self.idx_s, dlw_ds),
        ):
            rows.append(rr[nz])
            cols.append(cc[nz])
            vals.append(base[nz] * vv[nz] * g[nz])
        V = d.rows.tocoo()
        rows.append(self.off_v + V.row)
        cols.append(self.p_slots[V.col])
        vals.append(V.data)

    def _assemble_well(self, w_id, w, WI, x, p, pr, R, rows, cols, vals, jacobian):
        i = w.node
        slot = self.off_w + w_id
        p_wf = x[slot]
        ev = well_source(
            w, p[i], p_wf, WI, pr["krw"][i], pr["kro"][i], pr["dkrw"][i], pr["dkro"][i],
            pr["Bo"][i], pr["Bw"][i], pr["dBo"][i], pr["dBw"][i], self.fluid,
        )
        if not self.is_dirichlet[i]:
            R[2 * i] += ev.q_o
            R[2 * i + 1] += ev.q_w
            if jacobian:
                rows.append(np.array([2 * i, 2 * i, 2 * i, 2 * i + 1, 2 * i + 1, 2 * i + 1]))
                cols.append(np.array([2 * i, 2 * i + 1, slot, 2 * i, 2 * i + 1, slot]))
                vals.append(np.array([ev.dqo_dp, ev.dqo_ds, ev.dqo_dpwf, ev.dqw_dp, ev.dqw_ds, ev.dqw_dpwf]))
        if w.control == "bhp":
            R[slot] = p_wf - w.value
            if jacobian:
                rows.append(np.array([slot]))
                cols.append(np.array([slot]))
                vals.append(np.array([1.0]))
            return
        if w.kind == "producer":
            mob = pr["kro"][i] / self.fluid.mu_o + pr["krw"][i] / self.fluid.mu_w
            if mob <= 0:
                raise PhysicsError(f"producer {w.name} has zero total mobility and cannot meet its rate")
            R[slot] = w.value + ev.q_o + ev.q_w
            d = (ev.dqo_dp + ev.dqw_dp, ev.dqo_ds + ev.dqw_ds, ev.dqo_dpwf + ev.dqw_dpwf)
        else:
            R[slot] = ev.q_w - w.value
            d = (ev.dqw_dp, ev.dqw_ds, ev.dqw_dpwf)
        if jacobian:
            rows.append(np.array([slot, slot, slot]))
            cols.append(np.array([2 * i, 2 * i + 1, slot]))
            vals.append(np.array(d))

    # diagnostics

    def describe_row(self, r: int) -> str:
        if r < 2 * self.n:
            return f"node {r // 2}, {'oil' if r % 2 == 0 else 'water'}"
        if r < self.off_w:
            return f"virtual node {int(self.deriv.virtual_nodes[r - self.off_v])}"
        return f"well {self.wells[r - self.off_w].name}"

    def row_scales(self, dt: float) -> np.ndarray:
        """Divisors turning residual rows into dimensionless convergence measures."""
        s = np.ones(self.size)
        pv = np.maximum(self.pore_ref / dt, 1e-30)
        s[0 : 2 * self.n : 2] = pv
        s[1 : 2 * self.n : 2] = pv
        s[2 * np.flatnonzero(self.is_dirichlet)] = 1.0
        s[2 * np.flatnonzero(self.is_dirichlet) + 1] = 1.0
        if self.n_virtual:
            s[self.off_v : self.off_w] = self.deriv.row_scale
        for k, w in enumerate(self.wells):
            s[self.off_w + k] = w.value if w.control == "rate" else 1.0
        return s

    def pair_fluxes(self, state: ReservoirState):
        """``(oil, water)`` surface flux into ``i`` from ``j`` per retained pair."""
        pr = self._props(state.p, state.sw)
        R = np.zeros(self.size)
        m = kernels.NNZ_PER_PAIR * len(self.pi)
        dummy_i = np.empty(m, dtype=np.int64)
        dummy_v = np.empty(m)
        return kernels.pair_flux(
            self.pi, self.pj, self.T, state.p, pr["krw"], pr["kro"], pr["dkrw"], pr["dkro"],
            pr["Bw"], pr["Bo"], pr["dBw"], pr["dBo"],
            np.full(self.n, self.fluid.mu_w), np.full(self.n, self.fluid.mu_o),
            self.idx_p, self.idx_s, self.row_o, self.row_w, R, dummy_i, np.empty(m, dtype=np.int64), dummy_v,
        )

    def well_rates(self, state: ReservoirState) -> np.ndarray:
        """``(n_wells, 2)`` surface rates (oil, water), positive into the reservoir."""
        pr = self._props(state.p, state.sw)
        out = np.zeros((self.n_wells, 2))
        for k, (w, WI) in enumerate(zip(self.wells, self.WI)):
            i = w.node
            ev = well_source(w, state.p[i], state.p_wf[k], WI, pr["krw"][i], pr["kro"][i], pr["dkrw"][i],
                             pr["dkro"][i], pr["Bo"][i], pr["Bw"][i], pr["dBo"][i], pr["dBw"][i], self.fluid)
            out[k] = ev.q_o, ev.q_w
        return out

    def boundary_influx(self, state: ReservoirState) -> np.ndarray:
        """Net (oil, water) surface rate entering the non-Dirichlet nodes through the boundary."""
        out = np.zeros(2)
        fo, fw = self.pair_fluxes(state)
        d_i = self.is_dirichlet[self.pi]
        d_j = self.is_dirichlet[self.pj]
        # flux into i from a Dirichlet j, and out of i into a Dirichlet j
        m = d_j & ~d_i
        out += [fo[m].sum(), fw[m].sum()]
        m = d_i & ~d_j
        out -= [fo[m].sum(), fw[m].sum()]
        if self.n_virtual:
            x = self.pack(state)
            g = self.deriv.grad @ x[self.p_slots]
            pr = self._props(state.p, state.sw)
            base = DARCY * self.k * self.H * g
            free = ~self.is_dirichlet
            out += [np.sum((base * pr["kro"] / (pr["Bo"] * self.fluid.mu_o))[free]),
                    np.sum((base * pr["krw"] / (pr["Bw"] * self.fluid.mu_w))[free])]
        return out

    def mass_balance(self, old: ReservoirState, new: ReservoirState, dt: float) -> MassBalance:
        """Balance over non-Dirichlet nodes for one implicit step."""
        free = ~self.is_dirichlet

        def m(state):
            pr = self._props(state.p, state.sw)
            vol = (self.V_bar * self.H * pr["phi"])[free]
            return np.array([np.sum(vol * (1 - state.sw[free]) / pr["Bo"][free]),
                             np.sum(vol * state.sw[free] / pr["Bw"][free])])

        q = self.well_rates(new)
        on_free = np.array([free[w.node] for w in self.wells], dtype=bool)
        wells = q[on_free].sum(axis=0) * dt if self.n_wells else np.zeros(2)
        return MassBalance(m(old), m(new), wells, self.boundary_influx(new) * dt)


def build_derivative_boundary(
    cloud: PointCloud,
    stencils: Sequence[LocalStencil],
    bcs: BoundaryConditionSet,
    dirichlet: Mapping[int, tuple[float, float]],
) -> DerivativeBoundary:
    """Virtual pressure unknowns, their rows and the boundary-gradient operator.

    A virtual node gets an unknown when it appears in the stencil of a node
    under a derivative condition.  Its row depends on its parent: the
    parent's derivative condition along the virtual node's normal (a corner
    diagonal node instead closes the mixed second derivative), ``p_v = p_P``
    for a closed parent and ``p_v = f`` for a Dirichlet parent.
    """
    n = cloud.n_real
    dnodes = bcs.derivative_nodes
    needed: set[int] = set()
    for i in dnodes:
        for j in stencils[i].neighbors:
            if j >= n:
                needed.add(int(j))
    # the derivative rows of a parent use its whole stencil
    changed = True
    while changed:
        changed = False
        for v in list(needed):
            par = int(cloud.parents[v])
            if bcs[par].is_derivative:
                for j in stencils[par].neighbors:
                    if j >= n and int(j) not in needed:
                        needed.add(int(j))
                        changed = True
    vnodes = np.array(sorted(needed), dtype=np.int64)
    vpos = {int(v): n + k for k, v in enumerate(vnodes)}
    ncol = n + len(vnodes)

    def col(j):
        return int(j) if j < n else vpos[int(j)]

    def deriv_row(par, direction):
        st = stencils[par]
        c = direction[0] * st.coeffs[0] + direction[1] * st.coeffs[1]
        return st, c

    edge_normals = {}
    edge_len = {}
    for loop in cloud.boundary:
        pts = cloud.xy[list(loop)]
        m = len(loop)
        for k, i in enumerate(loop):
            n1, n2 = _incident_normals(pts, k)
            l1 = float(np.hypot(*(pts[k] - pts[(k - 1) % m])))
            l2 = float(np.hypot(*(pts[(k + 1) % m] - pts[k])))
            edge_normals[i] = (n1, n2)
            edge_len[i] = (l1, l2)

    # virtual nodes per parent, classified by their normal
    children: dict[int, list[int]] = {}
    for v in range(n, cloud.n_nodes):
        children.setdefault(int(cloud.parents[v]), []).append(v)

    def role(v):
        """'edge1', 'edge2', 'diag' or 'bisector' for a virtual node."""
        par = int(cloud.parents[v])
        if len(children[par]) == 1:
            return "bisector"
        n1, n2 = edge_normals[par]
        nv = cloud.normals[v]
        if np.allclose(nv, n1, atol=1e-9):
            return "edge1"
        if np.allclose(nv, n2, atol=1e-9):
            return "edge2"
        return "diag"

    rows_r, rows_c, rows_v = [], [], []
    rhs = np.zeros(len(vnodes))
    scale = np.ones(len(vnodes))
    for k, v in enumerate(vnodes):
        par = int(cloud.parents[v])
        bc = bcs[par]
        r = k
        if bc.is_derivative:
            alpha, beta, gamma = bc.derivative_coefficients()
            rl = role(v)
            st = stencils[par]
            if rl == "diag" and not st.reduced:
                n1, n2 = edge_normals[par]
                c = (n1[0] * n2[0]) * st.coeffs[2] + (n1[1] * n2[1]) * st.coeffs[3] + (
                    n1[0] * n2[1] + n1[1] * n2[0]
                ) * st.coeffs[4]
                a0, g0 = 0.0, 0.0
                h = float(np.abs(st.offsets).max())
                scale[k] = 1.0 / h**2
            elif rl == "diag":
                rows_r += [r, r]
                rows_c += [col(v), par]
                rows_v += [1.0, -1.0]
                continue
            else:
                _, c = deriv_row(par, cloud.normals[v])
                c = beta * c
                a0, g0 = alpha, gamma
                scale[k] = 1.0 / float(np.abs(st.offsets).max())
            for jj, cj in zip(st.neighbors, c):
                rows_r.append(r)
                rows_c.append(col(jj))
                rows_v.append(cj)
            rows_r.append(r)
            rows_c.append(par)
            rows_v.append(-c.sum() + a0)
            rhs[k] = g0
        elif bc.kind == "dirichlet":
            rows_r.append(r)
            rows_c.append(col(v))
            rows_v.append(1.0)
            rhs[k] = dirichlet[par][0]
        else:
            rows_r += [r, r]
            rows_c += [col(v), par]
            rows_v += [1.0, -1.0]
    rows = sp.csr_matrix((rows_v, (rows_r, rows_c)), shape=(len(vnodes), ncol))

    # boundary gradient operator: sum over constrained directions of length * dp/dn
    g_r, g_c, g_v = [], [], []
    for i in dnodes:
        st = stencils[i]
        kids = children.get(i, [])
        l1, l2 = edge_len[i]
        n1, n2 = edge_normals[i]
        dirs = []
        if len(kids) == 1:
            nb = cloud.normals[kids[0]]
            w = float(np.dot(0.5 * (l1 * n1 + l2 * n2), nb))
            dirs.append((nb, w))
        elif len(kids) > 1:
            dirs += [(n1, 0.5 * l1), (n2, 0.5 * l2)]
        else:
            raise ConnectivityError(f"boundary node {i} under a derivative condition has no virtual node", node=i)
        for direction, w in dirs:
            _, c = deriv_row(i, direction)
            for jj, cj in zip(st.neighbors, c):
                g_r.append(i)
                g_c.append(col(jj))
                g_v.append(w * cj)
            g_r.append(i)
            g_c.append(i)
            g_v.append(-w * c.sum())
    grad = sp.csr_matrix((g_v, (g_r, g_c)), shape=(n, ncol))
    grad.sum_duplicates()
    rows.sum_duplicates()
    return DerivativeBoundary(vnodes, cloud.parents[vnodes].copy(), grad, rows, rhs, scale)
