"""Rock and fluid properties, interface averaging and the well model.

Working units: m, MPa, day, mD, mPa·s, m³/d (see :mod:`ncdmm.units`).
Pressure-dependent functions accept scalars or arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PhysicsError
from .units import DARCY


@dataclass(frozen=True)
class FluidProps:
    mu_o: float = 2.0
    mu_w: float = 0.6
    c_o: float = 3.0e-3
    c_w: float = 4.0e-4
    B_o_ref: float = 1.0
    B_w_ref: float = 1.0
    p_ref: float = 15.0

    def __post_init__(self):
        if self.mu_o <= 0 or self.mu_w <= 0:
            raise PhysicsError("viscosities must be positive")
        if self.c_o < 0 or self.c_w < 0:
            raise PhysicsError("fluid compressibilities must be non-negative")
        if self.B_o_ref <= 0 or self.B_w_ref <= 0:
            raise PhysicsError("reference volume factors must be positive")

    def b_oil(self, p):
        return fvf(self.B_o_ref, self.c_o, p, self.p_ref), dfvf(self.B_o_ref, self.c_o, p, self.p_ref)

    def b_water(self, p):
        return fvf(self.B_w_ref, self.c_w, p, self.p_ref), dfvf(self.B_w_ref, self.c_w, p, self.p_ref)


@dataclass(frozen=True, eq=False)
class RockProps:
    """``k`` is a scalar or a per-node array of permeability in mD."""

    phi_ref: float = 0.2
    c_r: float = 1.0e-4
    k: float | np.ndarray = 100.0
    thickness: float = 3.0
    p_ref: float = 15.0

    def __post_init__(self):
        if not 0.0 < self.phi_ref < 1.0:
            raise PhysicsError("reference porosity must lie in (0, 1)")
        if self.c_r < 0:
            raise PhysicsError("rock compressibility must be non-negative")
        if np.any(np.asarray(self.k) < 0):
            raise PhysicsError("permeability must be non-negative")
        if self.thickness <= 0:
            raise PhysicsError("thickness must be positive")

    def perm(self, n: int) -> np.ndarray:
        k = np.asarray(self.k, dtype=float)
        if k.ndim == 0:
            return np.full(n, float(k))
        if len(k) < n:
            raise PhysicsError(f"permeability field has {len(k)} values for {n} nodes")
        return k[:n]


@dataclass(frozen=True, eq=False)
class RelPermTable:
    sw: np.ndarray
    krw: np.ndarray
    kro: np.ndarray

    def __post_init__(self):
        sw, krw, kro = (np.asarray(a, dtype=float) for a in (self.sw, self.krw, self.kro))
        if not (len(sw) == len(krw) == len(kro)) or len(sw) < 2:
            raise PhysicsError("relative permeability table needs at least two complete rows")
        if np.any(np.diff(sw) <= 0):
            raise PhysicsError("water saturation column must be strictly increasing")
        if np.any(np.diff(krw) < 0):
            raise PhysicsError("krw must be non-decreasing in Sw")
        if np.any(np.diff(kro) > 0):
            raise PhysicsError("kro must be non-increasing in Sw")
        if krw[0] != 0.0 or kro[-1] != 0.0:
            raise PhysicsError("table endpoints must have krw(Sw_min) = 0 and kro(Sw_max) = 0")
        for name, a in (("sw", sw), ("krw", krw), ("kro", kro)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "RelPermTable":
        a = np.asarray(rows, dtype=float)
        if a.ndim != 2 or a.shape[1] != 3:
            raise PhysicsError("relative permeability rows must be 'Sw krw kro'")
        return cls(a[:, 0], a[:, 1], a[:, 2])

    def evaluate(self, sw):
        """``(krw, kro, dkrw/dSw, dkro/dSw)``; slopes are zero outside the table."""
        s = np.asarray(sw, dtype=float)
        krw = np.interp(s, self.sw, self.krw)
        kro = np.interp(s, self.sw, self.kro)
        seg = np.clip(np.searchsorted(self.sw, s, side="right") - 1, 0, len(self.sw) - 2)
        dsw = self.sw[seg + 1] - self.sw[seg]
        inside = (s >= self.sw[0]) & (s < self.sw[-1])
        dkrw = np.where(inside, (self.krw[seg + 1] - self.krw[seg]) / dsw, 0.0)
        dkro = np.where(inside, (self.kro[seg + 1] - self.kro[seg]) / dsw, 0.0)
        return krw, kro, dkrw, dkro


#: water-oil table used by the homogeneous test cases
DEFAULT_RELPERM_ROWS = (
    (0.20, 0.0, 1.0),
    (0.25, 0.0069, 0.8403),
    (0.30, 0.0278, 0.6944),
    (0.35, 0.0625, 0.5625),
    (0.40, 0.1111, 0.4444),
    (0.45, 0.1736, 0.3403),
    (0.50, 0.25, 0.25),
    (0.55, 0.3403, 0.1736),
    (0.60, 0.4444, 0.1111),
    (0.65, 0.5625, 0.0625),
    (0.70, 0.6944, 0.0278),
    (0.75, 0.8403, 0.0069),
    (0.80, 1.0, 0.0),
)


def default_relperm() -> RelPermTable:
    return RelPermTable.from_rows(DEFAULT_RELPERM_ROWS)


def relperm(table: RelPermTable, sw):
    """Piecewise-linear ``(krw, kro)``, clamped to the endpoint values."""
    krw, kro, _, _ = table.evaluate(sw)
    if np.ndim(krw) == 0:
        return float(krw), float(kro)
    return krw, kro


def fvf(B_ref, c, p, p_ref):
    """Slightly compressible volume factor ``B_ref / (1 + c (p - p_ref))``."""
    den = 1.0 + c * (np.asarray(p, dtype=float) - p_ref)
    if np.any(den <= 0):
        raise PhysicsError("volume factor undefined: 1 + c (p - p_ref) <= 0")
    out = B_ref / den
    return float(out) if np.ndim(out) == 0 else out


def dfvf(B_ref, c, p, p_ref):
    den = 1.0 + c * (np.asarray(p, dtype=float) - p_ref)
    out = -B_ref * c / den**2
    return float(out) if np.ndim(out) == 0 else out


def porosity(phi_ref, c_r, p, p_ref):
    """``phi_ref (1 + c_r (p - p_ref))``, required to stay inside (0, 1)."""
    phi = phi_ref * (1.0 + c_r * (np.asarray(p, dtype=float) - p_ref))
    if np.any(phi <= 0) or np.any(phi >= 1):
        raise PhysicsError("porosity left (0, 1)")
    return float(phi) if np.ndim(phi) == 0 else phi


def harmonic_perm(k_i, k_j):
    """Harmonic mean, zero if either side is zero."""
    k_i = np.asarray(k_i, dtype=float)
    k_j = np.asarray(k_j, dtype=float)
    s = k_i + k_j
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where((k_i > 0) & (k_j > 0), 2.0 * k_i * k_j / np.where(s > 0, s, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def iface_arithmetic(v_i, v_j):
    return 0.5 * (v_i + v_j)


def upwind_relperm(p_i, p_j, krs_i, krs_j):
    """Donor-side relative permeabilities: ``j`` when ``p_j >= p_i``."""
    return krs_j if p_j >= p_i else krs_i


# --- wells ----------------------------------------------------------------------


@dataclass(frozen=True)
class WellSpec:
    """``kind`` is ``producer`` or ``injector``; ``control`` is ``rate`` (m³/d) or ``bhp`` (MPa)."""

    node: int
    kind: str = "producer"
    control: str = "rate"
    value: float = 0.0
    r_w: float = 0.1
    skin: float = 0.0
    name: str = field(default="")

    def __post_init__(self):
        if self.kind not in ("producer", "injector"):
            raise PhysicsError(f"well kind must be 'producer' or 'injector', got {self.kind!r}")
        if self.control not in ("rate", "bhp"):
            raise PhysicsError(f"well control must be 'rate' or 'bhp', got {self.control!r}")
        if self.r_w <= 0:
            raise PhysicsError("well radius must be positive")
        if self.control == "rate" and not self.value > 0:
            raise PhysicsError("rate-controlled wells need a positive rate")
        if not self.name:
            object.__setattr__(self, "name", f"{self.kind[0].upper()}{self.node}")


def equivalent_radius(V_bar: float, h: float) -> float:
    return 0.14 * math.sqrt(2.0 * V_bar / h)


def well_index(k: float, h: float, V_bar: float, r_w: float, skin: float = 0.0) -> float:
    """Peaceman-type index in m³/d per (MPa / mPa·s); ``V_bar`` in m³."""
    if V_bar <= 0 or r_w <= 0 or h <= 0:
        raise PhysicsError("well index needs positive volume, thickness and radius")
    r_e = equivalent_radius(V_bar, h)
    if r_e <= r_w:
        raise PhysicsError(f"equivalent radius {r_e:.4g} m does not exceed the well radius {r_w:.4g} m")
    den = math.log(r_e / r_w) + skin
    if den <= 0:
        raise PhysicsError("negative skin exceeds the log term of the well index")
    return DARCY * 2.0 * math.pi * k * h / den


@dataclass(frozen=True)
class WellEval:
    """Surface rates (positive into the node) and their derivatives."""

    q_o: float
    q_w: float
    dqo_dp: float
    dqw_dp: float
    dqo_ds: float
    dqw_ds: float
    dqo_dpwf: float
    dqw_dpwf: float


def well_source(spec: WellSpec, p: float, p_wf: float, WI: float, krw: float, kro: float,
                dkrw: float, dkro: float, Bo: float, Bw: float, dBo: float, dBw: float,
                fluid: FluidProps) -> WellEval:
    """Producer: per-phase mobility drawdown.  Injector: water only, at total mobility."""
    dd = p_wf - p
    if spec.kind == "producer":
        lo = kro / (Bo * fluid.mu_o)
        lw = krw / (Bw * fluid.mu_w)
        dlo_dp = -kro * dBo / (Bo**2 * fluid.mu_o)
        dlw_dp = -krw * dBw / (Bw**2 * fluid.mu_w)
        return WellEval(
            q_o=WI * lo * dd,
            q_w=WI * lw * dd,
            dqo_dp=WI * (dlo_dp * dd - lo),
            dqw_dp=WI * (dlw_dp * dd - lw),
            dqo_ds=WI * dkro / (Bo * fluid.mu_o) * dd,
            dqw_ds=WI * dkrw / (Bw * fluid.mu_w) * dd,
            dqo_dpwf=WI * lo,
            dqw_dpwf=WI * lw,
        )
    lt = kro / fluid.mu_o + krw / fluid.mu_w
    dlt = dkro / fluid.mu_o + dkrw / fluid.mu_w
    return WellEval(
        q_o=0.0,
        q_w=WI * lt / Bw * dd,
        dqo_dp=0.0,
        dqw_dp=WI * lt * (-dBw / Bw**2 * dd - 1.0 / Bw),
        dqo_ds=0.0,
        dqw_ds=WI * dlt / Bw * dd,
        dqo_dpwf=0.0,
        dqw_dpwf=WI * lt / Bw,
    )
