"""Newton iterations and adaptive time stepping for :class:`FlowSystem`."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembler import FlowSystem, ReservoirState
from .errors import ConvergenceError, NcdmmError, PhysicsError
from .flow_model import WellSpec

log = logging.getLogger(__name__)

SW_LOW, SW_HIGH = -0.01, 1.01
MAX_HALVINGS = 4


@dataclass(frozen=True)
class NewtonConfig:
    """``eta_p`` / ``eta_sw`` are target per-step changes used only for step control.

    ``mass_tolerance`` bounds the per-phase global balance of a step relative
    to the phase volume in place.
    """

    dt_max: float = 2.0
    dt_min: float = 0.001
    max_newton_iters: int = 50
    residual_tolerance: float = 1.0e-6
    eta_p: float = 5.0
    eta_sw: float = 0.05
    dt_init: float | None = None
    mass_tolerance: float = 1.0e-10
    growth_limit: float = 2.0

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")
        if self.residual_tolerance <= 0 or self.mass_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.eta_p <= 0 or self.eta_sw <= 0:
            raise ValueError("eta values must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if self.dt_init is not None and not self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("dt_init must lie in [dt_min, dt_max]")


@dataclass(frozen=True)
class SimulationSchedule:
    end_time: float
    report_times: tuple[float, ...] = ()
    well_changes: tuple[tuple[float, WellSpec], ...] = ()

    def __post_init__(self):
        if self.end_time <= 0:
            raise ValueError("end time must be positive")
        rt = tuple(float(t) for t in self.report_times)
        if list(rt) != sorted(rt) or any(t < 0 or t > self.end_time for t in rt):
            raise ValueError("report times must be sorted and lie in [0, end_time]")
        object.__setattr__(self, "report_times", rt)
        object.__setattr__(self, "well_changes", tuple(sorted(self.well_changes, key=lambda c: c[0])))


@dataclass
class NewtonResult:
    state: ReservoirState
    iterations: int
    residual: float
    mass_error: float


@dataclass
class StepRecord:
    time: float
    dt: float
    newton_iters: int
    cumulative_iters: int
    p_wf: np.ndarray
    rates: np.ndarray  # (n_wells, 2) surface oil/water, positive into the reservoir
    mass_error: float
    max_dp: float
    max_dsw: float


@dataclass
class SimulationResult:
    snapshots: dict[float, ReservoirState] = field(default_factory=dict)
    steps: list[StepRecord] = field(default_factory=list)
    final: ReservoirState | None = None
    failures: int = 0

    @property
    def cumulative_iterations(self) -> int:
        return self.steps[-1].cumulative_iters if self.steps else 0


class NewtonFailure(NcdmmError):
    def __init__(self, message, residual_profile=None):
        super().__init__(message)
        self.residual_profile = residual_profile


def _scaled(system: FlowSystem, R, scales):
    return np.abs(R) / scales


def newton_solve(
    system: FlowSystem,
    state_old: ReservoirState,
    dt: float,
    config: NewtonConfig = NewtonConfig(),
    fd_jacobian: bool = False,
) -> NewtonResult:
    """One implicit step.  Raises :class:`NewtonFailure` when the step must be cut."""
    x_old = system.pack(state_old)
    for i, (pd, sd) in system.dirichlet.items():
        x_old[2 * i], x_old[2 * i + 1] = pd, sd
    x = x_old.copy()
    scales = system.row_scales(dt)
    free_rows = np.concatenate([system.row_o[system.row_o >= 0], system.row_w[system.row_w >= 0]])
    m_ref = np.maximum(system.masses(state_old), 1e-300)
    last = None
    for it in range(1, config.max_newton_iters + 1):
        try:
            R, J = system.assemble(x, x_old, dt)
            if fd_jacobian:
                J = sp.csr_matrix(system.fd_jacobian(x, x_old, dt))
            dx = spla.spsolve(J.tocsc(), -R)
        except (PhysicsError, RuntimeError) as exc:
            raise NewtonFailure(f"iteration {it}: {exc}", last) from exc
        if not np.all(np.isfinite(dx)):
            raise NewtonFailure(f"iteration {it}: singular Jacobian", _scaled(system, R, scales))
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            x_try = x + alpha * dx
            sw = x_try[1 : 2 * system.n : 2]
            if sw.min() >= SW_LOW and sw.max() <= SW_HIGH:
                break
            alpha *= 0.5
        else:
            raise NewtonFailure(f"iteration {it}: saturation update out of bounds after damping", last)
        x = x_try
        try:
            R = system.residual(x, x_old, dt)
        except PhysicsError as exc:
            raise NewtonFailure(f"iteration {it}: {exc}", last) from exc
        last = _scaled(system, R, scales)
        res = float(last.max()) if len(last) else 0.0
        # per-phase global balance: sum of free rows times dt against volume in place
        mb = np.array([abs(R[system.row_o[system.row_o >= 0]].sum()),
                       abs(R[system.row_w[system.row_w >= 0]].sum())]) * dt / m_ref
        mass_err = float(mb.max()) if len(free_rows) else 0.0
        if res < config.residual_tolerance and mass_err < config.mass_tolerance and alpha == 1.0:
            state = system.unpack(x, state_old.time + dt)
            if state.sw.min() < 0.0 or state.sw.max() > 1.0:
                raise NewtonFailure("converged saturation outside [0, 1]", last)
            return NewtonResult(state, it, res, mass_err)
    raise NewtonFailure(f"no convergence in {config.max_newton_iters} iterations", last)


def _next_dt(dt, max_dp, max_dsw, config: NewtonConfig) -> float:
    f = config.growth_limit
    if max_dp > 0:
        f = min(f, config.eta_p / max_dp)
    if max_dsw > 0:
        f = min(f, config.eta_sw / max_dsw)
    return float(np.clip(dt * f, config.dt_min, config.dt_max))


def _apply_well_change(system: FlowSystem, spec: WellSpec) -> None:
    for k, w in enumerate(system.wells):
        if w.name == spec.name:
            system.replace_well(k, spec)
            return
    raise NcdmmError(f"schedule refers to unknown well {spec.name!r}")


def advance(
    system: FlowSystem,
    state: ReservoirState,
    schedule: SimulationSchedule,
    config: NewtonConfig = NewtonConfig(),
) -> SimulationResult:
    """Integrate from ``state.time`` to ``schedule.end_time``.

    Steps are shortened to land exactly on report times and well changes.
    A failed step is retried at half the size down to ``dt_min``.
    """
    out = SimulationResult()
    eps = 1e-9
    stops = sorted(set([t for t in schedule.report_times if t > state.time + eps]
                       + [t for t, _ in schedule.well_changes if t > state.time + eps]
                       + [schedule.end_time]))
    changes = list(schedule.well_changes)
    pending_reports = [t for t in schedule.report_times]
    if pending_reports and abs(pending_reports[0] - state.time) <= eps:
        out.snapshots[pending_reports.pop(0)] = state
    dt = config.dt_init if config.dt_init is not None else config.dt_max
    cum = 0
    t = state.time
    while t < schedule.end_time - eps:
        while changes and changes[0][0] <= t + eps:
            _apply_well_change(system, changes.pop(0)[1])
            state = state.copy(p_wf=np.array([w.value if w.control == "bhp" else pwf
                                              for w, pwf in zip(system.wells, state.p_wf)]))
        target = next(s for s in stops if s > t + eps)
        step = min(dt, target - t)
        clipped = step < dt
        while True:
            try:
                res = newton_solve(system, state, step, config)
                break
            except NewtonFailure as exc:
                out.failures += 1
                if step <= config.dt_min * (1 + 1e-12):
                    raise ConvergenceError(
                        f"time step failed at the minimum size {config.dt_min} d at t = {t:.6g} d: {exc}"
                    ) from exc
                log.info("t=%.6g: step %.4g d failed (%s), halving", t, step, exc)
                step = max(step / 2, config.dt_min)
                dt = step
                clipped = False
        new = res.state
        cum += res.iterations
        max_dp = float(np.abs(new.p - state.p).max()) if system.n else 0.0
        max_dsw = float(np.abs(new.sw - state.sw).max()) if system.n else 0.0
        out.steps.append(StepRecord(new.time, step, res.iterations, cum, new.p_wf.copy(),
                                    system.well_rates(new), res.mass_error, max_dp, max_dsw))
        state = new
        t = new.time
        # a step shortened to land on a stop keeps the nominal size
        if not clipped:
            dt = _next_dt(step, max_dp, max_dsw, config)
        while pending_reports and pending_reports[0] <= t + eps:
            out.snapshots[pending_reports.pop(0)] = state
    out.final = state
    return out
