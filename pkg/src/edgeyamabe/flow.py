"""Time integration of the normalized Yamabe flow for the conformal factor.

With ``N = (m+2)/(m-2)`` the conformal factor obeys

    d/dt u = (m-1) u^{1-N} Delta u - (m-2)/4 scal_init u^{2-N} + (m-2)/4 rho u,

which is the same as ``d/dt u = (m-2)/4 (rho - scal(g)) u``.  The default
scheme treats the diffusion implicitly with the coefficient frozen at the
old time level and the reaction terms explicitly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EdgeYamabeError, PositivityError
from .geometry import CurvatureField, EdgeModel, conformal_scal, curvature_field
from .operators import DiscreteLaplacian, Mesh, apply, assemble_laplacian, solve_shifted

log = logging.getLogger(__name__)

SEMI_IMPLICIT = "semi_implicit"
EXPLICIT_RK2 = "explicit_rk2"
SCHEMES = (SEMI_IMPLICIT, EXPLICIT_RK2)

MIN_INITIAL_U = 1e-8

SERIES_COLUMNS = ("t", "rho", "vol", "scal_min", "scal_max", "u_min", "u_max",
                  "scal_minus_rho_sup", "dudt_sup")
MONITOR_COLUMNS = ("mp_u_min_defect", "mp_u_max_defect", "mp_u_tol",
                   "mp_scal_defect", "mp_scal_violation")


class FlowAborted(EdgeYamabeError):
    """A step failed; ``record`` holds every row produced before the failure."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class FlowSystem:
    """Everything the flow needs that does not change in time."""

    model: EdgeModel
    mesh: Mesh
    op: DiscreteLaplacian
    scal0: CurvatureField

    @classmethod
    def build(cls, model: EdgeModel, mesh: Mesh) -> "FlowSystem":
        return cls(model, mesh, assemble_laplacian(mesh, model, 0.0), curvature_field(model, mesh))


def _system(model, mesh, system):
    return FlowSystem.build(model, mesh) if system is None else system


@dataclass
class ConformalState:
    """Conformal factor at flow time ``t`` with derived fields cached."""

    t: float
    u: np.ndarray
    lap_u: np.ndarray
    scal_g: np.ndarray
    rho: float
    vol: float

    @classmethod
    def from_u(cls, t: float, u, model: EdgeModel, mesh: Mesh,
               system: FlowSystem | None = None) -> "ConformalState":
        sys_ = _system(model, mesh, system)
        u = np.array(u, dtype=float)
        if not np.all(u > 0):
            raise PositivityError(f"conformal factor lost positivity at t={t:g} (min={u.min():.3e})")
        lap_u = apply(sys_.op, u)
        scal_g = conformal_scal(u, lap_u, sys_.scal0, model.m)
        dens = mesh.weights * u**model.volume_exponent
        vol = float(dens.sum())
        rho = float(np.dot(dens, scal_g) / vol)
        return cls(t=float(t), u=u, lap_u=lap_u, scal_g=scal_g, rho=rho, vol=vol)

    @classmethod
    def initial(cls, model: EdgeModel, mesh: Mesh, u0=None,
                system: FlowSystem | None = None) -> "ConformalState":
        u = np.ones_like(mesh.nodes) if u0 is None else np.array(u0, dtype=float)
        if u.min() <= MIN_INITIAL_U:
            raise PositivityError(f"initial conformal factor must exceed {MIN_INITIAL_U:g}")
        return cls.from_u(0.0, u, model, mesh, system)


@dataclass
class FlowParams:
    tau: float = 1e-3
    t_end: float | None = None
    stop_tol: float = 1e-6
    max_steps: int = 1_000_000
    scheme: str = SEMI_IMPLICIT
    snapshot_every: int = 0
    mp_tol_constant: float = 1e-6
    scal_monitor_tol: float | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be nonnegative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")

    def resolved_t_end(self, scal0: CurvatureField) -> float:
        if self.t_end is not None:
            return float(self.t_end)
        if scal0.b <= 0:
            raise ValueError("t_end must be given when the initial curvature is not negative")
        return 10.0 / scal0.b


@dataclass
class FlowRecord:
    rows: list[dict] = field(default_factory=list)
    snapshots: dict[int, tuple[float, np.ndarray]] = field(default_factory=dict)
    termination: str = ""
    tau: float = 0.0
    t_end: float = 0.0
    scal_init_min: float = math.nan
    scal_init_max: float = math.nan
    scal_init_constant: bool = False
    u0_is_one: bool = True
    error: str | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def b(self) -> float:
        """``-max scal(g_init)``: the exponential rate guaranteed by the theory."""
        return -self.scal_init_max

    def meta(self) -> dict:
        return {"termination": self.termination, "tau": self.tau, "t_end": self.t_end,
                "scal_init_min": self.scal_init_min, "scal_init_max": self.scal_init_max,
                "scal_init_constant": self.scal_init_constant, "u0_is_one": self.u0_is_one,
                "error": self.error, "steps": len(self.rows) - 1}


def _half_dim(model):
    return (model.m - 2) / 4.0


def rhs_devolved(state: ConformalState, model: EdgeModel, mesh: Mesh,
                 system: FlowSystem | None = None) -> np.ndarray:
    """``d/dt u`` from the devolved equation, with ``rho`` taken from ``state``."""
    sys_ = _system(model, mesh, system)
    u = state.u
    if not np.all(u > 0):
        raise PositivityError("rhs_devolved needs a positive conformal factor")
    N = model.N
    c = _half_dim(model)
    return ((model.m - 1) * u ** (1.0 - N) * state.lap_u
            - c * sys_.scal0.values * u ** (2.0 - N) + c * state.rho * u)


def rhs_geometric(state: ConformalState, model: EdgeModel) -> np.ndarray:
    """``d/dt u = (m-2)/4 (rho - scal(g)) u``, the metric form of the flow."""
    return _half_dim(model) * (state.rho - state.scal_g) * state.u


def step_semi_implicit(state: ConformalState, params: FlowParams, model: EdgeModel,
                       mesh: Mesh, system: FlowSystem | None = None) -> ConformalState:
    """One step of ``(I - tau a^k Delta_h) u^{k+1} = u^k + tau F^k``."""
    sys_ = _system(model, mesh, system)
    u = state.u
    N = model.N
    c = _half_dim(model)
    a = (model.m - 1) * u ** (1.0 - N)
    reaction = -c * sys_.scal0.values * u ** (2.0 - N) + c * state.rho * u
    u_new = solve_shifted(sys_.op, a, params.tau, u + params.tau * reaction)
    if not np.all(u_new > 0):
        raise PositivityError(f"positivity lost after step at t={state.t + params.tau:g}; reduce tau")
    return ConformalState.from_u(state.t + params.tau, u_new, model, mesh, sys_)


def step_explicit_rk2(state: ConformalState, params: FlowParams, model: EdgeModel,
                      mesh: Mesh, system: FlowSystem | None = None,
                      substeps: int = 1) -> ConformalState:
    """Heun's method with ``substeps`` equal substeps of ``tau``; debug oracle only."""
    sys_ = _system(model, mesh, system)
    h = params.tau / substeps
    cur = state
    for _ in range(substeps):
        k1 = rhs_devolved(cur, model, mesh, sys_)
        mid = ConformalState.from_u(cur.t + h, cur.u + h * k1, model, mesh, sys_)
        k2 = rhs_devolved(mid, model, mesh, sys_)
        cur = ConformalState.from_u(cur.t + h, cur.u + 0.5 * h * (k1 + k2), model, mesh, sys_)
    return cur


def _step(state, params, model, mesh, sys_):
    if params.scheme == SEMI_IMPLICIT:
        return step_semi_implicit(state, params, model, mesh, sys_)
    return step_explicit_rk2(state, params, model, mesh, sys_)


def _elliptic_defects(state: ConformalState, mesh: Mesh):
    """Sign defects of ``Delta_h u`` at the (lowest-index) argmin and argmax of ``u``."""
    i_min = int(np.argmin(state.u))
    i_max = int(np.argmax(state.u))
    h = mesh.local_width
    return (max(0.0, -state.lap_u[i_min]), max(0.0, state.lap_u[i_max]),
            float(min(h[i_min], h[i_max])))


def _row(state: ConformalState, model, mesh, sys_, mp_c) -> dict:
    dudt = rhs_devolved(state, model, mesh, sys_)
    dmin, dmax, h = _elliptic_defects(state, mesh)
    return {
        "t": state.t,
        "rho": state.rho,
        "vol": state.vol,
        "scal_min": float(state.scal_g.min()),
        "scal_max": float(state.scal_g.max()),
        "u_min": float(state.u.min()),
        "u_max": float(state.u.max()),
        "scal_minus_rho_sup": float(np.abs(state.scal_g - state.rho).max()),
        "dudt_sup": float(np.abs(dudt).max()),
        "mp_u_min_defect": dmin,
        "mp_u_max_defect": dmax,
        "mp_u_tol": mp_c * h,
        "mp_scal_defect": 0.0,
        "mp_scal_violation": False,
        "identity_defect": float(np.abs(dudt - rhs_geometric(state, model)).max()),
    }


def scal_monitor_defect(prev: ConformalState, new: ConformalState) -> float:
    """Excess of ``d/dt scal`` over ``scal (scal - rho)`` at the argmax of ``scal``.

    The time derivative is the one-step difference quotient at the node where
    ``scal(g)`` is largest at the earlier time.
    """
    i = int(np.argmax(prev.scal_g))
    s = prev.scal_g[i]
    dt = new.t - prev.t
    lhs = (new.scal_g[i] - s) / dt
    return float(lhs - s * (s - prev.rho))


def run_flow(init: ConformalState, params: FlowParams, model: EdgeModel, mesh: Mesh,
             system: FlowSystem | None = None):
    """Integrate until ``t_end``, ``stop_tol`` or ``max_steps``.

    Returns ``(record, final_state)``.  A failing step raises
    :class:`FlowAborted` carrying the partial record.
    """
    sys_ = _system(model, mesh, system)
    t_end = params.resolved_t_end(sys_.scal0)
    record = FlowRecord(tau=params.tau, t_end=t_end,
                        scal_init_min=float(sys_.scal0.values.min()),
                        scal_init_max=float(sys_.scal0.values.max()),
                        scal_init_constant=sys_.scal0.is_constant,
                        u0_is_one=bool(np.all(init.u == 1.0)))
    state = init
    t0 = init.t
    step = 0
    if params.snapshot_every:
        record.snapshots[0] = (state.t, state.u.copy())
    record.rows.append(_row(state, model, mesh, sys_, params.mp_tol_constant))
    scal_tol = params.scal_monitor_tol
    while True:
        row = record.rows[-1]
        if row["scal_minus_rho_sup"] < params.stop_tol:
            record.termination = "stop_tol"
            break
        if state.t >= t0 + t_end - 1e-9 * params.tau:
            record.termination = "t_end"
            break
        if step >= params.max_steps:
            record.termination = "max_steps"
            break
        try:
            new = _step(state, params, model, mesh, sys_)
        except EdgeYamabeError as exc:
            record.termination = "error"
            record.error = str(exc)
            raise FlowAborted(str(exc), record) from exc
        step += 1
        # step counting keeps t free of accumulated rounding
        new.t = t0 + step * params.tau
        new_row = _row(new, model, mesh, sys_, params.mp_tol_constant)
        defect = scal_monitor_defect(state, new)
        row["mp_scal_defect"] = defect
        if scal_tol is not None:
            row["mp_scal_violation"] = bool(defect > scal_tol)
        record.rows.append(new_row)
        state = new
        if params.snapshot_every and step % params.snapshot_every == 0:
            record.snapshots[step] = (state.t, state.u.copy())
    if params.snapshot_every:
        record.snapshots[step] = (state.t, state.u.copy())
    log.info("flow finished: %s after %d steps at t=%.4g", record.termination, step, state.t)
    return record, state


@dataclass
class RestartReport:
    restart_step: int
    restart_time: float
    sup_difference: float
    threshold: float
    compared_steps: int

    @property
    def passed(self) -> bool:
        return self.sup_difference <= self.threshold

    def to_dict(self) -> dict:
        return {**vars(self), "passed": self.passed}


def restart_check(record: FlowRecord, model: EdgeModel, mesh: Mesh, params: FlowParams,
                  restart_step: int | None = None, system: FlowSystem | None = None,
                  bound_factor: float = 5.0) -> RestartReport:
    """Restart from a stored snapshot and compare with the uninterrupted run.

    The restarted trajectory is compared with every later snapshot of
    ``record``; the bound is ``bound_factor * tau`` in the sup norm.
    """
    sys_ = _system(model, mesh, system)
    steps = sorted(record.snapshots)
    if len(steps) < 2:
        raise ValueError("restart_check needs a record with stored snapshots")
    last = steps[-1]
    if restart_step is None:
        restart_step = min(steps, key=lambda s: abs(s - last / 2))
    if restart_step not in record.snapshots:
        raise ValueError(f"no snapshot stored at step {restart_step}")
    t_r, u_r = record.snapshots[restart_step]
    state = ConformalState.from_u(t_r, u_r, model, mesh, sys_)
    later = [s for s in steps if s > restart_step]
    diff = 0.0
    cur = restart_step
    for target in later:
        while cur < target:
            state = _step(state, params, model, mesh, sys_)
            cur += 1
            state.t = t_r + (cur - restart_step) * params.tau
        diff = max(diff, float(np.abs(state.u - record.snapshots[target][1]).max()))
    return RestartReport(restart_step=restart_step, restart_time=float(t_r), sup_difference=diff,
                         threshold=bound_factor * params.tau, compared_steps=len(later))


@dataclass
class SelfConvergenceReport:
    taus: list[float]
    differences: list[float]
    orders: list[float]
    t_compare: float

    def to_dict(self) -> dict:
        return dict(vars(self))


def trajectory(model: EdgeModel, mesh: Mesh, params: FlowParams, t_final: float,
               system: FlowSystem | None = None, u0=None) -> np.ndarray:
    """Conformal factor at ``t_final`` (an integer number of steps) ignoring ``stop_tol``."""
    sys_ = _system(model, mesh, system)
    p = replace(params, stop_tol=0.0, t_end=t_final, snapshot_every=0)
    _, final = run_flow(ConformalState.initial(model, mesh, u0, sys_), p, model, mesh, sys_)
    return final.u


def self_convergence(model: EdgeModel, mesh: Mesh, params: FlowParams, t_compare: float,
                     levels: int = 3, system: FlowSystem | None = None) -> SelfConvergenceReport:
    """Compare runs with ``tau, tau/2, tau/4, ...`` at a common time."""
    sys_ = _system(model, mesh, system)
    taus = [params.tau / 2**k for k in range(levels)]
    finals = [trajectory(model, mesh, replace(params, tau=t), t_compare, sys_) for t in taus]
    diffs = [float(np.abs(finals[k] - finals[k + 1]).max()) for k in range(levels - 1)]
    orders = [math.log2(diffs[k] / diffs[k + 1]) if diffs[k + 1] > 0 else math.inf
              for k in range(len(diffs) - 1)]
    return SelfConvergenceReport(taus=taus, differences=diffs, orders=orders, t_compare=t_compare)
