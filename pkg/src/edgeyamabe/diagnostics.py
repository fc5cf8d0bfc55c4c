"""Pass/fail verdicts computed from flow records.

Every function here is a pure function of its inputs, so verdicts can be
recomputed bit-for-bit from a persisted record.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import HypothesisError, InsufficientDataError
from .flow import FlowRecord

# measured defect of the discrete maximum principle is zero (difference-form
# evaluation); this constant only absorbs future round-off, see calibrate_max_principle
MP_TOL_CONSTANT = 1e-6
# relative volume drift per unit tau, benchmark tau-sweep gives ~0.009
VOLUME_DRIFT_CONSTANT = 0.02


@dataclass
class DecayFit:
    rate: float
    amplitude: float
    r_squared: float
    window: tuple[float, float]
    points: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Verdict:
    check_id: str
    passed: bool
    measured: float
    threshold: float
    relation: str
    anchor: str
    applicable: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def compare(cls, check_id, measured, threshold, relation, anchor, note="") -> "Verdict":
        measured = float(measured)
        threshold = float(threshold)
        ok = measured <= threshold if relation == "<=" else measured >= threshold
        return cls(check_id, bool(ok), measured, threshold, relation, anchor, True, note)

    @classmethod
    def skipped(cls, check_id, anchor, note) -> "Verdict":
        return cls(check_id, True, math.nan, math.nan, "n/a", anchor, False, note)


def fit_exponential(t, values, window: tuple[float, float] | None = None, min_points: int = 10) -> DecayFit:
    """Least-squares line through ``(t, log value)``; ``rate = -slope``.

    ``window`` defaults to the latter half ``[t_last/2, t_last]``.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = (0.5 * float(t[-1]), float(t[-1]))
    sel = (t >= window[0]) & (t <= window[1])
    tw, vw = t[sel], values[sel]
    if len(tw) < min_points:
        raise InsufficientDataError(f"need at least {min_points} samples in window, got {len(tw)}")
    if np.any(vw <= 0):
        raise ValueError("exponential fit needs strictly positive values")
    y = np.log(vw)
    if np.ptp(y) == 0.0:
        return DecayFit(rate=0.0, amplitude=float(vw[0]), r_squared=1.0,
                        window=(float(window[0]), float(window[1])), points=int(len(tw)))
    A = np.column_stack((tw, np.ones_like(tw)))
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * tw + intercept)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else math.nan)
    return DecayFit(rate=float(-slope), amplitude=float(math.exp(intercept)), r_squared=r2,
                    window=(float(window[0]), float(window[1])), points=int(len(tw)))


def audit_monotonicity(record: FlowRecord, rho_slack: float = 1e-10, scal_slack: float = 1e-8,
                       drift_constant: float = VOLUME_DRIFT_CONSTANT) -> list[Verdict]:
    """rho nonincreasing, scal_max nonincreasing and negative, bounded volume drift."""
    rho = record.column("rho")
    smax = record.column("scal_max")
    vol = record.column("vol")
    out = []
    rho_jump = float(np.max(np.diff(rho))) if len(rho) > 1 else 0.0
    out.append(Verdict.compare("rho_nonincreasing", rho_jump, rho_slack, "<=",
                               "average scalar curvature decreases along the flow"))
    anchor = "maximum scalar curvature decreases (negative initial data)"
    if record.scal_init_max < 0:
        jump = float(np.max(np.diff(smax))) if len(smax) > 1 else 0.0
        v = Verdict.compare("scal_max_nonincreasing", jump, scal_slack, "<=", anchor)
        if not np.all(smax < 0):
            v.passed = False
            v.note = "scal_max became nonnegative"
        out.append(v)
    else:
        out.append(Verdict.skipped("scal_max_nonincreasing", anchor, "initial scalar curvature not negative"))
    drift = float(np.max(np.abs(vol - vol[0])) / vol[0])
    out.append(Verdict.compare("volume_drift", drift, drift_constant * record.tau, "<=",
                               "the normalized flow preserves the volume"))
    return out


def u_bound_series(record: FlowRecord, N: float):
    """Measured ``u_min^{N-1}``, ``u_max^{N-1}`` and the two integrated bounds.

    The lower bound is ``u_min^{N-1}(0) + (min|scal|/|rho0|)(1 - e^{rho0 t})`` and
    the upper one ``u_max^{N-1}(0) + max|scal|/|rho0|``.
    """
    t = record.column("t")
    rho0 = record.rows[0]["rho"]
    if rho0 >= 0:
        raise HypothesisError("u bounds need rho(0) < 0")
    min_abs = -record.scal_init_max  # negative data: min|scal| = -max scal
    max_abs = -record.scal_init_min
    wmin = record.column("u_min") ** (N - 1)
    wmax = record.column("u_max") ** (N - 1)
    lower = wmin[0] + min_abs / abs(rho0) * (1.0 - np.exp(rho0 * t))
    upper = wmax[0] + max_abs / abs(rho0) + 0.0 * t
    # the same lower estimate before dropping the e^{rho0 t} factor on u_min^{N-1}(0)
    lower_unsimplified = wmin[0] * np.exp(rho0 * t) + min_abs / abs(rho0) * (1.0 - np.exp(rho0 * t))
    return wmin, wmax, lower, upper, lower_unsimplified


def audit_u_bounds(record: FlowRecord, model, slack: float = 1e-6) -> list[Verdict]:
    """Check the explicit two-sided bounds on the conformal factor at every recorded time."""
    if record.rows[0]["rho"] >= 0:
        raise HypothesisError("u bounds need rho(0) < 0")
    if record.scal_init_max >= 0:
        raise HypothesisError("u bounds need negative initial scalar curvature")
    wmin, wmax, lower, upper, lower_raw = u_bound_series(record, model.N)
    note = "" if record.u0_is_one else "initial u is not identically 1; bounds use u(0) as given"
    out = []
    anchor_lo = "lower estimate for the minimum function"
    if record.scal_init_constant:
        out.append(Verdict.skipped("u_min_lower_bound", anchor_lo,
                                   "constant initial curvature: stationary case carved out"))
    else:
        out.append(Verdict.compare("u_min_lower_bound", float(np.min(wmin - lower)), -slack, ">=",
                                   anchor_lo, note))
    out.append(Verdict.compare("u_max_upper_bound", float(np.min(upper - wmax)), -slack, ">=",
                               "upper estimate for the maximum function", note))
    info = Verdict.compare("u_min_lower_bound_unsimplified", float(np.min(wmin - lower_raw)), -slack, ">=",
                           "lower estimate keeping the e^{rho0 t} factor", "informational")
    info.applicable = False
    out.append(info)
    return out


def audit_max_principle(state, mesh, tol_constant: float = MP_TOL_CONSTANT) -> Verdict:
    """Sign of ``Delta_h u`` at the discrete argmin (>= 0) and argmax (<= 0) of ``u``."""
    u = state.u
    lap = state.lap_u
    h = mesh.local_width
    i_min = int(np.argmin(u))
    i_max = int(np.argmax(u))
    tol_min = tol_constant * h[i_min]
    tol_max = tol_constant * h[i_max]
    excess = max(-lap[i_min] - tol_min, lap[i_max] - tol_max)
    v = Verdict.compare("elliptic_max_principle", excess, 0.0, "<=",
                        "Laplacian is nonnegative at a minimum, including the tip")
    v.note = f"argmin node {i_min}, argmax node {i_max}"
    return v


def audit_record_max_principle(record: FlowRecord, scal_tol: float | None = None) -> list[Verdict]:
    """Elliptic and parabolic maximum-principle monitors over every step of a run."""
    dmin = record.column("mp_u_min_defect")
    dmax = record.column("mp_u_max_defect")
    tol = record.column("mp_u_tol")
    excess = float(np.max(np.maximum(dmin, dmax) - tol))
    out = [Verdict.compare("elliptic_max_principle_all_steps", excess, 0.0, "<=",
                           "Laplacian is nonnegative at a minimum, including the tip")]
    tol_s = scal_monitor_tolerance(record.tau) if scal_tol is None else scal_tol
    defect = record.column("mp_scal_defect")
    if len(record) > 1:
        out.append(Verdict.compare("parabolic_scal_monitor", float(np.max(defect[:-1])), tol_s, "<=",
                                   "d/dt scal <= scal (scal - rho) at the spatial maximum"))
    else:
        out.append(Verdict.skipped("parabolic_scal_monitor", "d/dt scal <= scal (scal - rho)", "no steps taken"))
    return out


def scal_monitor_tolerance(tau: float) -> float:
    """Round-off allowance for a one-step difference quotient of ``scal(g)``."""
    return 1e-8 / tau


def audit_decay(record: FlowRecord, rate_fraction: float = 0.9, r2_min: float = 0.98,
                window: tuple[float, float] | None = None) -> list[Verdict]:
    """Exponential decay of ``||scal - rho||`` and ``||d/dt u||`` at rate ``>= 0.9 b``."""
    b = record.b
    anchors = {"scal_minus_rho_sup": "scal approaches rho exponentially",
               "dudt_sup": "time derivative of u decays exponentially"}
    out = []
    for col, anchor in anchors.items():
        if b <= 0:
            out.append(Verdict.skipped(f"decay_{col}", anchor, "initial curvature not negative"))
            continue
        try:
            fit = fit_exponential(record.column("t"), record.column(col), window)
        except (InsufficientDataError, ValueError) as exc:
            out.append(Verdict.skipped(f"decay_{col}", anchor, str(exc)))
            continue
        v = Verdict.compare(f"decay_{col}", fit.rate, rate_fraction * b, ">=", anchor,
                            f"r2={fit.r_squared:.6f}, window={fit.window}")
        out.append(v)
        out.append(Verdict.compare(f"decay_{col}_r2", fit.r_squared, r2_min, ">=", anchor))
    return out


def audit_identity(record: FlowRecord, tol: float = 1e-9) -> Verdict:
    """Devolved right-hand side equals ``(m-2)/4 (rho - scal) u`` at every node and step."""
    worst = float(np.max(record.column("identity_defect")))
    return Verdict.compare("rhs_cross_formulation", worst, tol, "<=",
                           "devolved equation agrees with the metric form of the flow")


@dataclass
class ConvergenceReport:
    final_t: float
    final_sup: float
    final_rho: float
    final_spread: float
    tol: float
    converged: bool
    negative: bool

    def to_dict(self) -> dict:
        return asdict(self)


def detect_convergence(record: FlowRecord, stop_tol: float, tol: float = 1e-4) -> ConvergenceReport:
    """Convergence to constant curvature: both ``||scal-rho||`` and the spread below ``tol``.

    ``stop_tol`` counts as converged even if it is looser than ``tol`` is not:
    the effective threshold is ``max(stop_tol, tol)``.
    """
    last = record.rows[-1]
    thr = max(stop_tol, tol)
    spread = last["scal_max"] - last["scal_min"]
    converged = last["scal_minus_rho_sup"] < thr and spread < thr
    return ConvergenceReport(final_t=last["t"], final_sup=last["scal_minus_rho_sup"], final_rho=last["rho"],
                             final_spread=spread, tol=thr, converged=bool(converged),
                             negative=bool(last["rho"] < 0))


def convergence_verdict(report: ConvergenceReport) -> Verdict:
    v = Verdict.compare("convergence_constant_negative", report.final_sup, report.tol, "<=",
                        "flow converges to constant negative curvature")
    v.passed = bool(report.converged and report.negative)
    return v


def audit_record(record: FlowRecord, model, *, stop_tol: float = 1e-6, drift_constant: float = VOLUME_DRIFT_CONSTANT,
                 convergence_tol: float = 1e-4, bound_slack: float = 1e-6) -> list[Verdict]:
    """All record-level verdicts used by a run artifact."""
    verdicts = audit_monotonicity(record, drift_constant=drift_constant)
    try:
        verdicts += audit_u_bounds(record, model, slack=bound_slack)
    except HypothesisError as exc:
        verdicts.append(Verdict.skipped("u_bounds", "explicit bounds on u", str(exc)))
    verdicts += audit_record_max_principle(record)
    verdicts += audit_decay(record)
    verdicts.append(audit_identity(record))
    conv = detect_convergence(record, stop_tol, convergence_tol)
    if record.scal_init_max < 0:
        verdicts.append(convergence_verdict(conv))
    else:
        verdicts.append(Verdict.skipped("convergence_constant_negative", "constant negative curvature",
                                        "initial curvature not negative"))
    return verdicts


def all_passed(verdicts) -> bool:
    return all(v.passed for v in verdicts if v.applicable)


def summary_table(verdicts) -> str:
    lines = [f"{'check':40s} {'pass':5s} {'measured':>14s} {'rel':>3s} {'threshold':>12s}"]
    for v in verdicts:
        flag = "-" if not v.applicable else ("yes" if v.passed else "NO")
        lines.append(f"{v.check_id:40s} {flag:5s} {v.measured:14.6g} {v.relation:>3s} {v.threshold:12.6g}")
    return "\n".join(lines)


def calibrate_max_principle(model, Ks=(64, 128, 256), gamma: float = 1.0, tau: float = 1e-3,
                            steps: int = 100) -> dict:
    """Largest observed ``defect / h`` of the elliptic monitor over a refinement study."""
    from .flow import ConformalState, FlowParams, FlowSystem, run_flow
    from .operators import build_mesh

    ratios = {}
    for K in Ks:
        mesh = build_mesh(K, gamma, model.x_max, model)
        system = FlowSystem.build(model, mesh)
        params = FlowParams(tau=tau, t_end=steps * tau, stop_tol=0.0)
        rec, _ = run_flow(ConformalState.initial(model, mesh, system=system), params, model, mesh, system)
        h = rec.column("mp_u_tol") / params.mp_tol_constant
        defect = np.maximum(rec.column("mp_u_min_defect"), rec.column("mp_u_max_defect"))
        ratios[K] = float(np.max(defect / h))
    return {"max_defect_over_h": ratios, "frozen_constant": MP_TOL_CONSTANT}
