"""Acceptance suite: twelve criteria at pinned tolerances, one PASS/FAIL line each."""
import time

import numpy as np
import pytest

from edgeyamabe.diagnostics import (MP_TOL_CONSTANT, VOLUME_DRIFT_CONSTANT, audit_decay, audit_identity,
                                    audit_max_principle, audit_monotonicity, audit_record_max_principle,
                                    audit_u_bounds, calibrate_max_principle, detect_convergence)
from edgeyamabe.flow import ConformalState, FlowParams, FlowSystem, restart_check, run_flow, self_convergence
from edgeyamabe.geometry import curvature_field
from edgeyamabe.operators import apply, assemble_laplacian, weighted_inner
from edgeyamabe.spectral import assemble_conformal_laplacian, first_eigenpair, trichotomy_check

from conftest import model_and_mesh

WARPS = ("linear", "sinh", "perturbed_sinh")


def _by_id(verdicts):
    return {v.check_id: v for v in verdicts}


def _run(kind="perturbed_sinh", K=256, m=4, eps=0.1, **params):
    model, mesh = model_and_mesh(kind, m=m, K=K, eps=eps)
    system = FlowSystem.build(model, mesh)
    p = FlowParams(**params)
    record, final = run_flow(ConformalState.initial(model, mesh, system=system), p, model, mesh, system)
    return model, mesh, system, p, record, final


def _drift(record):
    vol = record.column("vol")
    return float(np.abs(vol / vol[0] - 1).max())


def test_c01_stationarity(acceptance):
    start = time.perf_counter()
    model, mesh, _, _, record, _ = _run("sinh", tau=1e-2, t_end=5.0, stop_tol=0.0)
    elapsed = time.perf_counter() - start
    dev = max(np.abs(record.column("u_max") - 1).max(), np.abs(record.column("u_min") - 1).max())
    scal = curvature_field(model, mesh).values
    scal_err = float(np.abs(scal + model.m * (model.m - 1)).max())
    ok = (dev <= 1e-10 and elapsed < 5.0 and record.rows[-1]["t"] == pytest.approx(5.0)
          and scal_err <= 1e-10)
    acceptance(1, "stationarity", ok,
               f"sup|u-1|={dev:.2e} (<=1e-10), runtime={elapsed:.2f}s (<5s), "
               f"|scal+m(m-1)|={scal_err:.1e}, steps={len(record) - 1}")
    assert ok


def test_c02_rho_monotone(acceptance, bench):
    records = {"benchmark": bench[4]}
    records["sinh"] = _run("sinh", tau=1e-2, t_end=1.0, stop_tol=0.0)[4]
    for m in (3, 5):
        records[f"perturbed m={m}"] = _run(m=m, tau=1e-3)[4]
    records["perturbed eps=0.05"] = _run(eps=0.05, tau=1e-3)[4]
    for tau in (1e-2, 5e-3, 2.5e-3):
        records[f"benchmark tau={tau}"] = _run(tau=tau)[4]
    worst = {name: float(np.max(np.diff(r.column("rho")), initial=-np.inf)) for name, r in records.items()}
    negative = all(r.scal_init_max < 0 for r in records.values())
    top = max(v for v in worst.values() if np.isfinite(v))
    ok = negative and top <= 1e-10
    acceptance(2, "rho monotone", ok, f"max rho_(k+1)-rho_k={top:.2e} (<=1e-10) over {len(records)} runs")
    assert ok


def test_c03_volume(acceptance):
    taus = (1e-2, 5e-3, 2.5e-3)
    drifts = [_drift(_run(tau=tau)[4]) for tau in taus]
    consts = [d / t for d, t in zip(drifts, taus)]
    ratios = [drifts[k] / drifts[k + 1] for k in range(2)]
    ok = max(consts) <= VOLUME_DRIFT_CONSTANT and min(ratios) >= 1.8
    acceptance(3, "volume preservation", ok,
               f"drift={', '.join(f'{d:.2e}' for d in drifts)}, drift/tau max={max(consts):.4f} "
               f"(<={VOLUME_DRIFT_CONSTANT}), halving ratios={ratios[0]:.2f},{ratios[1]:.2f} (>=1.8)")
    assert ok


def test_c04_scal_max(acceptance, bench):
    record = bench[4]
    smax = record.column("scal_max")
    v = _by_id(audit_monotonicity(record))["scal_max_nonincreasing"]
    ok = v.passed and smax.max() < 0
    acceptance(4, "scal_max decreasing and negative", ok,
               f"max increment={np.diff(smax).max():.2e} (<=1e-8), max scal_max={smax.max():.4f} (<0), "
               f"steps={len(record) - 1}")
    assert ok


def test_c05_exponential_convergence(acceptance, bench):
    record = bench[4]
    v = _by_id(audit_decay(record))
    rate, r2 = v["decay_scal_minus_rho_sup"], v["decay_scal_minus_rho_sup_r2"]
    ok = rate.passed and r2.passed
    acceptance(5, "exponential convergence", ok,
               f"rate={rate.measured:.3f} (>=0.9b={rate.threshold:.3f}), r2={r2.measured:.6f} (>=0.98)")
    assert ok


def test_c06_u_bounds(acceptance, bench):
    model, record = bench[0], bench[4]
    v = _by_id(audit_u_bounds(record, model, slack=1e-6))
    lower, upper, raw = v["u_min_lower_bound"], v["u_max_upper_bound"], v["u_min_lower_bound_unsimplified"]
    ok = lower.passed and upper.passed
    acceptance(6, "explicit u bounds", ok,
               f"lower margin={lower.measured:.4f}, upper margin={upper.measured:.4f} (both >=-1e-6); "
               f"lower estimate keeping exp(rho0 t): margin={raw.measured:.2e}")
    assert upper.passed
    assert lower.passed, "lower estimate 1 + (b/|rho0|)(1 - exp(rho0 t)) exceeds 1 while volume forces u_min < 1"


def test_c07_dudt_decay(acceptance, bench):
    record = bench[4]
    v = _by_id(audit_decay(record))
    rate, r2 = v["decay_dudt_sup"], v["decay_dudt_sup_r2"]
    ident = audit_identity(record, tol=1e-9)
    ok = rate.passed and r2.passed and ident.passed
    acceptance(7, "time derivative decay", ok,
               f"rate={rate.measured:.3f} (>=0.9b={rate.threshold:.3f}), r2={r2.measured:.6f} (>=0.98), "
               f"identity defect={ident.measured:.1e} (<=1e-9)")
    assert ok


def test_c08_constant_negative_curvature(acceptance):
    _, _, _, p, record, _ = _run(tau=1e-3, stop_tol=0.0)
    rep = detect_convergence(record, 0.0)
    t_target = 10 / record.b
    t_final = record.rows[-1]["t"]
    ok = (record.termination == "t_end" and t_target <= t_final < t_target + p.tau
          and rep.final_sup < 1e-4 and rep.final_rho < 0)
    acceptance(8, "constant negative curvature", ok,
               f"t={t_final:.4f} (first step past 10/b={t_target:.4f}), sup|scal-rho|={rep.final_sup:.2e} (<1e-4), "
               f"rho={rep.final_rho:.4f} (<0)")
    assert ok


def test_c09_max_principle(acceptance, bench):
    model, mesh, system, _, record, _ = bench
    cal = calibrate_max_principle(model, Ks=(64, 128, 256))
    snaps = sorted(record.snapshots.items())
    verdicts = [audit_max_principle(ConformalState.from_u(t, u, model, mesh, system), mesh, MP_TOL_CONSTANT)
                for _, (t, u) in snaps]
    tip = sum("node 0" in v.note for v in verdicts)
    every_step = audit_record_max_principle(record)
    ok = (all(v.passed for v in verdicts) and all(v.passed for v in every_step) and tip > 0
          and max(cal["max_defect_over_h"].values()) <= MP_TOL_CONSTANT)
    acceptance(9, "discrete maximum principle", ok,
               f"{len(verdicts)} snapshots, worst excess={max(v.measured for v in verdicts):.2e} (<=0), "
               f"{tip} with a tip extremum, calibrated defect/h={max(cal['max_defect_over_h'].values()):.1e} "
               f"(C={MP_TOL_CONSTANT})")
    assert ok


def test_c10_restart_and_self_convergence(acceptance, bench):
    model, mesh, system, params, record, _ = bench
    restart = restart_check(record, model, mesh, params, system=system)
    t_compare = 0.086  # 1/b rounded down to the coarsest step
    conv = self_convergence(model, mesh, FlowParams(tau=2e-3), t_compare=t_compare, levels=4, system=system)
    ok = restart.passed and restart.compared_steps > 0 and min(conv.orders) >= 1.0
    acceptance(10, "restart and self-convergence", ok,
               f"restart sup diff={restart.sup_difference:.1e} (<=5tau={restart.threshold:.0e}), "
               f"orders={', '.join(f'{o:.3f}' for o in conv.orders)} (>=1) at t={t_compare}")
    assert ok


def test_c11_spectral_trichotomy(acceptance):
    expected = {"sinh": ("-", "-", "-"), "linear": ("0", "0", "0"), "perturbed_sinh": ("-", "-", "-")}
    reports = {kind: trichotomy_check(*model_and_mesh(kind, K=512)) for kind in expected}
    coarse = trichotomy_check(*model_and_mesh("perturbed_sinh", K=256))
    signs_ok = all(reports[k].signs == s and reports[k].phi1_positive for k, s in expected.items())
    dev512 = reports["perturbed_sinh"].identity_deviation
    dev_sinh = reports["sinh"].identity_deviation
    ok = signs_ok and dev512 <= 1e-3 and dev_sinh <= 1e-3 and dev512 < coarse.identity_deviation
    signs = ", ".join(f"{k}={''.join(reports[k].signs)}" for k in expected)
    acceptance(11, "spectral trichotomy", ok,
               f"{signs}; identity deviation K=256 {coarse.identity_deviation:.1e} -> K=512 {dev512:.1e} "
               f"(<=1e-3), sinh {dev_sinh:.1e}")
    assert ok


def _exact_laplacian(model, x, du, d2u):
    w, n = model.warp, model.n
    out = np.empty_like(x)
    out[0] = (n + 1) * d2u(0.0)
    out[1:] = d2u(x[1:]) + n * w.df(x[1:]) / w.f(x[1:]) * du(x[1:])
    return out


def test_c12_operator(acceptance):
    gen = np.random.default_rng(12)
    adjoint, kernel, orders, positive = 0.0, 0.0, [], True
    for kind in WARPS:
        for m in (3, 4, 5):
            model, mesh = model_and_mesh(kind, m=m, K=256)
            for op in (assemble_laplacian(mesh, model), assemble_conformal_laplacian(model, mesh)):
                for _ in range(5):
                    u, v = gen.normal(size=(2, mesh.nodes.size))
                    a, b = weighted_inner(mesh, apply(op, u), v), weighted_inner(mesh, u, apply(op, v))
                    adjoint = max(adjoint, abs(a - b) / max(1.0, abs(a)))
            kernel = max(kernel, float(np.abs(apply(assemble_laplacian(mesh, model), np.ones(257))).max()))
            op = assemble_conformal_laplacian(model, mesh)
            positive &= bool(np.all(first_eigenpair(op, mesh)[1] > 0))
            errs = []
            for K in (128, 256, 512):
                model_k, mesh_k = model_and_mesh(kind, m=m, K=K)
                x = mesh_k.nodes
                exact = _exact_laplacian(model_k, x, lambda s: -np.pi * np.sin(np.pi * s),
                                         lambda s: -np.pi**2 * np.cos(np.pi * s))
                err = np.abs(apply(assemble_laplacian(mesh_k, model_k), np.cos(np.pi * x)) - exact)
                errs.append(err[(x >= 0.25) & (x <= 0.75)].max())
            orders.extend(np.log2(np.array(errs[:-1]) / errs[1:]))
    ok = adjoint <= 1e-10 and kernel <= 1e-12 and min(orders) >= 1.99 and positive
    acceptance(12, "operator correctness", ok,
               f"self-adjoint defect={adjoint:.1e} (<=1e-10), |Delta 1|={kernel:.1e}, "
               f"interior order min={min(orders):.4f} (rounds to 2), phi1>0: {positive}")
    assert ok
