"""Command line entry point: ``run``, ``spectral``, ``sweep`` and ``audit``.

Exit status: 0 when every applicable verdict passes, 1 on a failing verdict,
2 on a configuration or usage error, 3 when a run aborts.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import artifacts as io
from .config import _INT_KEYS, DEFAULTS, RunConfig, parse_config
from .diagnostics import (Verdict, all_passed, audit_record, detect_convergence, fit_exponential,
                          summary_table)
from .errors import ConfigError, EdgeYamabeError, InsufficientDataError
from .flow import ConformalState, FlowAborted, FlowSystem, run_flow
from .geometry import validate_feasibility
from .spectral import trichotomy_check

log = logging.getLogger("edgeyamabe")

OUT_ENV = "EDGEYAMABE_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def output_root(cfg: RunConfig | None = None) -> Path:
    """``--out`` beats ``output.directory`` beats ``$EDGEYAMABE_OUT`` beats ``./runs``."""
    if cfg is not None and cfg.output["directory"]:
        return Path(cfg.output["directory"])
    return Path(os.environ.get(OUT_ENV, "runs"))


def default_run_dir(cfg: RunConfig) -> Path:
    stem = Path(cfg.source).stem if cfg.source else "run"
    return output_root(cfg) / stem


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class Prepared:
    cfg: RunConfig
    model: object
    mesh: object
    system: FlowSystem
    params: object


def prepare(cfg: RunConfig, flow: bool = True) -> Prepared:
    """Build model, mesh and flow parameters; raises ConfigError on inconsistency."""
    model = cfg.build_model()
    try:
        mesh = cfg.build_mesh(model)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    system = FlowSystem.build(model, mesh)
    params = cfg.flow_params()
    if flow and params.t_end is None and system.scal0.b <= 0:
        raise ConfigError(["flow.t_end is required when the initial scalar curvature is not negative"])
    return Prepared(cfg, model, mesh, system, params)


def spectral_verdicts(report: dict | None, identity_tol: float = 1e-3) -> list[Verdict]:
    if report is None:
        return []
    signs = report["signs"]
    distinct = len(set(signs))
    v = Verdict.compare("spectral_sign_agreement", distinct, 1, "<=",
                        "first eigenvalue, conformal curvature and invariant share one sign",
                        note="signs=" + "".join(signs))
    if "mixed" in signs:
        v.passed = False
    ident = Verdict.compare("eigen_conformal_identity", report["identity_deviation"], identity_tol, "<=",
                            "scal of phi1-conformal metric equals lambda1 phi1^(-4/(m-2))")
    return [v, ident]


def feasibility_verdict(report: dict) -> Verdict:
    errors = [f for f in report["findings"] if f["level"] == "error"]
    v = Verdict.compare("feasibility", len(errors), 0, "<=", "feasible edge metric",
                        note="; ".join(f["message"] for f in errors))
    return v


def compute_verdicts(record, model, cfg: RunConfig, reports: dict) -> list[Verdict]:
    """Every verdict of a run as a pure function of the persisted data."""
    verdicts = [feasibility_verdict(reports["feasibility"])]
    verdicts += audit_record(record, model, stop_tol=cfg.flow["stop_tol"],
                             drift_constant=cfg.audit["volume_drift_constant"],
                             convergence_tol=cfg.audit["convergence_tol"],
                             bound_slack=cfg.audit["bound_slack"])
    verdicts += spectral_verdicts(reports.get("spectral"))
    return verdicts


def _decay_reports(record) -> dict:
    out = {}
    for col in ("scal_minus_rho_sup", "dudt_sup"):
        try:
            out[col] = fit_exponential(record.column("t"), record.column(col)).to_dict()
        except (InsufficientDataError, ValueError) as exc:
            out[col] = {"skipped": str(exc)}
    return out


def _run_spectral(prep: Prepared) -> dict:
    sb = prep.cfg.spectral
    rep = trichotomy_check(prep.model, prep.mesh, iters=sb["iters"], step=sb["step"], band=sb["zero_band"])
    return rep.to_dict()


def _write_common(directory: Path, cfg: RunConfig) -> None:
    io.write_json(directory / io.CONFIG_FILE, cfg.to_dict())
    if cfg.source and Path(cfg.source).is_file():
        (directory / io.CONFIG_SOURCE_FILE).write_text(Path(cfg.source).read_text(encoding="utf-8"),
                                                       encoding="utf-8")


def cmd_run(cfg: RunConfig, out_dir: Path, quiet: bool = False) -> tuple[int, dict]:
    """Flow, audits and (optionally) the spectral check; writes the artifact to ``out_dir``."""
    prep = prepare(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started, t0 = _now(), time.perf_counter()
    _write_common(out_dir, cfg)
    feas = validate_feasibility(prep.model).to_dict()
    meta = {"version": __version__, "started": started}
    reports = {"feasibility": feas}
    try:
        init = ConformalState.initial(prep.model, prep.mesh, system=prep.system)
        record, final = run_flow(init, prep.params, prep.model, prep.mesh, prep.system)
    except FlowAborted as exc:
        reports["record"] = exc.record.meta()
        io.write_record(out_dir, exc.record, cfg.output["formats"])
        io.write_json(out_dir / io.REPORT_FILE, reports)
        meta.update(finished=_now(), wall_seconds=time.perf_counter() - t0, status="aborted", error=str(exc),
                    exit_code=EXIT_ABORT)
        io.write_json(out_dir / io.META_FILE, meta)
        log.error("run aborted: %s", exc)
        return EXIT_ABORT, {"status": "aborted", "error": str(exc)}
    reports["record"] = record.meta()
    reports["convergence"] = detect_convergence(record, cfg.flow["stop_tol"], cfg.audit["convergence_tol"]).to_dict()
    reports["decay_fits"] = _decay_reports(record)
    io.write_record(out_dir, record, cfg.output["formats"])
    io.write_final_state(out_dir, prep.mesh.nodes, final.u)
    if cfg.spectral["enabled"]:
        try:
            reports["spectral"] = _run_spectral(prep)
        except EdgeYamabeError as exc:
            reports["spectral_error"] = str(exc)
            io.write_json(out_dir / io.REPORT_FILE, reports)
            meta.update(finished=_now(), wall_seconds=time.perf_counter() - t0, status="aborted",
                        error=str(exc), exit_code=EXIT_ABORT)
            io.write_json(out_dir / io.META_FILE, meta)
            log.error("spectral check aborted: %s", exc)
            return EXIT_ABORT, {"status": "aborted", "error": str(exc)}
    io.write_json(out_dir / io.REPORT_FILE, reports)
    verdicts = compute_verdicts(record, prep.model, cfg, reports)
    io.write_verdicts(out_dir, verdicts)
    ok = all_passed(verdicts)
    code = EXIT_OK if ok else EXIT_FAIL
    meta.update(finished=_now(), wall_seconds=time.perf_counter() - t0, status="completed", exit_code=code)
    io.write_json(out_dir / io.META_FILE, meta)
    if not quiet:
        print(summary_table(verdicts))
        print(f"artifact: {out_dir}")
    vol = record.column("vol")
    summary = {
        "status": "completed",
        "termination": record.termination,
        "steps": len(record) - 1,
        "final_t": record.rows[-1]["t"],
        "final_rho": record.rows[-1]["rho"],
        "final_scal_minus_rho_sup": record.rows[-1]["scal_minus_rho_sup"],
        "volume_drift": float(np.max(np.abs(vol - vol[0])) / vol[0]),
        "lambda1": reports.get("spectral", {}).get("lambda1", float("nan")),
        "all_passed": ok,
    }
    return code, summary


def cmd_spectral(cfg: RunConfig, out_dir: Path, quiet: bool = False) -> tuple[int, dict]:
    """Trichotomy report only, written to ``out_dir/spectral.json``."""
    prep = prepare(cfg, flow=False)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_common(out_dir, cfg)
    try:
        report = _run_spectral(prep)
    except EdgeYamabeError as exc:
        io.write_json(out_dir / "spectral.json", {"error": str(exc)})
        log.error("spectral check aborted: %s", exc)
        return EXIT_ABORT, {"error": str(exc)}
    verdicts = spectral_verdicts(report)
    report["verdicts"] = [v.to_dict() for v in verdicts]
    report["version"] = __version__
    io.write_json(out_dir / "spectral.json", report)
    if not quiet:
        print(f"lambda1 = {report['lambda1']:.10g}  nu ~ {report['nu_estimate']:.10g}  "
              f"signs = {tuple(report['signs'])}  identity deviation = {report['identity_deviation']:.3e}")
    return (EXIT_OK if all_passed(verdicts) else EXIT_FAIL), report


def cmd_audit(artifact_dir: Path, quiet: bool = False) -> tuple[int, list[Verdict]]:
    """Recompute verdicts from a stored artifact and compare with the stored ones."""
    artifact_dir = Path(artifact_dir)
    from .config import config_from_dict

    cfg = config_from_dict(io.read_json(artifact_dir / io.CONFIG_FILE))
    model = cfg.build_model()
    record = io.read_record(artifact_dir)
    reports = io.read_json(artifact_dir / io.REPORT_FILE)
    verdicts = compute_verdicts(record, model, cfg, reports)
    stored = io.read_verdicts(artifact_dir)
    same = [io.verdict_key(v) for v in verdicts] == [io.verdict_key(v) for v in stored]
    if not quiet:
        print(summary_table(verdicts))
        print("stored verdicts reproduced" if same else "stored verdicts DIFFER from recomputation")
    code = EXIT_OK if all_passed(verdicts) and same else EXIT_FAIL
    return code, verdicts


SUMMARY_COLUMNS = ("value", "exit_code", "status", "termination", "steps", "final_t", "final_rho",
                   "final_scal_minus_rho_sup", "volume_drift", "lambda1", "all_passed")


def parse_sweep_values(parameter: str, values) -> list:
    block, _, key = parameter.partition(".")
    if block not in DEFAULTS or key not in DEFAULTS[block]:
        raise ConfigError([f"unknown sweep parameter {parameter!r}"])
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    if not values:
        raise ConfigError(["sweep needs at least one value"])
    cast = int if (block, key) in _INT_KEYS else float
    try:
        return [cast(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"bad sweep value for {parameter}: {exc}"]) from exc


def cmd_sweep(cfg: RunConfig, parameter: str, values, out_dir: Path, workers: int | None = None,
              quiet: bool = False) -> tuple[int, list[dict]]:
    """Independent runs per value in a thread pool, then ``summary.csv``."""
    values = parse_sweep_values(parameter, values)
    configs = [cfg.with_value(parameter, v) for v in values]  # validate all before running any
    out_dir = Path(out_dir)

    def one(item):
        value, sub_cfg = item
        sub_dir = out_dir / f"{parameter}={value!r}"
        try:
            code, summary = cmd_run(sub_cfg, sub_dir, quiet=True)
        except Exception as exc:  # isolate per-run failures
            log.error("sweep run %s=%r failed: %s", parameter, value, exc)
            code, summary = EXIT_ABORT, {"status": "error", "error": str(exc)}
        return {"value": value, "exit_code": code, **summary}

    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(one, zip(values, configs)))
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_summary_cell(row.get(c, "")) for c in SUMMARY_COLUMNS])
    if not quiet:
        print(",".join(SUMMARY_COLUMNS))
        for row in rows:
            print(",".join(_summary_cell(row.get(c, "")) for c in SUMMARY_COLUMNS))
    return max(r["exit_code"] for r in rows), rows


def _summary_cell(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgeyamabe",
                                     description="Normalized Yamabe flow on a model cone.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, type=Path, help="TOML run configuration")
        p.add_argument("--out", type=Path, default=None,
                       help=f"output directory (default: output.directory, ${OUT_ENV}, or ./runs)")
        p.add_argument("--quiet", action="store_true", help="only warnings and errors")

    common(sub.add_parser("run", help="integrate the flow and audit it"))
    common(sub.add_parser("spectral", help="first eigenvalue and invariant sign check"))
    sw = sub.add_parser("sweep", help="repeat runs over one parameter")
    common(sw)
    sw.add_argument("--param", required=True, help="dotted key, e.g. flow.tau or mesh.K")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--workers", type=int, default=None)
    au = sub.add_parser("audit", help="recompute verdicts of an existing artifact")
    au.add_argument("artifact", type=Path)
    au.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "audit":
            return cmd_audit(args.artifact, args.quiet)[0]
        cfg = parse_config(args.config)
        if args.command == "sweep":
            out = args.out or output_root(cfg) / f"sweep-{Path(args.config).stem}"
            return cmd_sweep(cfg, args.param, args.values, out, args.workers, args.quiet)[0]
        if args.command == "spectral":
            out = args.out or default_run_dir(cfg)
            return cmd_spectral(cfg, out, args.quiet)[0]
        out = args.out or default_run_dir(cfg)
        return cmd_run(cfg, out, args.quiet)[0]
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        if exc.line is not None:
            print(f"  line {exc.line}", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except EdgeYamabeError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
