"""Reading and writing run artifacts.

An artifact directory holds::

    config.json        resolved configuration (reloadable)
    config.toml        the source file as given, when there was one
    series.csv         t, rho, vol, scal_min, scal_max, u_min, u_max, scal_minus_rho_sup, dudt_sup
    monitors.csv       per-step maximum-principle and identity monitors
    series.json        both tables as JSON columns, when ``json`` is among the formats
    final_state.csv    x, u
    verdicts.json      list of verdicts
    reports.json       feasibility, convergence, spectral and record metadata
    meta.json          tool version, wall-clock times, status

Floats are written with ``repr`` so that reading them back is bit-exact.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .diagnostics import Verdict
from .flow import MONITOR_COLUMNS, SERIES_COLUMNS, FlowRecord

SERIES_FILE = "series.csv"
SERIES_JSON_FILE = "series.json"
MONITOR_FILE = "monitors.csv"
FINAL_FILE = "final_state.csv"
VERDICT_FILE = "verdicts.json"
REPORT_FILE = "reports.json"
META_FILE = "meta.json"
CONFIG_FILE = "config.json"
CONFIG_SOURCE_FILE = "config.toml"

MONITOR_FILE_COLUMNS = ("t",) + MONITOR_COLUMNS + ("identity_defect",)


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return repr(float(value))


def write_table(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_table(path: Path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [[float(v) for v in row] for row in reader]


def _json_safe(obj):
    """Replace non-finite floats by strings so the output is standard JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else repr(value)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json_restore(value):
    if value in ("nan", "inf", "-inf"):
        return float(value)
    return value


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_record(directory: Path, record: FlowRecord, formats=("csv",)) -> None:
    series = [[row[c] for c in SERIES_COLUMNS] for row in record.rows]
    monitors = [[float(row[c]) for c in MONITOR_FILE_COLUMNS] for row in record.rows]
    if "csv" in formats:
        write_table(directory / SERIES_FILE, SERIES_COLUMNS, series)
        write_table(directory / MONITOR_FILE, MONITOR_FILE_COLUMNS, monitors)
    if "json" in formats:
        write_json(directory / SERIES_JSON_FILE,
                   {"series": {"columns": list(SERIES_COLUMNS), "rows": series},
                    "monitors": {"columns": list(MONITOR_FILE_COLUMNS), "rows": monitors}})


def _read_tables(directory: Path):
    if (directory / SERIES_FILE).exists():
        return (*read_table(directory / SERIES_FILE), *read_table(directory / MONITOR_FILE))
    data = read_json(directory / SERIES_JSON_FILE)
    rows = [[[float(_json_restore(v)) for v in r] for r in data[k]["rows"]] for k in ("series", "monitors")]
    return data["series"]["columns"], rows[0], data["monitors"]["columns"], rows[1]


def read_record(directory: Path) -> FlowRecord:
    """Rebuild a record (without snapshots) from the series tables and ``reports.json``."""
    directory = Path(directory)
    s_head, s_rows, m_head, m_rows = _read_tables(directory)
    if tuple(s_head) != SERIES_COLUMNS:
        raise ValueError(f"unexpected series header {s_head}")
    if len(s_rows) != len(m_rows):
        raise ValueError("series and monitor tables differ in length")
    rows = []
    for s, mrow in zip(s_rows, m_rows):
        row = dict(zip(s_head, s))
        extra = dict(zip(m_head, mrow))
        extra.pop("t")
        extra["mp_scal_violation"] = bool(extra["mp_scal_violation"])
        row.update(extra)
        rows.append(row)
    meta = read_json(directory / REPORT_FILE)["record"]
    return FlowRecord(rows=rows, termination=meta["termination"], tau=meta["tau"], t_end=meta["t_end"],
                      scal_init_min=_json_restore(meta["scal_init_min"]),
                      scal_init_max=_json_restore(meta["scal_init_max"]),
                      scal_init_constant=meta["scal_init_constant"], u0_is_one=meta["u0_is_one"],
                      error=meta["error"])


def write_final_state(directory: Path, x, u) -> None:
    write_table(directory / FINAL_FILE, ("x", "u"), zip(x, u))


def write_verdicts(directory: Path, verdicts) -> None:
    write_json(directory / VERDICT_FILE, [v.to_dict() for v in verdicts])


def read_verdicts(directory: Path) -> list[Verdict]:
    out = []
    for item in read_json(Path(directory) / VERDICT_FILE):
        item = {k: _json_restore(v) for k, v in item.items()}
        out.append(Verdict(**item))
    return out


def verdict_key(v: Verdict) -> tuple:
    """Comparable form of a verdict with NaN normalized."""
    def norm(x):
        return "nan" if isinstance(x, float) and math.isnan(x) else x

    return tuple(norm(x) for x in v.to_dict().values())
