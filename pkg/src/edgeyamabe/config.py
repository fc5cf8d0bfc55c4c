"""Run configuration: TOML parsing, validation and the defaults table."""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .diagnostics import MP_TOL_CONSTANT, VOLUME_DRIFT_CONSTANT
from .errors import ConfigError
from .flow import SCHEMES, FlowParams
from .geometry import SHAPES, WARP_KINDS, EdgeModel, WarpSpec
from .operators import build_mesh

# The single source of defaults.  ``None`` means "derived at run time"
# (n = m - 1, fiber_scal = n(n-1), fiber_lambda0 = n + 1/2, t_end = 10/b).
DEFAULTS: dict[str, dict] = {
    "model": {
        "m": None,  # required
        "n": None,
        "fiber_scal": None,
        "fiber_lambda0": None,
        "warp": "perturbed_sinh",
        "eps": 0.1,
        "shape": "bump",
        "x_max": 1.0,
    },
    "mesh": {"K": 256, "gamma": 1.0},
    "flow": {
        "tau": 1e-3,
        "t_end": None,
        "stop_tol": 1e-6,
        "max_steps": 1_000_000,
        "scheme": "semi_implicit",
        "snapshot_every": 0,
    },
    "spectral": {"enabled": True, "iters": 500, "step": 0.5, "zero_band": 1e-6},
    "output": {"directory": None, "formats": ["csv", "json"]},
    "audit": {
        "mp_tol_constant": MP_TOL_CONSTANT,
        "volume_drift_constant": VOLUME_DRIFT_CONSTANT,
        "convergence_tol": 1e-4,
        "bound_slack": 1e-6,
    },
}

REQUIRED = {("model", "m")}
FORMATS = ("csv", "json")

_INT_KEYS = {("model", "m"), ("model", "n"), ("mesh", "K"), ("flow", "max_steps"), ("flow", "snapshot_every"),
             ("spectral", "iters")}
_BOOL_KEYS = {("spectral", "enabled")}
_STR_KEYS = {("model", "warp"), ("model", "shape"), ("flow", "scheme"), ("output", "directory")}
_LIST_KEYS = {("output", "formats")}


@dataclass
class RunConfig:
    """Validated configuration; every block is a plain dict with all keys present."""

    model: dict
    mesh: dict
    flow: dict
    spectral: dict
    output: dict
    audit: dict
    source: str | None = field(default=None, compare=False)

    def build_model(self) -> EdgeModel:
        mb = self.model
        warp = WarpSpec(mb["warp"], float(mb["eps"]), mb["shape"])
        return EdgeModel(m=mb["m"], n=mb["n"], fiber_scal=float(mb["fiber_scal"]),
                         fiber_lambda0=float(mb["fiber_lambda0"]), warp=warp, x_max=float(mb["x_max"]))

    def build_mesh(self, model: EdgeModel | None = None):
        model = self.build_model() if model is None else model
        return build_mesh(self.mesh["K"], self.mesh["gamma"], model.x_max, model)

    def flow_params(self) -> FlowParams:
        fb = self.flow
        return FlowParams(tau=fb["tau"], t_end=fb["t_end"], stop_tol=fb["stop_tol"],
                          max_steps=fb["max_steps"], scheme=fb["scheme"],
                          snapshot_every=fb["snapshot_every"],
                          mp_tol_constant=self.audit["mp_tol_constant"])

    def to_dict(self) -> dict:
        return {name: copy.deepcopy(getattr(self, name)) for name in DEFAULTS}

    def with_value(self, dotted: str, value) -> "RunConfig":
        """Copy with one ``block.key`` replaced and the result revalidated."""
        block, _, key = dotted.partition(".")
        if block not in DEFAULTS or key not in DEFAULTS[block]:
            raise ConfigError(f"unknown parameter {dotted!r}")
        data = self.to_dict()
        data[block][key] = value
        # derived model entries must be re-derived when m changes
        if dotted == "model.m":
            for k in ("n", "fiber_scal"):
                data["model"][k] = None
        return config_from_dict(data, source=self.source)


def _line_of(exc: tomli.TOMLDecodeError):
    line = getattr(exc, "lineno", None)
    if line is None:
        found = re.search(r"line (\d+)", str(exc))
        line = int(found.group(1)) if found else None
    return line


def _check_type(block, key, value, problems):
    where = f"{block}.{key}"
    if (block, key) in _BOOL_KEYS:
        if not isinstance(value, bool):
            problems.append(f"{where} must be a boolean")
            return False
    elif (block, key) in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{where} must be an integer")
            return False
    elif (block, key) in _STR_KEYS:
        if not isinstance(value, str):
            problems.append(f"{where} must be a string")
            return False
    elif (block, key) in _LIST_KEYS:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            problems.append(f"{where} must be a list of strings")
            return False
    else:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{where} must be a number")
            return False
        if not math.isfinite(value):
            problems.append(f"{where} must be finite")
            return False
    return True


def config_from_dict(data: dict, source: str | None = None) -> RunConfig:
    """Validate a nested mapping, filling defaults; aggregates every violation."""
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    for block in data:
        if block not in DEFAULTS:
            problems.append(f"unknown block [{block}]")
    merged = copy.deepcopy(DEFAULTS)
    for block, defaults in DEFAULTS.items():
        given = data.get(block, {})
        if not isinstance(given, dict):
            problems.append(f"[{block}] must be a table")
            continue
        for key, value in given.items():
            if key not in defaults:
                problems.append(f"unknown key {block}.{key}")
                continue
            if value is None:
                continue
            if _check_type(block, key, value, problems):
                merged[block][key] = value
    for block, key in REQUIRED:
        if merged[block][key] is None:
            problems.append(f"{block}.{key} is required")

    mb, me, fb, sb, ob, ab = (merged[k] for k in ("model", "mesh", "flow", "spectral", "output", "audit"))
    m = mb["m"]
    if isinstance(m, int):
        if m < 3:
            problems.append(f"model.m must satisfy m >= 3, got {m}")
        if mb["n"] is None:
            mb["n"] = m - 1
        elif mb["n"] != m - 1:
            problems.append(f"model.n must equal m - 1 = {m - 1} for an isolated cone, got {mb['n']}")
        n = m - 1
        rigid = float(n * (n - 1))
        if mb["fiber_scal"] is None:
            mb["fiber_scal"] = rigid
        elif abs(float(mb["fiber_scal"]) - rigid) > 1e-12:
            problems.append(
                f"model.fiber_scal must be n(n-1) = {rigid:g}, got {mb['fiber_scal']:g}: "
                "otherwise the scalar curvature blows up like (S_F - n(n-1))/x^2 at the tip")
        if mb["fiber_lambda0"] is None:
            mb["fiber_lambda0"] = n + 0.5
    if mb["warp"] not in WARP_KINDS:
        problems.append(f"model.warp must be one of {WARP_KINDS}, got {mb['warp']!r}")
    if mb["shape"] not in SHAPES:
        problems.append(f"model.shape must be one of {SHAPES}, got {mb['shape']!r}")
    if not mb["x_max"] > 0:
        problems.append("model.x_max must be positive")
    if mb["fiber_lambda0"] is not None and mb["fiber_lambda0"] < 0:
        problems.append("model.fiber_lambda0 must be nonnegative")

    if me["K"] < 16:
        problems.append(f"mesh.K must be >= 16, got {me['K']}")
    if not me["gamma"] >= 1:
        problems.append(f"mesh.gamma must be >= 1, got {me['gamma']}")

    if not fb["tau"] > 0:
        problems.append("flow.tau must be positive")
    if fb["t_end"] is not None and not fb["t_end"] > 0:
        problems.append("flow.t_end must be positive")
    if fb["stop_tol"] < 0:
        problems.append("flow.stop_tol must be nonnegative")
    if fb["max_steps"] < 1:
        problems.append("flow.max_steps must be >= 1")
    if fb["snapshot_every"] < 0:
        problems.append("flow.snapshot_every must be nonnegative")
    if fb["scheme"] not in SCHEMES:
        problems.append(f"flow.scheme must be one of {SCHEMES}, got {fb['scheme']!r}")

    if sb["iters"] < 1:
        problems.append("spectral.iters must be >= 1")
    if not sb["step"] > 0:
        problems.append("spectral.step must be positive")
    if not sb["zero_band"] > 0:
        problems.append("spectral.zero_band must be positive")

    bad = [f for f in ob["formats"] if f not in FORMATS]
    if bad:
        problems.append(f"output.formats entries must be in {FORMATS}, got {bad}")
    if not ob["formats"]:
        problems.append("output.formats must name at least one format")

    for key in ("mp_tol_constant", "volume_drift_constant", "convergence_tol", "bound_slack"):
        if not ab[key] > 0:
            problems.append(f"audit.{key} must be positive")

    if problems:
        raise ConfigError(problems)
    cfg = RunConfig(**merged, source=source)
    try:
        cfg.build_model()
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    return cfg


def parse_config_text(text: str, source: str | None = None) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"TOML parse error: {exc}"], line=_line_of(exc)) from exc
    return config_from_dict(data, source=source)


def parse_config(path) -> RunConfig:
    """Read and validate a TOML run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
    return parse_config_text(text, source=str(path))


def defaults_markdown() -> str:
    """The defaults table in Markdown, as printed in the README."""
    lines = ["| key | default |", "|---|---|"]
    for block, keys in DEFAULTS.items():
        for key, value in keys.items():
            lines.append(f"| `{block}.{key}` | `{value!r}` |")
    return "\n".join(lines)
