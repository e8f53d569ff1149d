"""File formats: trajectory and observables CSV, event and report JSON, GridField text, run configs.

Numbers are written with 17 significant digits, '.' decimals and '\\n' line
ends so identical runs give byte-identical files.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balayage import Grid, GridField
from .errors import ConfigError
from .rational import RationalMap
from .reference import ScenarioTag

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(c if isinstance(c, str) else fmt(c) for c in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# --- trajectories -------------------------------------------------------------

def trajectory_rows(states, stride: int = 1) -> tuple[list[str], list[list]]:
    """Columns ``t, Q, b_re, b_im``, then each zero and each pole with its order.

    The column count follows the largest structure in the run; states with
    fewer zeros or poles leave the trailing cells empty.
    """
    picked = list(states[::stride])
    if states and picked[-1] is not states[-1]:
        picked.append(states[-1])
    m = max(s.g.zero_list.size for s in picked)
    n = max(s.g.poles.size for s in picked)
    header = ["t", "Q", "b_re", "b_im"]
    header += [f"omega{k}_{p}" for k in range(1, m + 1) for p in ("re", "im")]
    header += [f"pole{j}_{p}" for j in range(1, n + 1) for p in ("re", "im", "mult")]
    rows = []
    for s in picked:
        g = s.g
        row = [s.t, s.Q, g.lead.real, g.lead.imag]
        zl = g.zero_list
        for k in range(m):
            row += [zl[k].real, zl[k].imag] if k < zl.size else ["", ""]
        for j in range(n):
            if j < g.poles.size:
                row += [g.poles[j].real, g.poles[j].imag, float(g.pole_mult[j])]
            else:
                row += ["", "", ""]
        rows.append(row)
    return header, rows


def write_trajectory_csv(path, states, stride: int = 1) -> None:
    _write_rows(Path(path), *trajectory_rows(states, stride))


OBSERVABLE_MOMENTS = 5


def write_observables_csv(path, records: list[dict]) -> None:
    """Rows of ``t, Q, M0_re, M0_im, ..., M5_re, M5_im, pg_residual``."""
    header = ["t", "Q"]
    header += [f"M{k}_{p}" for k in range(OBSERVABLE_MOMENTS + 1) for p in ("re", "im")]
    header.append("pg_residual")
    rows = []
    for r in records:
        row = [r["t"], r["Q"]]
        for mk in r["moments"][:OBSERVABLE_MOMENTS + 1]:
            row += [mk.real, mk.imag]
        row.append(r["pg_residual"])
        rows.append(row)
    _write_rows(Path(path), header, rows)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    data = [[float(c) if c else math.nan for c in line.split(",")] for line in lines[1:]]
    return header, np.array(data, dtype=float).reshape(len(data), len(header))


def event_records(events) -> list[dict]:
    out = []
    for e in events:
        rec = {"kind": e.kind, "t_event": e.t, "index": None if e.index is None else int(e.index)}
        if e.gap is not None:
            rec["gap"] = e.gap
            rec["touch"] = bool(e.touch)
        out.append(rec)
    return out


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def _plain(obj):
    """Recursively convert numpy and complex values into JSON-friendly ones."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [_finite(obj.real), _finite(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite(obj)
    return obj


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


# --- grid fields --------------------------------------------------------------

def write_gridfield(path, fld: GridField) -> None:
    """JSON header line with the grid, then one line of ``ny`` values per x index."""
    lines = [json.dumps(fld.grid.to_record(), sort_keys=True)]
    lines += [" ".join(fmt(v) for v in row) for row in np.asarray(fld.values, dtype=float)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_gridfield(path) -> GridField:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = json.loads(lines[0])
    grid = Grid(float(head["x0"]), float(head["y0"]), float(head["h"]), int(head["nx"]), int(head["ny"]))
    vals = np.array([[float(v) for v in line.split()] for line in lines[1:1 + grid.nx]])
    return GridField(grid, vals.reshape(grid.shape))


# --- reports --------------------------------------------------------------------

@dataclass
class Check:
    name: str
    expected: object
    actual: object
    tol: float | None
    passed: bool
    note: str = ""

    def to_record(self) -> dict:
        return {"name": self.name, "expected": self.expected, "actual": self.actual,
                "tol": self.tol, "pass": bool(self.passed), "note": self.note}


def close_check(name: str, expected, actual, tol: float, relative: bool = False, note: str = "") -> Check:
    err = abs(complex(actual) - complex(expected))
    if relative:
        err /= max(abs(complex(expected)), 1e-300)
    return Check(name, expected, actual, tol, bool(err <= tol), note or f"error {err:.3g}")


def bound_check(name: str, actual: float, bound: float, note: str = "") -> Check:
    return Check(name, f"<= {bound:g}", actual, bound, bool(actual <= bound), note)


@dataclass
class RunReport:
    command: str
    config: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.checks)

    def to_record(self) -> dict:
        return _plain({
            "schema": SCHEMA_VERSION,
            "command": self.command,
            "config": self.config,
            "checks": [c.to_record() for c in self.checks],
            "events": self.events,
            "timing": self.timing,
            "errors": self.errors,
            "outputs": self.outputs,
            "pass": self.passed,
        })

    def write(self, path) -> None:
        write_json(path, self.to_record())


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "command", "config", "checks", "events", "timing", "errors", "pass"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "command": {"enum": ["simulate", "balayage", "verify"]},
        "config": {"type": "object"},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "expected", "actual", "tol", "pass"],
                "properties": {
                    "name": {"type": "string"},
                    "tol": {"type": ["number", "null"]},
                    "pass": {"type": "boolean"},
                    "note": {"type": "string"},
                },
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "t_event", "index"],
                "properties": {
                    "kind": {"type": "string"},
                    "t_event": {"type": "number"},
                    "index": {"type": ["integer", "null"]},
                },
            },
        },
        "timing": {"type": "object", "additionalProperties": {"type": "number"}},
        "errors": {"type": "array", "items": {"type": "string"}},
        "outputs": {"type": "array", "items": {"type": "string"}},
        "pass": {"type": "boolean"},
    },
}


# --- run configuration ------------------------------------------------------------

SCENARIO_NAMES = {
    "cardioid-univalent": "CardioidUnivalent",
    "cardioid-pg": "CardioidPG",
    "cardioid-lk": "CardioidLK",
    "sakai": "Sakai",
    "growing-disk": "GrowingDisk",
}
BALAYAGE_KINDS = ("point-source", "weak-step", "weighted-blowup")


@dataclass
class RunConfig:
    """Parsed run configuration; ``raw`` is the full table for echoing into reports."""

    mode: str
    raw: dict
    scenario: ScenarioTag | None = None
    initial_map: RationalMap | None = None
    q_table: list[tuple[float, float]] | None = None
    t0: float = 0.0
    t1: float = 1.0
    dt: float = 1e-3
    stride: int = 1
    transitions: bool = False
    restart_dt: float = 0.05
    outputs: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    balayage: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)


def _line_of(text: str, key: str) -> int | None:
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) and stripped[len(key):].lstrip().startswith("="):
            return n
    return None


def _fail(text: str, key: str, msg: str):
    line = _line_of(text, key)
    where = f"line {line}: " if line else ""
    raise ConfigError(f"{where}{key}: {msg}")


def _number(text, table, key, default=None, kind=float):
    if key not in table:
        if default is None:
            _fail(text, key, "missing")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(text, key, "must be a number")
    return kind(v)


def parse_config(text: str) -> RunConfig:
    """Parse a TOML run configuration, reporting problems with their line number."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    mode = raw.get("mode", "simulate")
    if mode not in ("simulate", "balayage"):
        _fail(text, "mode", f"unknown mode {mode!r}")
    cfg = RunConfig(mode=mode, raw=raw)
    sc = raw.get("scenario", {})
    if not isinstance(sc, dict):
        _fail(text, "scenario", "must be a table")
    if "name" in sc:
        name = sc["name"]
        if name not in SCENARIO_NAMES:
            _fail(text, "name", f"unknown scenario {name!r}; expected one of {', '.join(SCENARIO_NAMES)}")
        params = {k: v for k, v in sc.items() if k != "name"}
        cfg.scenario = ScenarioTag(SCENARIO_NAMES[name], params)
    elif "map" in sc:
        try:
            cfg.initial_map = RationalMap.from_record(sc["map"], reduce=True)
        except (KeyError, TypeError, ValueError) as exc:
            _fail(text, "map", f"bad map record ({exc})")
        table = sc.get("q_table")
        if not table:
            _fail(text, "q_table", "explicit maps need a q_table of [t, q] rows")
        try:
            cfg.q_table = [(float(a), float(b)) for a, b in table]
        except (TypeError, ValueError):
            _fail(text, "q_table", "rows must be [t, q] pairs")
        if any(b[0] <= a[0] for a, b in zip(cfg.q_table, cfg.q_table[1:])):
            _fail(text, "q_table", "times must increase")
    elif mode == "simulate":
        raise ConfigError("[scenario] needs a name or an explicit map")

    if mode == "simulate":
        tt = raw.get("time", {})
        cfg.t0 = _number(text, tt, "t0")
        cfg.t1 = _number(text, tt, "t1")
        cfg.dt = _number(text, tt, "dt")
        cfg.stride = _number(text, tt, "stride", 1, int)
        if cfg.dt <= 0:
            _fail(text, "dt", "must be positive")
        if cfg.t1 <= cfg.t0:
            _fail(text, "t1", "must exceed t0")
        if cfg.dt >= cfg.t1 - cfg.t0:
            _fail(text, "dt", "must be smaller than t1 - t0")
        if cfg.stride < 1:
            _fail(text, "stride", "must be at least 1")
        tr = raw.get("transitions", {})
        if isinstance(tr, bool):
            cfg.transitions = tr
        else:
            cfg.transitions = bool(tr.get("enabled", False))
            cfg.restart_dt = _number(text, tr, "restart_dt", 0.05)
            if cfg.restart_dt <= 0:
                _fail(text, "restart_dt", "must be positive")
        out = raw.get("outputs", {})
        cfg.outputs = {"trajectory": bool(out.get("trajectory", True)),
                       "observables": bool(out.get("observables", True)),
                       "counting_field": bool(out.get("counting_field", False))}
    else:
        gr = raw.get("grid")
        if not isinstance(gr, dict):
            raise ConfigError("balayage runs need a [grid] table")
        cfg.grid = {"half_width": _number(text, gr, "half_width"), "h": _number(text, gr, "h")}
        if cfg.grid["h"] <= 0 or cfg.grid["half_width"] <= 0:
            _fail(text, "h", "grid sizes must be positive")
        bl = raw.get("balayage", {})
        kind = bl.get("kind")
        if kind not in BALAYAGE_KINDS:
            _fail(text, "kind", f"expected one of {', '.join(BALAYAGE_KINDS)}")
        cfg.balayage = dict(bl)
    tol = raw.get("tolerances", {})
    if not isinstance(tol, dict) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in tol.values()):
        raise ConfigError("[tolerances] entries must be numbers")
    cfg.tolerances = {k: float(v) for k, v in tol.items()}
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)
