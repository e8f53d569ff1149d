"""Drive trajectories and balayage runs from a RunConfig and collect checks into a RunReport."""
from __future__ import annotations

import math
import os
import time
from pathlib import Path

import numpy as np

from .balayage import (
    Grid,
    GridField,
    bal,
    disk_indicator,
    point_mass,
    star_shaped,
    weak_step,
    weighted_blowup,
)
from .dynamics import (
    PGState,
    integrate,
    restart_after_transition,
    transition_boundary,
)
from .errors import ConfigError, GridTooSmallError, PGFlowError
from .formats import (
    Check,
    RunConfig,
    RunReport,
    bound_check,
    close_check,
    event_records,
    write_gridfield,
    write_observables_csv,
    write_trajectory_csv,
)
from .observables import harmonic_moments, pg_residual
from .rational import EPS_CIRCLE, RationalMap
from .reference import injected, lk_coefficients, reference_schedule, reference_state

MAX_TRANSITIONS = 4
N_CHECKPOINTS = 10


def output_dir(default: Path) -> Path:
    """``PGFLOW_OUT`` overrides the directory chosen by the caller."""
    env = os.environ.get("PGFLOW_OUT")
    return Path(env) if env else Path(default)


def piecewise_linear(table):
    ts = np.array([a for a, _ in table])
    qs = np.array([b for _, b in table])
    return lambda t: float(np.interp(t, ts, qs))


def _on_circle(g: RationalMap) -> list[int]:
    zl = g.zero_list
    return [k for k in range(zl.size) if abs(abs(zl[k]) - 1.0) < EPS_CIRCLE]


def initial_state(cfg: RunConfig) -> tuple[PGState, object]:
    if cfg.scenario is not None:
        tag = cfg.scenario
        q = reference_schedule(tag)
        if tag.name == "CardioidLK" and cfg.t0 == 0:
            return PGState(0.0, RationalMap(-1.0, [1.0]), Q=0.0), q
        s, _ = reference_state(tag, cfg.t0)
        return PGState(s.t, RationalMap(s.g.lead, s.g.zero_list, list(zip(s.g.poles, s.g.pole_mult))), Q=s.Q), q
    return PGState(cfg.t0, cfg.initial_map, Q=0.0), piecewise_linear(cfg.q_table)


def _snap_to_circle(s: PGState, location: complex) -> tuple[PGState, int]:
    """Put the crossing zero exactly on the circle; the map is then approximate."""
    zl = s.g.zero_list.copy()
    k = int(np.argmin(np.abs(zl - location)))
    moved = abs(abs(zl[k]) - 1.0) >= EPS_CIRCLE
    zl[k] = zl[k] / abs(zl[k])
    g = RationalMap(s.g.lead, list(zl), list(zip(s.g.poles, s.g.pole_mult)))
    meta = dict(s.meta)
    if moved:
        meta["approximate"] = True
    return PGState(s.t, g, s.Q, meta), int(np.argmin(np.abs(g.zero_list - zl[k])))


def simulate(cfg: RunConfig, report: RunReport) -> tuple[list[PGState], object]:
    """Integrate the configured run, restarting after boundary crossings when enabled."""
    s, q = initial_state(cfg)
    states = [s]
    for _ in range(MAX_TRANSITIONS + 1):
        on = _on_circle(s.g)
        if on:
            if not cfg.transitions:
                raise ConfigError("a zero lies on the unit circle; enable transitions to continue")
            s = restart_after_transition(transition_boundary(s, on[0]), cfg.restart_dt, q)
            report.events.append({"kind": "Restart", "t_event": s.t, "index": on[0],
                                  "residual": s.meta.get("restart_residual")})
            states.append(s)
        if s.t >= cfg.t1 - 1e-12:
            break
        traj = integrate(s, cfg.t1, cfg.dt, q, stop_on_crossing=True)
        states.extend(traj.states[1:])
        report.events.extend(event_records(traj.events))
        s = traj.states[-1]
        crossing = [e for e in traj.events if e.kind == "BoundaryCrossing"]
        if not crossing or s.t >= cfg.t1 - 1e-12:
            break
        if not cfg.transitions:
            break
        s, _ = _snap_to_circle(s, crossing[-1].location)
    return states, q


def _matched_error(a: np.ndarray, b: np.ndarray) -> float:
    """Largest distance after greedy nearest matching of two point sets."""
    if a.size != b.size:
        return math.inf
    left = list(b)
    worst = 0.0
    for z in a:
        j = int(np.argmin(np.abs(np.array(left) - z)))
        worst = max(worst, abs(left.pop(j) - z))
    return worst


def observable_records(states: list[PGState], q, stride: int) -> list[dict]:
    picked = states[::stride]
    if picked[-1] is not states[-1]:
        picked.append(states[-1])
    out = []
    for s in picked:
        if not s.g.is_residue_free():
            continue
        # the PG residual needs every zero off the circle
        res = math.nan if _on_circle(s.g) else pg_residual(s, q(s.t))
        out.append({"t": s.t, "Q": s.Q, "moments": harmonic_moments(s, 5), "pg_residual": res})
    return out


def simulate_checks(cfg: RunConfig, states: list[PGState], records: list[dict], q) -> list[Check]:
    tol = cfg.tolerances
    checks: list[Check] = []
    final = states[-1]
    if abs(final.t - cfg.t1) > 1e-9:
        checks.append(Check("reached_t1", cfg.t1, final.t, 1e-9, False, "integration stopped early"))
    tag = cfg.scenario
    if tag is not None:
        try:
            ref, _ = reference_state(tag, final.t)
        except PGFlowError:
            ref = None
        if ref is not None:
            ttol = tol.get("terminal", 1e-6)
            checks.append(close_check("b_final", ref.g.lead, final.g.lead, ttol, relative=True))
            zr, zf = ref.g.zero_list, final.g.zero_list
            if tag.name == "CardioidUnivalent":
                checks.append(close_check("omega1_final vs e^3" if abs(final.t - 1) < 1e-12 else "omega1_final",
                                          zr[0], zf[0], ttol, relative=True))
            else:
                err = _matched_error(zf, zr) / max(1.0, float(np.max(np.abs(zr))) if zr.size else 1.0)
                checks.append(bound_check("zeros_final", err, ttol))
                if ref.g.poles.size or final.g.poles.size:
                    perr = _matched_error(final.g.poles, ref.g.poles) / max(1.0, float(np.max(np.abs(ref.g.poles))))
                    checks.append(bound_check("poles_final", perr, ttol))
            checks.append(close_check("Q_final", injected(tag, final.t), final.Q, tol.get("Q", 1e-6)))
        if tag.name in ("Sakai", "GrowingDisk"):
            worst = 0.0
            for s in states[::cfg.stride]:
                if s.t > 1:
                    w = 1.0 / s.t
                    zl = s.g.zero_list
                    k = int(np.argmin(np.abs(zl - w)))
                    worst = max(worst, abs(s.g.primitive()(zl[k]) - tag.a))
            checks.append(bound_check("branch value f(1/t,t)=1" if tag.a == 1 else "branch_value", worst,
                                      tol.get("branch", 1e-6)))
    if records:
        m0 = records[0]
        drift = max(float(np.max(np.abs(r["moments"][1:6] - m0["moments"][1:6]))) for r in records)
        mass = max(abs(r["moments"][0] - m0["moments"][0] - 2 * (r["Q"] - m0["Q"])) for r in records)
        checks.append(bound_check("moment_drift", drift, tol.get("moments", 1e-6)))
        checks.append(bound_check("mass_law", float(mass), tol.get("moments", 1e-6)))
        usable = [r for r in records if not math.isnan(r["pg_residual"])]
        if not usable:
            return checks
        idx = np.unique(np.linspace(0, len(usable) - 1, min(N_CHECKPOINTS, len(usable))).astype(int))
        worst = max(usable[i]["pg_residual"] for i in idx)
        checks.append(bound_check("pg_residual", worst, tol.get("pg_residual", 1e-9)))
    return checks


def run_simulate(cfg: RunConfig, out_dir) -> RunReport:
    """Integrate, write trajectory/observables CSVs and the report into ``out_dir``."""
    report = RunReport("simulate", config=cfg.raw)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    try:
        states, q = simulate(cfg, report)
        report.timing["integrate_s"] = time.perf_counter() - t_start
        t_obs = time.perf_counter()
        records = observable_records(states, q, cfg.stride)
        report.timing["observables_s"] = time.perf_counter() - t_obs
        report.checks.extend(simulate_checks(cfg, states, records, q))
        if cfg.outputs.get("trajectory", True):
            write_trajectory_csv(out / "trajectory.csv", states, cfg.stride)
            report.outputs.append("trajectory.csv")
        if cfg.outputs.get("observables", True):
            write_observables_csv(out / "observables.csv", records)
            report.outputs.append("observables.csv")
        if cfg.outputs.get("counting_field", False):
            from .balayage import counting_density
            final = states[-1]
            half = 1.2 * float(np.max(np.abs(final.g.primitive()(np.exp(2j * np.pi * np.arange(256) / 256)))))
            write_gridfield(out / "counting.grid", counting_density(final, Grid.centered(half, half / 100)))
            report.outputs.append("counting.grid")
    except ConfigError:
        raise
    except PGFlowError as exc:
        report.errors.append(f"{type(exc).__name__}: {exc}")
    report.timing["total_s"] = time.perf_counter() - t_start
    report.write(out / "report.json")
    return report


# --- balayage runs ---------------------------------------------------------------

def _blowup_inputs(spec: dict) -> tuple[RationalMap, float]:
    if "map" in spec:
        g = RationalMap.from_record(spec["map"], reduce=True)
    else:
        g = RationalMap(-1.0, [1.0])
    if "Q" in spec:
        Q = float(spec["Q"])
    elif "lk_time" in spec:
        Q = lk_coefficients(float(spec["lk_time"]))["Q"]
    else:
        raise ConfigError("weighted-blowup needs Q or lk_time")
    return g, Q


def _boundary_cells(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1)
    inner = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return mask & ~inner


def run_balayage(cfg: RunConfig, out_dir) -> RunReport:
    """Execute a point-source balayage, weak step or weighted blow-up; write fields and report."""
    report = RunReport("balayage", config=cfg.raw)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.balayage
    grid = Grid.centered(cfg.grid["half_width"], cfg.grid["h"])
    h = grid.h
    tol = cfg.tolerances
    t_start = time.perf_counter()
    try:
        kind = spec["kind"]
        lam_value = float(spec.get("lambda", 1.0))
        lam = GridField.constant(grid, lam_value)
        if kind == "point-source":
            Q = float(spec.get("Q", 0.5))
            outcome = bal(point_mass(grid, 0j, 2 * math.pi * Q), lam)
            mask = outcome.saturated.values > 0
            area = outcome.saturated_area
            expected = 2 * math.pi * Q / lam_value
            report.checks.append(close_check("saturated_area", expected, area, tol.get("area", 0.03), relative=True))
            r0 = math.sqrt(expected / math.pi)
            edge = np.abs(np.abs(grid.centers()[_boundary_cells(mask)]) - r0)
            report.checks.append(bound_check("boundary_band", float(edge.max()), 2 * h))
            report.checks.append(bound_check("complementarity", outcome.residual, tol.get("complementarity", 1e-10)))
            fields = {"u": outcome.u, "mask": outcome.saturated, "result": outcome.result}
        elif kind == "weak-step":
            r0 = float(spec.get("radius", 1.0))
            dQ = float(spec.get("deltaQ", 0.5))
            old = disk_indicator(grid, r0)
            new = weak_step(old, lam, dQ)
            grown = new.values > 0
            report.checks.append(Check("mask_monotone", True, bool(np.all(grown[old.values > 0])), None,
                                       bool(np.all(grown[old.values > 0]))))
            r1 = math.sqrt(r0 * r0 + 2 * dQ / lam_value)
            edge = np.abs(np.abs(grid.centers()[_boundary_cells(grown)]) - r1) if dQ > 0 else np.zeros(1)
            report.checks.append(bound_check("boundary_band", float(edge.max()), 2 * h))
            if dQ == 0:
                same = bool(np.array_equal(grown, old.values > 0))
                report.checks.append(Check("mask_unchanged", True, same, None, same))
            fields = {"mask": new}
        else:
            g, Q = _blowup_inputs(spec)
            outcome = weighted_blowup(g, Q, grid)
            geometric, vmax = star_shaped(outcome)
            d = outcome.diagnostics
            report.checks.append(Check("star_shaped", True, geometric, None, geometric, f"v_max_outside {vmax:.3g}"))
            report.checks.append(close_check("weighted_added_mass", d["target_mass"], d["added_mass"],
                                             tol.get("mass", 1e-3), relative=True))
            report.timing["psor_iterations"] = float(outcome.iterations)
            fields = {"u": outcome.u, "mask": outcome.saturated}
        for name, fld in fields.items():
            write_gridfield(out / f"{name}.grid", fld)
            report.outputs.append(f"{name}.grid")
    except GridTooSmallError as exc:
        report.checks.append(Check("grid_extent", "on-grid", "reached boundary", None, False,
                                   f"suggested half width {exc.suggested_extent / 2:g}"))
    except ConfigError:
        raise
    except PGFlowError as exc:
        report.errors.append(f"{type(exc).__name__}: {exc}")
    report.timing["total_s"] = time.perf_counter() - t_start
    report.write(out / "report.json")
    return report
