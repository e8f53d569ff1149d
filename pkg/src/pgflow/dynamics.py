"""Zero/pole dynamics of the derivative map under injection at the origin.

States carry the derivative map ``g``, the time ``t`` and the injected mass
``Q``. The equations of motion are driven by the partial-fraction
coefficients of ``q / (g g*)``; see :func:`state_derivative`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from numpy.typing import NDArray
from scipy.integrate import quad
from scipy.optimize import least_squares

from .errors import (
    BoundaryZeroError,
    PreconditionError,
    StepRejectedError,
    StructureError,
    SubordinationError,
    UnsupportedStructureError,
)
from .rational import (
    EPS_CIRCLE,
    EPS_COINCIDE,
    PartialFractions,
    Primitive,
    RationalMap,
    check_simple_zeros,
    excused_mask,
    partial_fractions,
    reflect,
    residue_moments,
)

QSchedule = Callable[[float], float]


def constant_rate(q: float) -> QSchedule:
    """Schedule with a constant injection rate."""
    return lambda t: float(q)


@dataclass(frozen=True, eq=False)
class PGState:
    """Derivative map at time ``t`` with accumulated injected mass ``Q``.

    ``meta`` carries bookkeeping such as transition markers and the
    ``approximate`` flag set by the restart corrector.
    """

    t: float
    g: RationalMap
    Q: float = 0.0
    meta: dict = field(default_factory=dict)

    def admissibility_issues(self) -> list[str]:
        g = self.g
        issues = []
        if g.m < g.n:
            issues.append("fewer zeros than poles")
        if g.poles.size and np.any(np.abs(g.poles) <= 1.0 + EPS_CIRCLE):
            issues.append("pole in the closed unit disk")
        if np.any(g.zeros == 0):
            issues.append("zero at the origin")
        else:
            g0 = g(0.0)
            if not (g0.real > 0 and abs(g0.imag) <= 1e-8 * abs(g0)):
                issues.append("g(0) is not real positive")
        return issues

    def validate(self) -> "PGState":
        issues = self.admissibility_issues()
        if issues:
            raise PreconditionError("inadmissible state: " + "; ".join(issues))
        return self

    @property
    def is_admissible(self) -> bool:
        return not self.admissibility_issues()


@dataclass(frozen=True)
class Coefficients:
    pf: PartialFractions
    C: complex
    D: complex


@dataclass(frozen=True)
class StateDerivative:
    """Time derivatives of the lead, zeros (in ``g.zero_list`` order), poles and ``Q``."""

    db: complex
    dzeros: NDArray
    dpoles: NDArray
    dQ: float


@dataclass(frozen=True)
class Event:
    kind: str
    t: float
    index: int | None = None
    location: complex | None = None
    gap: float | None = None
    touch: bool = False

    def to_record(self) -> dict:
        rec = {"kind": self.kind, "t": self.t}
        if self.gap is not None:
            rec["gap"] = self.gap
            rec["touch"] = self.touch
        if self.index is not None:
            rec["index"] = int(self.index)
        if self.location is not None:
            rec["location"] = [self.location.real, self.location.imag]
        return rec


def _c_from(a_inf: complex, a: NDArray, zeros: NDArray) -> complex:
    s = np.sum(a / zeros)
    return complex(a_inf.real + s.real, 2.0 * s.imag)


def dynamics_coefficients(s: PGState, q: float) -> Coefficients:
    """Partial-fraction data plus the constants ``C`` and ``D``."""
    pf = partial_fractions(s.g, q)
    C = _c_from(pf.a_inf, pf.a, pf.zeros)
    return Coefficients(pf=pf, C=C, D=complex(2.0 * np.sum(pf.a)))


def _inside(zeros: NDArray) -> NDArray:
    return np.abs(zeros) < 1.0


def poisson_P(s: PGState, q: float, zeta):
    """Herglotz-type function whose real part on the circle is ``q/|g|^2``."""
    co = dynamics_coefficients(s, q)
    a, w = co.pf.a, co.pf.zeros
    ins = _inside(w)
    im0 = np.sum((2 * a / w)[~ins]).imag
    a0 = complex(co.C.real, im0)
    z = np.asarray(zeta, dtype=complex)[..., None]
    out = a0 + np.sum(np.where(~ins, 2 * a / (z - w), 0), axis=-1) + np.sum(
        np.where(ins, 2 * np.conj(a) * z / (1.0 - np.conj(w) * z), 0), axis=-1
    )
    return complex(out) if out.ndim == 0 else out


def correction_R(s: PGState, q: float, zeta):
    """Correction term that vanishes exactly for Lowner-Kufarev states."""
    co = dynamics_coefficients(s, q)
    a, w = co.pf.a, co.pf.zeros
    ins = _inside(w)
    z = np.asarray(zeta, dtype=complex)[..., None]
    const = 1j * np.sum((2 * a / w)[ins]).imag
    out = const + np.sum(
        np.where(ins, 2 * a / (z - w) - 2 * np.conj(a) * z / (1.0 - np.conj(w) * z), 0), axis=-1
    )
    return complex(out) if np.ndim(out) == 0 else out


@njit(cache=True)
def _velocity_kernel(lead, zeros, poles, pole_mult, q, excused):
    m = zeros.size
    npol = poles.size
    n = 0
    for j in range(npol):
        n += pole_mult[j]
    b2 = abs(lead) ** 2
    a = np.zeros(m, dtype=np.complex128)
    if q != 0.0:
        for k in range(m):
            if excused[k]:
                continue
            w = zeros[k]
            ws = 1.0 / np.conj(w)
            num = q + 0j
            for j in range(npol):
                num *= ((w - poles[j]) * np.conj(ws - poles[j])) ** pole_mult[j]
            den = b2 + 0j
            for i in range(m):
                den *= np.conj(ws - zeros[i])
                if i != k:
                    den *= w - zeros[i]
            a[k] = num / den
    a_inf = 0j
    if m == n:
        a_inf = q + 0j
        for j in range(npol):
            a_inf *= np.conj(poles[j]) ** pole_mult[j]
        for i in range(m):
            a_inf /= np.conj(zeros[i])
        a_inf /= b2
    s = 0j
    for k in range(m):
        s += a[k] / zeros[k]
    C = complex(a_inf.real + s.real, 2.0 * s.imag)
    dz = np.empty(m, dtype=np.complex128)
    for k in range(m):
        w = zeros[k]
        term = -C - 2 * a[k] / w
        for i in range(m):
            if i != k:
                term -= 2 * (a[k] + a[i]) / (w - zeros[i])
        for j in range(npol):
            term += pole_mult[j] * 2 * a[k] / (w - poles[j])
        dz[k] = w * term
    dp = np.empty(npol, dtype=np.complex128)
    for j in range(npol):
        acc = -C
        for i in range(m):
            acc -= 2 * a[i] / (poles[j] - zeros[i])
        dp[j] = poles[j] * acc
    db = lead * (m - n + 1) * C
    return db, dz, dp


def _velocities(lead, zeros, poles, pole_mult, q, excused):
    return _velocity_kernel(complex(lead), np.ascontiguousarray(zeros, dtype=np.complex128),
                            np.ascontiguousarray(poles, dtype=np.complex128),
                            np.ascontiguousarray(pole_mult, dtype=np.int64), float(q),
                            np.ascontiguousarray(excused, dtype=np.bool_))


def state_derivative(s: PGState, q: float) -> StateDerivative:
    """Right-hand side of the zero/pole equations of motion."""
    g = s.g
    zeros = g.zero_list
    if np.any(np.abs(np.abs(zeros) - 1.0) < EPS_CIRCLE):
        raise BoundaryZeroError("zero on the unit circle")
    scale = _scale(zeros, g.poles)
    exc = excused_mask(zeros, g.poles, scale)
    check_simple_zeros(zeros, exc, scale)
    db, dz, dp = _velocities(g.lead, zeros, g.poles, g.pole_mult, float(q), exc)
    return StateDerivative(db=complex(db), dzeros=dz, dpoles=dp, dQ=float(q))


def _scale(zeros, poles) -> float:
    return float(np.max(np.concatenate([np.abs(zeros), np.abs(poles), [1.0]])))


# --- integration ---------------------------------------------------------

PAIR_RADIUS = 0.3


def quadratic_roots(s: complex, p: complex) -> tuple[complex, complex]:
    """Roots of ``z^2 - s z + p`` without cancellation, ordered by real then imaginary part."""
    disc = np.sqrt(complex(s * s - 4 * p))
    big = 0.5 * (s + disc if (np.conj(s) * disc).real >= 0 else s - disc)
    other = p / big if big != 0 else 0.5 * s
    r = sorted([complex(big), complex(other)], key=lambda z: (round(z.real, 12), z.imag))
    return r[0], r[1]


@dataclass
class _Layout:
    """Flat parametrisation used by the integrator.

    Zeros paired with a pole by reflection are slaved to that pole so that the
    pairing is preserved exactly. Two nearby free zeros are carried by their
    sum and product, which stay smooth when the zeros collide and split.
    """

    pole_mult: NDArray
    slaved: NDArray  # pole index for each slaved zero
    n_single: int
    n_pairs: int

    @property
    def n_free(self) -> int:
        return self.n_single + 2 * self.n_pairs

    @classmethod
    def from_map(cls, g: RationalMap) -> tuple["_Layout", NDArray]:
        zeros = g.zero_list
        scale = _scale(zeros, g.poles)
        exc = excused_mask(zeros, g.poles, scale)
        slaved = [int(np.argmin(np.abs(g.poles - 1.0 / np.conj(zeros[k])))) for k in np.nonzero(exc)[0]]
        free = list(zeros[~exc])
        pairs = []
        while len(free) >= 2:
            best = None
            for i in range(len(free)):
                for j in range(i + 1, len(free)):
                    a, b = free[i], free[j]
                    d = abs(a - b)
                    same_side = (abs(a) - 1.0) * (abs(b) - 1.0) > 0
                    clear = min(abs(abs(a) - 1.0), abs(abs(b) - 1.0)) > d
                    if d < PAIR_RADIUS * max(1.0, abs(a)) and same_side and clear:
                        if best is None or d < best[0]:
                            best = (d, i, j)
            if best is None:
                break
            _, i, j = best
            b_, a_ = free.pop(j), free.pop(i)
            pairs.append((a_ + b_, a_ * b_))
        sym = [v for pr in pairs for v in pr]
        y = np.concatenate([[g.lead], np.array(free, dtype=complex), np.array(sym, dtype=complex), g.poles])
        lay = cls(pole_mult=g.pole_mult.copy(), slaved=np.array(slaved, dtype=int),
                  n_single=len(free), n_pairs=len(pairs))
        return lay, y

    def free_zeros(self, y) -> NDArray:
        single = y[1:1 + self.n_single]
        if not self.n_pairs:
            return np.asarray(single)
        roots = []
        base = 1 + self.n_single
        for i in range(self.n_pairs):
            roots.extend(quadratic_roots(y[base + 2 * i], y[base + 2 * i + 1]))
        return np.concatenate([single, np.array(roots, dtype=complex)])

    def split(self, y):
        lead = y[0]
        free = self.free_zeros(y)
        poles = y[1 + self.n_single + 2 * self.n_pairs:]
        zeros = np.concatenate([free, 1.0 / np.conj(poles[self.slaved])]) if self.slaved.size else free
        return lead, zeros, poles

    def to_map(self, y) -> RationalMap:
        lead, zeros, poles = self.split(y)
        return RationalMap(lead, list(zeros), list(zip(poles, self.pole_mult)), reduce=False)

    def rhs(self, y, q):
        lead, zeros, poles = self.split(y)
        nf = self.n_free
        exc = np.zeros(zeros.size, dtype=bool)
        exc[nf:] = True
        with np.errstate(all="ignore"):
            db, dz, dp = _velocities(lead, zeros, poles, self.pole_mult, q, exc)
            sym = []
            for i in range(self.n_pairs):
                k = self.n_single + 2 * i
                a, b = zeros[k], zeros[k + 1]
                sym.extend([dz[k] + dz[k + 1], dz[k] * b + a * dz[k + 1]])
        out = np.concatenate([[db], dz[:self.n_single], np.array(sym, dtype=complex), dp])
        if not np.all(np.isfinite(out)):
            raise StepRejectedError("non-finite derivative in integrator stage")
        return out

    def free_rates(self, y, q) -> tuple[NDArray, NDArray]:
        """Free zeros and their velocities."""
        lead, zeros, poles = self.split(y)
        exc = np.zeros(zeros.size, dtype=bool)
        exc[self.n_free:] = True
        with np.errstate(all="ignore"):
            _, dz, _ = _velocities(lead, zeros, poles, self.pole_mult, q, exc)
        return zeros[:self.n_free], dz[:self.n_free]


def _rk4(layout: _Layout, y0, t0, dt, q_schedule):
    k1 = layout.rhs(y0, q_schedule(t0))
    k2 = layout.rhs(y0 + 0.5 * dt * k1, q_schedule(t0 + 0.5 * dt))
    k3 = layout.rhs(y0 + 0.5 * dt * k2, q_schedule(t0 + 0.5 * dt))
    k4 = layout.rhs(y0 + dt * k3, q_schedule(t0 + dt))
    return y0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _simpson(q_schedule, t0, dt):
    return dt / 6.0 * (q_schedule(t0) + 4 * q_schedule(t0 + 0.5 * dt) + q_schedule(t0 + dt))


def _check_stage_structure(layout: _Layout, y):
    _, zeros, poles = layout.split(y)
    scale = _scale(zeros, poles)
    free = zeros[:layout.n_free]
    for i in range(layout.n_single):
        for j in range(i + 1, free.size):
            if abs(free[i] - free[j]) < EPS_COINCIDE * scale:
                raise StepRejectedError("zeros coalesced during step")


def _scan_events(layout: _Layout, y, t) -> list[Event]:
    events = []
    _, zeros, poles = layout.split(y)
    scale = _scale(zeros, poles)
    free = zeros[:layout.n_free]
    for i in range(free.size):
        for j in range(i + 1, free.size):
            if abs(free[i] - free[j]) < EPS_COINCIDE * scale:
                events.append(Event("ZeroCollision", t, i, complex(free[i])))
            elif abs(free[i] * np.conj(free[j]) - 1.0) < EPS_COINCIDE * scale:
                events.append(Event("ReflectionCoincidence", t, i, complex(free[i])))
    for j, p in enumerate(poles):
        if abs(p) - 1.0 < EPS_CIRCLE:
            events.append(Event("PoleApproachesCircle", t, j, complex(p)))
    return events


APPROACH_RATIO = 0.05
APPROACH_HORIZON = 3.0
TOUCH_GAP = 1e-3
MAX_SUBSTEPS = 20000


def _radial(layout: _Layout, y, q):
    """Signed gaps ``|w|-1`` of the free zeros and their time derivatives."""
    free, d = layout.free_rates(y, q)
    if not np.all(np.isfinite(d)):
        raise StepRejectedError("non-finite derivative in integrator stage")
    return np.abs(free) - 1.0, (np.conj(free) * d).real / np.abs(free)


def step(s: PGState, dt: float, q_schedule: QSchedule) -> tuple[PGState, list[Event]]:
    """Advance one classical RK4 step, truncated at a boundary crossing.

    Returns the new state and the events detected in the step. When a zero
    is about to reach the unit circle the step is split into geometrically
    shrinking substeps; a sign change of ``|w|-1`` is then bisected, and a
    tangential touch (the zero turns back while within ``TOUCH_GAP``) is
    located by bisecting the radial velocity. The event records the gap
    actually reached.
    """
    if dt == 0:
        return s, []
    s.validate()
    layout, y0 = _Layout.from_map(s.g)
    gap0, rate0 = _radial(layout, y0, q_schedule(s.t))
    if np.any(np.abs(gap0) < EPS_CIRCLE):
        raise PreconditionError("a zero is already on the unit circle")
    approaching = (gap0 * rate0 < 0) & (np.abs(gap0) < APPROACH_HORIZON * dt * np.abs(rate0))
    if np.any(approaching):
        y1, t1, events = _approach(layout, y0, s.t, dt, q_schedule)
    else:
        y1 = _rk4(layout, y0, s.t, dt, q_schedule)
        t1, events = s.t + dt, []
        _check_stage_structure(layout, y1)
        gap1 = np.abs(layout.free_zeros(y1)) - 1.0
        crossed = np.nonzero((np.sign(gap1) != np.sign(gap0)) | (np.abs(gap1) < EPS_CIRCLE))[0]
        if crossed.size:
            tau, k = min((_bisect_gap(layout, y0, s.t, dt, q_schedule, int(k), np.sign(gap0[k])), int(k))
                         for k in crossed)
            y1 = _rk4(layout, y0, s.t, tau, q_schedule)
            t1 = s.t + tau
            events = [_crossing_event(layout, y1, t1, k)]
    events.extend(_scan_events(layout, y1, t1))
    new = PGState(t=t1, g=layout.to_map(y1), Q=s.Q + _simpson(q_schedule, s.t, t1 - s.t),
                  meta=_carry_meta(s.meta, q_schedule, s.t, t1 - s.t))
    return new, events


def _crossing_event(layout, y, t, k, touch=False) -> Event:
    w = complex(layout.free_zeros(y)[k])
    return Event("BoundaryCrossing", t, k, w, gap=abs(w) - 1.0, touch=touch)


def _approach(layout, y0, t0, dt, q_schedule):
    """Substep towards the circle with ``h = APPROACH_RATIO * gap / rate``."""
    y, t, t_end = y0, t0, t0 + dt
    gap, rate = _radial(layout, y, q_schedule(t))
    for _ in range(MAX_SUBSTEPS):
        if t_end - t <= 1e-15:
            return y, t_end, []
        toward = gap * rate < 0
        if np.any(toward):
            h = min(t_end - t, APPROACH_RATIO * float(np.min(np.abs(gap[toward]) / np.abs(rate[toward]))))
        else:
            h = t_end - t
        h = max(h, 1e-14)
        y_new = _rk4(layout, y, t, h, q_schedule)
        _check_stage_structure(layout, y_new)
        gap_new, rate_new = _radial(layout, y_new, q_schedule(t + h))
        crossed = np.nonzero((np.sign(gap_new) != np.sign(gap)) | (np.abs(gap_new) < EPS_CIRCLE))[0]
        if crossed.size:
            k = int(crossed[0])
            tau = _bisect_gap(layout, y, t, h, q_schedule, k, np.sign(gap[k]))
            y_ev = _rk4(layout, y, t, tau, q_schedule)
            return y_ev, t + tau, [_crossing_event(layout, y_ev, t + tau, k)]
        turned = np.nonzero(toward & (gap_new * rate_new >= 0) & (np.abs(gap_new) < TOUCH_GAP))[0]
        if turned.size:
            k = int(turned[0])
            tau = _bisect_turn(layout, y, t, h, q_schedule, k, np.sign(gap[k]))
            y_ev = _rk4(layout, y, t, tau, q_schedule)
            return y_ev, t + tau, [_crossing_event(layout, y_ev, t + tau, k, touch=True)]
        y, t, gap, rate = y_new, t + h, gap_new, rate_new
    raise StepRejectedError("approach to the unit circle did not resolve", dt / 2)


def _carry_meta(meta: dict, q_schedule, t0, dt) -> dict:
    out = {k: v for k, v in meta.items() if k not in ("transition",)}
    if q_schedule(t0) < 0 or q_schedule(t0 + dt) < 0:
        out["negative_q"] = True
    return out


def _bisect_gap(layout, y0, t0, dt, q_schedule, k, side0) -> float:
    def gap(tau):
        return abs(layout.free_zeros(_rk4(layout, y0, t0, tau, q_schedule))[k]) - 1.0

    g_end = gap(dt)
    if abs(g_end) < EPS_CIRCLE and np.sign(g_end) in (side0, 0):
        return dt
    lo, hi = 0.0, dt
    while hi - lo > 1e-12 * max(1.0, abs(t0)):
        mid = 0.5 * (lo + hi)
        gm = gap(mid)
        if np.sign(gm) == side0 and abs(gm) >= EPS_CIRCLE:
            lo = mid
        else:
            hi = mid
    return hi


def _bisect_turn(layout, y0, t0, dt, q_schedule, k, side0) -> float:
    def inward(tau):
        y = _rk4(layout, y0, t0, tau, q_schedule)
        gap, rate = _radial(layout, y, q_schedule(t0 + tau))
        return gap[k] * rate[k] < 0

    lo, hi = 0.0, dt
    while hi - lo > 1e-13 * max(1.0, abs(t0)):
        mid = 0.5 * (lo + hi)
        if inward(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class Trajectory:
    """Recorded states of an integration together with its source schedule."""

    states: list[PGState]
    events: list[Event]
    q_schedule: QSchedule

    @property
    def times(self) -> NDArray:
        return np.array([s.t for s in self.states])

    def state_at(self, t: float) -> PGState:
        """State at time ``t`` by one RK4 step from the nearest earlier record."""
        times = self.times
        i = int(np.searchsorted(times, t, side="right") - 1)
        i = min(max(i, 0), len(self.states) - 1)
        base = self.states[i]
        if abs(t - base.t) < 1e-14:
            return base
        if t < base.t:
            raise PreconditionError("time before the start of the trajectory")
        new, _ = step(base, t - base.t, self.q_schedule)
        return new


def integrate(s: PGState, t_end: float, dt: float, q_schedule: QSchedule,
              stop_on_crossing: bool = True) -> Trajectory:
    """Step from ``s`` to ``t_end`` with fixed ``dt``, stopping at a boundary crossing."""
    states = [s]
    events: list[Event] = []
    cur = s
    n_steps = max(1, int(math.ceil((t_end - s.t) / dt - 1e-9)))
    for i in range(n_steps):
        h = min(dt, t_end - cur.t)
        if h <= 1e-15:
            break
        cur, ev = step(cur, h, q_schedule)
        states.append(cur)
        events.extend(ev)
        if stop_on_crossing and any(e.kind == "BoundaryCrossing" for e in ev):
            break
    return Trajectory(states=states, events=events, q_schedule=q_schedule)


# --- transitions -----------------------------------------------------------

def transition_boundary(s: PGState, k: int) -> PGState:
    """Insert the pole/zero structure that lets zero ``k`` pass the unit circle.

    A double pole and two zeros appear at the reflection of the zero; if a
    pole already sits there its order grows by one and a single zero is
    added. The map itself is unchanged, so the result is kept unreduced.
    """
    g = s.g
    zeros = g.zero_list
    if not 0 <= k < zeros.size:
        raise PreconditionError("zero index out of range")
    w = zeros[k]
    if abs(w) > 1.0 + EPS_CIRCLE:
        raise PreconditionError("zero lies outside the closed unit disk")
    ws = complex(reflect(w))
    scale = _scale(zeros, g.poles)
    poles = list(zip(g.poles, g.pole_mult))
    zl = list(zeros)
    hit = [j for j, p in enumerate(g.poles) if abs(p - ws) < EPS_COINCIDE * scale]
    if hit:
        j = hit[0]
        poles[j] = (poles[j][0], poles[j][1] + 1)
        zl.append(poles[j][0])
        simple = True
    else:
        poles.append((ws, 2))
        zl.extend([ws, ws])
        simple = False
    new = RationalMap(g.lead, zl, poles, reduce=False)
    meta = dict(s.meta)
    meta["transition"] = {"zero": w, "pole": ws, "simple": simple}
    return PGState(t=s.t, g=new, Q=s.Q, meta=meta)


def _excused_in(g: RationalMap) -> NDArray:
    zeros = g.zero_list
    return excused_mask(zeros, g.poles, _scale(zeros, g.poles))


class _RestartSystem:
    """Constraint system for the state just after a boundary transition.

    Unknowns: lead, the inner zero ``w`` (its reflection carries the new double
    pole), the two zeros born beside it, the remaining free zeros and the old
    poles. Constraints: vanishing residues, the image of ``w`` equals the
    branch point on the boundary, conserved higher moments, real positive
    ``g(0)``, and either ``|w|`` or the injected mass.
    """

    def __init__(self, pre: RationalMap, w_c: complex, Q_e: float):
        self.w_c = w_c
        zeros = pre.zero_list
        exc = _excused_in(pre)
        crossing = int(np.argmin(np.abs(zeros - w_c)))
        exc[crossing] = False
        keep = np.ones(zeros.size, dtype=bool)
        keep[crossing] = False
        self.free_other = zeros[keep & ~exc]
        self.poles_old = pre.poles.copy()
        self.mult_old = pre.pole_mult.copy()
        self.slaved = np.array([int(np.argmin(np.abs(pre.poles - 1 / np.conj(z)))) for z in zeros[exc]], dtype=int)
        self.m_e = zeros.size
        self.K = self.m_e + 1
        mom = residue_moments(pre, self.K)
        self.M_e = mom
        self.F_e = pre.primitive()(w_c)
        self.Q_e = Q_e
        self.n_unknown = 4 + self.free_other.size + self.poles_old.size

    def pack(self, b, w, a1, a2, others, poles):
        return np.concatenate([[b, w, a1, a2], others, poles])

    def build(self, x) -> RationalMap:
        b, w, a1, a2 = x[:4]
        no = self.free_other.size
        others = x[4:4 + no]
        poles = x[4 + no:]
        zeros = [w, a1, a2, *others, *(1 / np.conj(poles[self.slaved]))]
        pl = [(1 / np.conj(w), 2), *zip(poles, self.mult_old)]
        return RationalMap(b, zeros, pl, reduce=False)

    def residual(self, x, mode: str, target: float) -> NDArray:
        g = self.build(x)
        out = list(g.residues())
        F = g.primitive()
        out.append(Primitive(g, drop_logs=True)(x[1]) - self.F_e)
        mom = residue_moments(g, self.K, strict=False)
        out.extend(mom[1:] - self.M_e[1:])
        g0 = g(0.0)
        if mode == "radius":
            out.append((abs(x[1]) - target) + 1j * g0.imag / abs(g0))
        else:
            out.append((mom[0].real - self.M_e[0].real - 2 * (target - self.Q_e)) + 1j * g0.imag / abs(g0))
        return np.asarray(out, dtype=complex)

    def injected(self, x) -> float:
        g = self.build(x)
        return float(self.Q_e + 0.5 * (residue_moments(g, 0, strict=False)[0].real - self.M_e[0].real))

    def solve(self, x0, mode, target):
        def fun(v):
            r = self.residual(v[:self.n_unknown] + 1j * v[self.n_unknown:], mode, target)
            return np.concatenate([r.real, r.imag])

        v0 = np.concatenate([x0.real, x0.imag])
        sol = least_squares(fun, v0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
        x = sol.x[:self.n_unknown] + 1j * sol.x[self.n_unknown:]
        return x, float(np.max(np.abs(sol.fun)))


def _seed(system: _RestartSystem, b_e, delta):
    wc = system.w_c
    r = math.sqrt(7.0) / 2.0
    return system.pack(b_e, wc * (1 - delta), wc * (1 + delta * (1.5 + 1j * r)),
                       wc * (1 + delta * (1.5 - 1j * r)), system.free_other, system.poles_old)


@dataclass
class RestartPath:
    """Continuation of the post-transition family in the inner-zero depth."""

    deltas: list[float]
    solutions: list[NDArray]
    injected: list[float]
    residuals: list[float]
    system: _RestartSystem

    def maps(self) -> list[RationalMap]:
        return [self.system.build(x) for x in self.solutions]


def restart_path(s: PGState, deltas) -> RestartPath:
    """Solve the post-transition constraint system for a sequence of depths.

    ``s`` must be the output of :func:`transition_boundary` for a zero on the
    unit circle of a residue-free map.
    """
    info = s.meta.get("transition")
    if info is None:
        raise PreconditionError("state is not a transition state")
    if info["simple"] or abs(abs(info["zero"]) - 1.0) > EPS_CIRCLE:
        raise UnsupportedStructureError("restart supports a zero crossing the unit circle")
    pre = RationalMap(s.g.lead, s.g.zero_list, list(zip(s.g.poles, s.g.pole_mult)), reduce=True)
    if not pre.is_residue_free():
        raise UnsupportedStructureError("restart supports residue-free maps only")
    system = _RestartSystem(pre, complex(info["zero"]), s.Q)
    ds, xs, qs, rs = [], [], [], []
    prev = []
    for d in deltas:
        if len(prev) >= 2:
            (d1, x1), (d2, x2) = prev[-2], prev[-1]
            seed = x2 + (x2 - x1) * (d - d2) / (d2 - d1)
        elif len(prev) == 1:
            seed = prev[-1][1] + (_seed(system, pre.lead, d) - _seed(system, pre.lead, prev[-1][0]))
        else:
            seed = _seed(system, pre.lead, d)
        x, res = system.solve(seed, "radius", 1.0 - d)
        prev.append((d, x))
        ds.append(d)
        xs.append(x)
        qs.append(system.injected(x))
        rs.append(res)
    return RestartPath(ds, xs, qs, rs, system)


def restart_after_transition(s: PGState, dt0: float, q_schedule: QSchedule,
                             tol: float = 1e-9) -> PGState:
    """State at ``s.t + dt0`` on the continued branch after a transition.

    The branch is traced by continuation in the depth of the inner zero from
    its universal local form, then pinned to the injected mass
    ``Q(s.t) + int q``. Sets ``meta['approximate']`` when the final residual
    exceeds ``tol``.
    """
    if dt0 <= 0:
        raise PreconditionError("dt0 must be positive")
    Q_target = s.Q + quad(q_schedule, s.t, s.t + dt0, epsabs=1e-15, epsrel=1e-13)[0]
    delta = 1e-3
    deltas = [delta]
    path = restart_path(s, deltas)
    while path.injected[0] > Q_target and delta > 1e-7:
        delta /= 4
        path = restart_path(s, [delta])
    system = path.system
    ds, xs, qs = list(path.deltas), list(path.solutions), list(path.injected)
    while qs[-1] < Q_target:
        d = ds[-1] * 1.25
        if d >= 0.9:
            raise StepRejectedError("restart continuation left the unit disk", dt0 / 2)
        if len(xs) >= 2:
            seed = xs[-1] + (xs[-1] - xs[-2]) * (d - ds[-1]) / (ds[-1] - ds[-2])
        else:
            seed = _seed(system, s.g.lead, d)
        x, _ = system.solve(seed, "radius", 1.0 - d)
        ds.append(d)
        xs.append(x)
        qs.append(system.injected(x))
    if len(xs) >= 2:
        lam = (Q_target - qs[-2]) / (qs[-1] - qs[-2])
        seed = xs[-2] + lam * (xs[-1] - xs[-2])
    else:
        seed = xs[-1]
    x, res = system.solve(seed, "mass", Q_target)
    g0 = system.build(x)(0.0)
    x[0] *= abs(g0) / g0
    g = system.build(x)
    meta = {k: v for k, v in s.meta.items() if k != "transition"}
    meta["restart_residual"] = res
    if res > tol:
        meta["approximate"] = True
    return PGState(t=s.t + dt0, g=g, Q=Q_target, meta=meta)


# --- subordination -----------------------------------------------------------

def lk_admissible(s: PGState, q: float = 1.0) -> bool:
    """True when every zero inside the disk is paired with a pole by reflection."""
    zeros = s.g.zero_list
    exc = _excused_in(s.g)
    return bool(np.all(exc | (np.abs(zeros) > 1.0)))


def subordination_trajectory(history: Trajectory, zeta: complex, s_time: float, t_time: float,
                             dt: float | None = None) -> complex:
    """Follow ``dw/dt = -w P(w, t)`` from ``w(s_time) = zeta`` to ``t_time``.

    The endpoint satisfies ``f(w, t_time) = f(zeta, s_time)``.
    """
    if t_time < s_time:
        raise PreconditionError("t_time must not precede s_time")
    times = history.times
    if dt is None:
        dt = float(np.min(np.diff(times))) if times.size > 1 else 1e-3
    q_of = history.q_schedule

    def rhs(t, w):
        st = history.state_at(t)
        if not lk_admissible(st):
            raise SubordinationError("state has a zero inside the disk that is not paired with a pole")
        return -w * poisson_P(st, q_of(t), w)

    w = complex(zeta)
    t = s_time
    n = max(1, int(math.ceil((t_time - s_time) / dt - 1e-9)))
    h = (t_time - s_time) / n
    for _ in range(n):
        k1 = rhs(t, w)
        k2 = rhs(t + h / 2, w + h / 2 * k1)
        k3 = rhs(t + h / 2, w + h / 2 * k2)
        k4 = rhs(t + h, w + h * k3)
        w = w + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return w


def time_derivative_of_f(s: PGState, q: float, zeta):
    """``df/dt`` at fixed ``zeta`` from the state derivative, via exact primitives."""
    g = s.g
    d = state_derivative(s, q)
    z = np.asarray(zeta, dtype=complex)
    out = (d.db / g.lead) * g.primitive()(z)
    zl = g.zero_list
    for k, dw in enumerate(d.dzeros):
        rest = np.delete(zl, k)
        gk = RationalMap(g.lead, list(rest), list(zip(g.poles, g.pole_mult)), reduce=False)
        out = out - dw * gk.primitive()(z)
    for j, (p, mult) in enumerate(zip(g.poles, g.pole_mult)):
        pl = list(zip(g.poles, g.pole_mult))
        pl[j] = (p, mult + 1)
        gj = RationalMap(g.lead, list(zl), pl, reduce=False)
        out = out + mult * d.dpoles[j] * gj.primitive()(z)
    return out
