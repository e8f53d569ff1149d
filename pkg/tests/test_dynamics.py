import cmath
import math

import numpy as np
import pytest

from pgflow import (
    PGState,
    PreconditionError,
    RationalMap,
    ScenarioTag,
    SubordinationError,
    constant_rate,
    correction_R,
    dynamics_coefficients,
    eval_f,
    eval_g,
    integrate,
    lk_admissible,
    poisson_P,
    reference_map,
    reference_schedule,
    reference_state,
    restart_after_transition,
    state_derivative,
    step,
    subordination_trajectory,
    transition_boundary,
)
from pgflow.dynamics import time_derivative_of_f
from pgflow.rational import reflect, residue_moments

CU = ScenarioTag("CardioidUnivalent")
LK = ScenarioTag("CardioidLK")
SAKAI = ScenarioTag("Sakai", {"a": 1.0})
T_CU = math.log(2.0) / 3  # e^t = 2^(1/3)
CIRCLE = np.exp(2j * np.pi * np.arange(64) / 64)


def mobius_state():
    return PGState(0.0, RationalMap(1.0, [0.5], [3.0]))


def sakai_state(t=2.0):
    return reference_state(SAKAI, t)


# coefficients

def test_coefficients_cardioid():
    s, q = reference_state(CU, T_CU)
    co = dynamics_coefficients(s, q)
    assert co.pf.a[0] == pytest.approx(-2.0, rel=1e-12)
    assert co.C == pytest.approx(-1.0, rel=1e-12)
    assert co.D == pytest.approx(-4.0, rel=1e-12)


def test_coefficients_mobius():
    co = dynamics_coefficients(mobius_state(), 1.0)
    assert co.C == pytest.approx(28 / 3, rel=1e-13)
    assert co.D == pytest.approx(10 / 3, rel=1e-13)


def test_coefficients_sakai_excused():
    s, q = sakai_state()
    co = dynamics_coefficients(s, q)
    k = int(np.argmin(np.abs(co.pf.zeros - 0.5)))
    assert co.pf.a[k] == 0
    other = 1 - k
    a, w = co.pf.a[other], co.pf.zeros[other]
    assert co.C == pytest.approx(co.pf.a_inf.real + (a / w).real, rel=1e-13)
    assert co.D == pytest.approx(2 * a, rel=1e-13)


# P and R

def test_poisson_constant_map():
    s = PGState(0.0, RationalMap(2.0))
    z = 0.3 * CIRCLE
    assert np.allclose(poisson_P(s, 3.0, z), 0.75, atol=1e-14)


def test_poisson_mobius_origin():
    assert poisson_P(mobius_state(), 1.0, 0.0) == pytest.approx(28 / 3, abs=1e-12)


@pytest.mark.parametrize("state", [mobius_state(), sakai_state()[0], reference_state(CU, 0.3)[0],
                                   PGState(0.0, RationalMap(1.0, [0.4 + 0.3j, 2.5j, -3.0], [(1.6, 1), (-2.0j, 2)]))])
def test_poisson_boundary_and_normalization(state):
    q = 1.7
    assert abs(poisson_P(state, q, 0.0).imag) < 1e-12
    err = np.abs(poisson_P(state, q, CIRCLE).real - q / np.abs(state.g(CIRCLE)) ** 2)
    assert np.max(err) < 1e-10 * max(1.0, np.max(q / np.abs(state.g(CIRCLE)) ** 2))
    r = correction_R(state, q, CIRCLE)
    assert np.max(np.abs(r.real)) < 1e-10
    assert abs((poisson_P(state, q, 0.0) + correction_R(state, q, 0.0)).imag) < 1e-12


def test_correction_vanishes_without_inner_zeros():
    s, q = reference_state(CU, 0.2)
    assert np.max(np.abs(correction_R(s, q, 0.5 * CIRCLE))) == 0


def test_correction_mobius():
    s = mobius_state()
    assert correction_R(s, 1.0, 0.0) == pytest.approx(-20 / 3, abs=1e-12)
    assert poisson_P(s, 1.0, 0.0) + correction_R(s, 1.0, 0.0) == pytest.approx(8 / 3, abs=1e-12)


def test_correction_vanishes_for_sakai():
    s, q = sakai_state()
    assert np.max(np.abs(correction_R(s, q, 0.7 * CIRCLE))) < 1e-13


# state derivative

def test_derivative_cardioid():
    s, q = reference_state(CU, T_CU)
    d = state_derivative(s, q)
    assert d.dzeros[0] == pytest.approx(6.0, rel=1e-12)
    assert d.db == pytest.approx(2 ** (1 / 3), rel=1e-12)
    assert d.dQ == q


def test_derivative_sakai():
    s, q = sakai_state()
    assert q == pytest.approx(30.0)
    d = state_derivative(s, q)
    z = s.g.zero_list
    dz = dict(zip(np.round(z.real, 6), d.dzeros))
    assert dz[0.5] == pytest.approx(-0.25, abs=1e-12)
    assert dz[3.5] == pytest.approx(2.25, abs=1e-12)
    assert d.dpoles[0] == pytest.approx(1.0, abs=1e-12)
    assert d.db == pytest.approx(12.0, abs=1e-12)


def test_derivative_zero_rate():
    for s in (mobius_state(), sakai_state()[0]):
        d = state_derivative(s, 0.0)
        assert d.db == 0 and not np.any(d.dzeros) and not np.any(d.dpoles)


@pytest.mark.parametrize("scale", [0.5, 3.0, 17.0])
def test_derivative_homogeneous_in_q(scale):
    s = PGState(0.0, RationalMap(1.0, [0.4 + 0.3j, 2.5j, -3.0], [(1.6, 1), (-2.0j, 2)]))
    d1 = state_derivative(s, 1.3)
    d2 = state_derivative(s, 1.3 * scale)
    assert np.allclose(d2.dzeros, scale * d1.dzeros, rtol=1e-13, atol=0)
    assert np.allclose(d2.dpoles, scale * d1.dpoles, rtol=1e-13, atol=0)
    assert d2.db == pytest.approx(scale * d1.db, rel=1e-13)


@pytest.mark.parametrize("state,q", [(mobius_state(), 1.0), (sakai_state()[0], 30.0),
                                     (PGState(0.0, RationalMap(1.0, [0.4 + 0.3j, 2.5j, -3.0], [(1.6, 1), (-2.0j, 2)])), 2.0)])
def test_fdot_two_ways(state, q):
    z = CIRCLE
    chain = time_derivative_of_f(state, q, z)
    lk = z * state.g(z) * (poisson_P(state, q, z) + correction_R(state, q, z))
    assert np.max(np.abs(chain - lk)) < 1e-9 * np.max(np.abs(lk))


# stepping

def test_dt_zero_is_identity():
    s, _ = reference_state(CU, 0.1)
    new, ev = step(s, 0.0, reference_schedule(CU))
    assert ev == []
    assert new.g(0.3) == s.g(0.3) and new.t == s.t and new.Q == s.Q


def test_cardioid_trajectory():
    s, _ = reference_state(CU, 0.1)
    traj = integrate(s, 1.0, 1e-3, reference_schedule(CU))
    end = traj.states[-1]
    assert end.t == pytest.approx(1.0, abs=1e-12)
    assert len(traj.states) == 901
    assert abs(end.g.zeros[0] / math.exp(3) - 1) < 1e-6
    assert abs(end.g.lead / -math.exp(-2) - 1) < 1e-6
    assert traj.events == []


def test_time_reversed_cardioid_reports_crossing():
    start, _ = reference_state(CU, 0.2)
    s = PGState(0.0, start.g)
    sched = lambda tau: -reference_schedule(CU)(0.2 - tau)
    traj = integrate(s, 0.3, 1e-3, sched)
    crossings = [e for e in traj.events if e.kind == "BoundaryCrossing"]
    assert len(crossings) == 1
    ev = crossings[0]
    assert abs(ev.t - 0.2) < 1e-8
    assert ev.gap < 1e-5
    assert abs(abs(traj.states[-1].g.zeros[0]) - 1) < 1e-5


def test_sakai_monotone_structure():
    s, _ = reference_state(SAKAI, 1.1)
    traj = integrate(s, 1.5, 5e-3, reference_schedule(SAKAI))
    poles = np.array([abs(st.g.poles[0]) for st in traj.states])
    inner = np.array([np.min(np.abs(st.g.zeros)) for st in traj.states])
    assert np.all(np.diff(poles) >= -1e-14)
    assert np.all(np.diff(inner) <= 1e-14)
    end, _ = reference_state(SAKAI, 1.5)
    assert abs(traj.states[-1].g.poles[0] - end.g.poles[0]) < 1e-8


def test_step_tracks_injected_mass():
    s, _ = reference_state(CU, 0.1)
    new, _ = step(s, 0.01, reference_schedule(CU))
    assert new.Q == pytest.approx(reference_state(CU, 0.11)[0].Q, abs=1e-10)


# transitions

def test_transition_cardioid():
    s = PGState(0.0, RationalMap(-1.0, [1.0]))
    new = transition_boundary(s, 0)
    g = new.g
    assert g.lead == -1
    assert np.allclose(np.sort_complex(g.zero_list), [1, 1, 1])
    assert np.allclose(g.poles, [1]) and list(g.pole_mult) == [2]
    assert new.t == s.t and new.Q == s.Q


def test_transition_mobius_generic():
    w = cmath.exp(0.25j * math.pi)
    s = PGState(0.0, RationalMap(1.0, [w], [3.0]))
    new = transition_boundary(s, 0)
    ws = complex(reflect(w))
    assert sorted(new.g.pole_mult) == [1, 2]
    assert new.g.m == 3 and new.g.n == 3
    assert np.sum(np.abs(new.g.zero_list - ws) < 1e-14) == 3  # w is its own reflection on the circle
    z = 0.9 * CIRCLE
    assert np.max(np.abs(eval_g(new.g, z) - eval_g(s.g, z))) < 1e-12


def test_transition_mobius_simple_form():
    w = cmath.exp(0.25j * math.pi)
    s = PGState(0.0, RationalMap(1.0, [w, 0.5], [w], reduce=False))
    new = transition_boundary(s, 0)
    assert new.g.n == 2 and list(new.g.pole_mult) == [2]
    assert new.g.m == 3
    assert new.meta["transition"]["simple"]


def test_transition_preserves_values_on_circle():
    w = cmath.exp(1.1j)
    s = PGState(0.0, RationalMap(2.0, [w, 2.5 + 1j], [(-1.8, 2)]))
    new = transition_boundary(s, 0)
    z = CIRCLE * cmath.exp(0.01j)
    assert np.max(np.abs(new.g(z) - s.g(z))) < 1e-12 * np.max(np.abs(s.g(z)))


def test_transition_needs_zero_on_closed_disk():
    with pytest.raises(PreconditionError):
        transition_boundary(PGState(0.0, RationalMap(1.0, [2.0])), 0)
    with pytest.raises(PreconditionError):
        transition_boundary(mobius_state(), 3)


def test_restart_cardioid_matches_closed_form():
    s = transition_boundary(PGState(0.0, RationalMap(-1.0, [1.0])), 0)
    new = restart_after_transition(s, 0.1, reference_schedule(LK))
    ref, _ = reference_state(LK, 0.1)
    assert not new.meta.get("approximate")
    assert new.Q == pytest.approx(ref.Q, rel=1e-10)
    assert abs(new.g.poles[0] - ref.g.poles[0]) < 1e-8
    z = 0.5 * CIRCLE
    assert np.max(np.abs(new.g(z) - ref.g(z))) < 1e-7
    # constraints: reflected pole is a zero, M_1 conserved, M_0 grows by 2Q
    p = new.g.poles[0]
    assert abs(new.g(1 / np.conj(p))) < 1e-8
    mom = residue_moments(new.g, 1)
    assert abs(mom[1] + 0.5) < 1e-8
    assert abs(mom[0] - 1.5 - 2 * new.Q) < 1e-8


def test_restart_small_dt_is_continuous():
    pre = RationalMap(-1.0, [1.0])
    s = transition_boundary(PGState(0.0, pre), 0)
    new = restart_after_transition(s, 1e-3, reference_schedule(LK))
    z = 0.5 * CIRCLE
    assert np.max(np.abs(new.g(z) - pre(z))) < 1e-2


def test_restart_needs_transition_state():
    with pytest.raises(PreconditionError):
        restart_after_transition(mobius_state(), 0.1, constant_rate(1.0))


# admissibility and subordination

def test_lk_admissible_examples():
    assert lk_admissible(sakai_state()[0])
    assert not lk_admissible(mobius_state())
    assert lk_admissible(reference_state(CU, 0.2)[0])


def _cardioid_history():
    s, _ = reference_state(CU, 0.1)
    return integrate(s, 0.5, 1e-3, reference_schedule(CU))


def test_subordination_identity():
    hist = _cardioid_history()
    assert subordination_trajectory(hist, 0.3 + 0.1j, 0.2, 0.2) == 0.3 + 0.1j


def test_subordination_cardioid():
    hist = _cardioid_history()
    w = subordination_trajectory(hist, 0.3, 0.1, 0.5)
    target = reference_map(CU, 0.1, 0.3)
    # preimage oracle: f(w, 0.5) = e^0.5 w - 0.5 e^-1 w^2
    a, b = -0.5 * math.exp(-1), math.exp(0.5)
    roots = np.roots([a, b, -target])
    oracle = roots[np.argmin(np.abs(roots))]
    assert abs(w - oracle) < 1e-8
    assert abs(eval_f(hist.states[-1].g, w) - target) < 1e-8


def test_subordination_shrinks_modulus():
    hist = _cardioid_history()
    z = 0.6 * cmath.exp(0.7j)
    radii = [abs(subordination_trajectory(hist, z, 0.1, t)) for t in np.linspace(0.1, 0.5, 9)]
    assert np.all(np.diff(radii) <= 1e-14)


def test_subordination_rejects_inadmissible_history():
    traj = integrate(mobius_state(), 0.02, 0.01, constant_rate(1.0))
    with pytest.raises(SubordinationError):
        subordination_trajectory(traj, 0.1, 0.0, 0.02)


def test_rk4_fourth_order():
    s, _ = reference_state(CU, 0.1)
    exact = math.exp(3.0)
    errs = []
    for dt in (0.02, 0.01, 0.005):
        end = integrate(s, 1.0, dt, reference_schedule(CU)).states[-1]
        errs.append(abs(end.g.zeros[0] - exact))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 14 <= r1 <= 18 and 14 <= r2 <= 18
