import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec

from pgflow import (
    BoundaryZeroError,
    DegenerateStructureError,
    DomainError,
    PathSingularityError,
    PoleEvaluationError,
    RationalMap,
    StructureError,
    UnsupportedStructureError,
    conjugate_reflect,
    eval_f,
    eval_g,
    partial_fractions,
    reflect,
)
from pgflow.rational import disk_residue_sum

SAKAI2 = RationalMap(8.0, [0.5, 3.5], [(2.0, 2)])
MOBIUS = RationalMap(1.0, [0.5], [3.0])
CARDIOID = RationalMap(-1.0, [1.0])
rng = np.random.default_rng(11)


def random_disk(n, r=0.95):
    return r * np.sqrt(rng.uniform(0, 1, n)) * np.exp(2j * np.pi * rng.uniform(0, 1, n))


# reflect

def test_reflect_examples():
    assert reflect(2) == pytest.approx(0.5)
    assert reflect(1 + 1j) == pytest.approx(0.5 + 0.5j)
    for th in np.linspace(0, 2 * np.pi, 7):
        z = cmath.exp(1j * th)
        assert abs(reflect(z) - z) < 1e-15


def test_reflect_origin_is_domain_error():
    with pytest.raises(DomainError):
        reflect(0)


@given(st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_reflect_involution(z):
    assert abs(reflect(reflect(z)) - z) <= 1e-12 * abs(z)
    assert abs(abs(reflect(z)) - 1 / abs(z)) <= 1e-12 / abs(z)


# construction and serialization

def test_cancellation_reduced_at_construction():
    g = RationalMap(2.0, [0.5, 3.0], [3.0])
    assert g.m == 1 and g.n == 0
    assert g.zeros[0] == pytest.approx(0.5)


def test_unreduced_keeps_structure():
    g = RationalMap(-1.0, [1, 1, 1], [(1, 2)], reduce=False)
    assert g.m == 3 and g.n == 2
    assert g(0.3) == pytest.approx(0.7)


def test_bad_multiplicity():
    with pytest.raises(StructureError):
        RationalMap(1.0, [(0.5, 0)])


def test_record_round_trip():
    rec = SAKAI2.to_record()
    back = RationalMap.from_record(rec)
    assert back(0.3 + 0.1j) == pytest.approx(SAKAI2(0.3 + 0.1j))
    alt = RationalMap.from_record({"lead_re": 8.0, "lead_im": 0.0, "zeros": [[0.5, 0, 1], [3.5, 0, 1]],
                                   "poles": [[2.0, 0.0, 2]]})
    assert alt(0.0) == pytest.approx(3.5)


# conjugate_reflect

def test_conjugate_reflect_constant():
    g = conjugate_reflect(RationalMap(2.5))
    assert g(0.3 + 0.2j) == pytest.approx(2.5)


def test_conjugate_reflect_mobius():
    gs = conjugate_reflect(MOBIUS)
    assert gs.lead == pytest.approx(1 / 6)
    assert gs.zeros[0] == pytest.approx(2.0)
    assert gs.poles[0] == pytest.approx(1 / 3)
    z = random_disk(16, 2.0) + 0.01
    direct = np.conj(MOBIUS(1 / np.conj(z)))
    assert np.allclose(gs(z), direct, rtol=1e-12)


def test_conjugate_reflect_boundary_conjugation():
    z = np.exp(2j * np.pi * np.arange(64) / 64)
    for g in (SAKAI2, MOBIUS, CARDIOID, RationalMap(1 + 2j, [2 - 1j, 0.3j], [(1.5, 1)])):
        err = np.max(np.abs(conjugate_reflect(g)(z) - np.conj(g(z))))
        assert err < 1e-11 * np.max(np.abs(g(z)))


def test_conjugate_reflect_origin_unsupported():
    with pytest.raises(UnsupportedStructureError):
        conjugate_reflect(RationalMap(1.0, [0.0]))


# eval_g / eval_f

def test_eval_g_examples():
    assert eval_g(SAKAI2, 0) == pytest.approx(3.5, rel=1e-14)
    assert eval_g(SAKAI2, 1) == pytest.approx(-10, rel=1e-14)
    assert eval_g(CARDIOID, 0) == pytest.approx(1.0)


def test_eval_g_at_pole():
    with pytest.raises(PoleEvaluationError):
        eval_g(SAKAI2, 2.0)


def test_eval_f_examples():
    assert eval_f(SAKAI2, 0) == 0
    assert abs(eval_f(SAKAI2, 0.5) - 1.0) < 1e-12
    assert abs(eval_f(CARDIOID, 1.0) - 0.5) < 1e-12


def test_eval_f_path_singularity():
    g = RationalMap(1.0, [3.0, 4.0], [(0.5 + 1e-12j, 2)], reduce=False)
    with pytest.raises(PathSingularityError):
        eval_f(g, 0.9)


def test_eval_f_path_independence():
    g = RationalMap(1.3, [0.5, 3.5 + 1j, -2j], [(2.0, 2), (-1.5 + 0.5j, 1)])
    z = random_disk(20)
    radial = eval_f(g, z)
    corner = z.real + 0j
    # second leg: quadrature of g along the vertical segment from the real axis
    leg = np.array([quad_vec(lambda s: 1j * y * g(c + 1j * y * s), 0, 1, epsabs=1e-14)[0]
                    for c, y in zip(corner, z.imag)])
    assert np.max(np.abs(radial - (eval_f(g, corner) + leg))) < 1e-10


def test_primitive_matches_quadrature():
    for g in (SAKAI2, CARDIOID, RationalMap(2.0, [1.5, -2.0j, 3.0], [(1.8j, 2), (-2.2, 1)])):
        z = random_disk(10)
        assert np.max(np.abs(g.primitive()(z) - eval_f(g, z))) < 1e-11


# partial fractions

def test_partial_fractions_mobius():
    pf = partial_fractions(MOBIUS, 1.0)
    assert pf.a[0] == pytest.approx(5 / 3, rel=1e-13)
    assert pf.a_inf == pytest.approx(6.0, rel=1e-13)


def test_partial_fractions_sakai_excused():
    pf = partial_fractions(SAKAI2, 30.0)
    k = int(np.argmin(np.abs(pf.zeros - 0.5)))
    assert pf.a[k] == 0
    assert pf.a[1 - k] == pytest.approx(1.5, rel=1e-13)
    assert pf.a_inf == pytest.approx(30 / 28, rel=1e-13)


def test_partial_fractions_cardioid():
    e = 2 ** (1 / 3)
    g = RationalMap(-e ** -2, [e ** 3])
    pf = partial_fractions(g, e ** 2 - e ** -4)
    assert pf.a[0] == pytest.approx(-2.0, rel=1e-12)
    assert pf.a_inf == 0


@pytest.mark.parametrize("g,q", [(MOBIUS, 1.0), (SAKAI2, 30.0), (RationalMap(1 + 0.5j, [2.0, -1.5j, 0.4 + 0.2j], [(1.7, 2)]), 2.0),
                                 (RationalMap(2.0, [1.5, -2.0], [(3.0j, 1), (-2.5, 1)]), 0.7)])
def test_partial_fraction_reconstruction(g, q):
    pf = partial_fractions(g, q)
    gs = conjugate_reflect(g)
    z = random_disk(16, 0.9) * 1.7 + 0.05
    exact = q / (g(z) * gs(z))
    assert np.max(np.abs(pf.evaluate(z) - exact) / np.abs(exact)) < 1e-10


def test_partial_fraction_coefficients_are_residues():
    g = RationalMap(1 + 0.5j, [2.0, -1.5j, 0.4 + 0.2j], [(1.7, 2)])
    q = 2.0
    pf = partial_fractions(g, q)
    gs = conjugate_reflect(g)
    th = 2 * np.pi * np.arange(256) / 256
    for w, a in zip(pf.zeros, pf.a):
        z = w + 1e-3 * np.exp(1j * th)
        res = np.mean(q / (g(z) * gs(z)) * (z - w))
        assert abs(res - a) < 1e-6 * abs(a)


def test_partial_fractions_errors():
    with pytest.raises(DegenerateStructureError):
        partial_fractions(RationalMap(1.0, [2.0, 2.0]), 1.0)
    with pytest.raises(DegenerateStructureError):
        partial_fractions(RationalMap(1.0, [0.5, 2.0]), 1.0)
    with pytest.raises(BoundaryZeroError):
        partial_fractions(CARDIOID, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.2, 3.0), st.floats(0.0, 2 * math.pi), st.floats(0.1, 5.0))
def test_partial_fractions_homogeneous_in_q(r, th, q):
    g = RationalMap(1.0, [r * cmath.exp(1j * th), 2.5])
    p1 = partial_fractions(g, q)
    p2 = partial_fractions(g, 2 * q)
    assert np.allclose(p2.a, 2 * p1.a, rtol=1e-13)


def test_disk_residue_sum_mean_value():
    vals = disk_residue_sum(RationalMap(1.0), lambda z, fz: z[None, :] ** np.arange(4)[:, None])
    assert abs(vals[0] - 1) < 1e-13 and np.max(np.abs(vals[1:])) < 1e-13
