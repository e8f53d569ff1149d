import math

import numpy as np
import pytest

from pgflow import (
    PGState,
    RationalMap,
    ScenarioTag,
    UnsupportedStructureError,
    boundary_samples,
    counting_number,
    counting_numbers,
    harmonic_moments,
    integrate,
    pg_residual,
    quadrature_identity_residual,
    reference_schedule,
    reference_state,
)
from pgflow.rational import residue_moments

CU = ScenarioTag("CardioidUnivalent")
PG = ScenarioTag("CardioidPG")
SAKAI = ScenarioTag("Sakai", {"a": 1.0})
IDENTITY = PGState(0.0, RationalMap(1.0))
CARDIOID0 = PGState(0.0, RationalMap(-1.0, [1.0]))


def test_moments_unit_disk():
    m = harmonic_moments(IDENTITY, 5)
    assert abs(m[0] - 1) < 1e-13
    assert np.max(np.abs(m[1:])) < 1e-13


def test_moments_cardioid():
    m = harmonic_moments(CARDIOID0, 5)
    assert abs(m[0] - 1.5) < 1e-12
    assert abs(m[1] + 0.5) < 1e-12
    assert np.max(np.abs(m[2:])) < 1e-12


def test_moments_sakai():
    s, _ = reference_state(SAKAI, 1.2)
    m = harmonic_moments(s, 5)
    assert abs(m[0] - 1.2 ** 2 * (2 * 1.2 ** 2 - 1)) < 1e-10
    assert abs(m[0].imag) < 1e-10
    assert np.max(np.abs(m[1:])) < 1e-10


def test_moments_match_residues():
    s, _ = reference_state(SAKAI, 1.7)
    assert np.max(np.abs(harmonic_moments(s, 4) - residue_moments(s.g, 4))) < 1e-10


def test_moment_laws_along_trajectory():
    s0, _ = reference_state(CU, 0.1)
    traj = integrate(s0, 0.8, 1e-3, reference_schedule(CU))
    m0 = harmonic_moments(s0, 5)
    for s in traj.states[::100]:
        m = harmonic_moments(s, 5)
        assert np.max(np.abs(m[1:] - m0[1:])) < 1e-6
        assert abs(m[0] - m0[0] - 2 * (s.Q - s0.Q)) < 1e-6


def test_counting_identity():
    assert counting_number(IDENTITY, 0.5).nu == 1
    assert counting_number(IDENTITY, 2.0).nu == 0
    assert not counting_number(IDENTITY, 0.5).indeterminate


def test_counting_sakai_double_cover():
    s, _ = reference_state(SAKAI, 2.0)
    z = 0.942857
    # disk preimages from the quadratic 8 zeta^2 - (7 + z) zeta + 2 z = 0
    pre = np.roots([8, -(7 + z), 2 * z])
    assert np.all(np.abs(pre) < 1)
    sample = counting_number(s, z)
    assert sample.nu == 2 and not sample.indeterminate
    assert counting_number(s, -10).nu == 0


def test_counting_flags_boundary_points():
    assert counting_number(IDENTITY, 1.0).indeterminate


def test_counting_stable_under_refinement():
    s, _ = reference_state(SAKAI, 1.5)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-3, 3, 40) + 1j * rng.uniform(-3, 3, 40)
    a = counting_numbers(s, pts, 1024)
    b = counting_numbers(s, pts, 2048)
    for x, y in zip(a, b):
        if not (x.indeterminate or y.indeterminate):
            assert x.nu == y.nu


def test_counting_zero_far_away():
    s, _ = reference_state(SAKAI, 1.5)
    rmax = np.max(np.abs(boundary_samples(s, 512)))
    far = 1.5 * rmax * np.exp(2j * np.pi * np.arange(12) / 12)
    assert all(c.nu == 0 for c in counting_numbers(s, far))


def test_counting_monotone_in_time():
    s0, _ = reference_state(PG, 0.01)
    traj = integrate(s0, 0.1, 2e-3, reference_schedule(PG))
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1.5, 1.5, 60) + 1j * rng.uniform(-1.5, 1.5, 60)
    prev = None
    for s in traj.states[::10]:
        cur = counting_numbers(s, pts)
        if prev is not None:
            for a, b in zip(prev, cur):
                if not (a.indeterminate or b.indeterminate):
                    assert b.nu >= a.nu
        prev = cur


def test_boundary_samples():
    pts = boundary_samples(IDENTITY, 4)
    assert np.allclose(pts, [1, 1j, -1, -1j], atol=1e-15)
    assert abs(boundary_samples(CARDIOID0, 16)[0] - 0.5) < 1e-14
    with pytest.raises(ValueError):
        boundary_samples(IDENTITY, 3)


def test_pg_residual_cardioid():
    s, q = reference_state(CU, 0.4)
    assert pg_residual(s, q) < 1e-9
    assert abs(pg_residual(s, q + 1, rate=q) - 1) < 1e-9


def test_pg_residual_sakai():
    s, q = reference_state(SAKAI, 1.4)
    assert q == pytest.approx(1.4 * (4 * 1.4 ** 2 - 1))
    assert pg_residual(s, q) < 1e-9 * (1 + q)


def test_quadrature_identity_disk():
    assert quadrature_identity_residual(IDENTITY, 5) < 1e-10


def test_quadrature_identity_sakai():
    s, _ = reference_state(SAKAI, 1.2)
    assert quadrature_identity_residual(s, 4) < 1e-6


def test_quadrature_identity_lk():
    s, _ = reference_state(ScenarioTag("CardioidLK"), 0.5)
    assert quadrature_identity_residual(s, 4) < 1e-6


def test_quadrature_identity_rejects_residues():
    s = PGState(0.0, RationalMap(1.0, [0.5, 3.0], [(2.0, 1)]))
    with pytest.raises(UnsupportedStructureError):
        quadrature_identity_residual(s, 2)


def test_quadrature_identity_refines():
    s, _ = reference_state(SAKAI, 1.2)
    coarse = quadrature_identity_residual(s, 3, n_r=6, n_theta=16)
    fine = quadrature_identity_residual(s, 3, n_r=12, n_theta=32)
    assert fine <= coarse / 4 or fine < 1e-12
    assert math.isfinite(coarse)
