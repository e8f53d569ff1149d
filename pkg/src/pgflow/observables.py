"""Quantities derived from a state: moments, counting numbers, boundary curves, residuals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .dynamics import PGState, correction_R, poisson_P, time_derivative_of_f
from .errors import UnsupportedStructureError
from .rational import conjugate_reflect, disk_residue_sum, eval_f

N_CONTOUR = 1024
COUNT_TOL = 1e-3


def _circle(n: int) -> NDArray:
    return np.exp(2j * np.pi * np.arange(n) / n)


def harmonic_moments(s: PGState, K: int, n_contour: int = N_CONTOUR) -> NDArray:
    """``M_k = (1/2 pi i) oint f^k f* g dzeta`` for ``k = 0..K`` by the trapezoid rule."""
    z = _circle(n_contour)
    f = s.g.primitive()(z)
    base = np.conj(f) * s.g(z) * z
    out = np.empty(K + 1, dtype=complex)
    powk = np.ones_like(f)
    for k in range(K + 1):
        out[k] = np.mean(powk * base)
        powk = powk * f
    return out


@dataclass(frozen=True)
class CountingSample:
    z: complex
    nu: int
    indeterminate: bool
    raw: float


def counting_numbers(s: PGState, points, n_contour: int = N_CONTOUR) -> list[CountingSample]:
    """Winding numbers of the boundary curve around each point."""
    zc = _circle(n_contour)
    f = s.g.primitive()(zc)
    weight = s.g(zc) * zc
    eps_bdry = 2 * np.pi * np.max(np.abs(s.g(zc))) / n_contour
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    out = []
    for p in pts:
        diff = f - p
        if np.min(np.abs(diff)) < eps_bdry:
            out.append(CountingSample(complex(p), 0, True, float("nan")))
            continue
        raw = np.mean(weight / diff)
        nu = int(np.rint(raw.real))
        bad = abs(raw - nu) > COUNT_TOL
        out.append(CountingSample(complex(p), max(nu, 0), bool(bad), float(raw.real)))
    return out


def counting_number(s: PGState, z: complex, n_contour: int = N_CONTOUR) -> CountingSample:
    """Number of disk preimages of ``z`` under ``f``, flagged when ``z`` is near the boundary curve."""
    return counting_numbers(s, [z], n_contour)[0]


def boundary_samples(s: PGState, N: int) -> NDArray:
    """``f`` at ``N`` equally spaced points of the unit circle, starting at 1."""
    if N < 4:
        raise ValueError("need at least 4 samples")
    return eval_f(s.g, _circle(N))


def pg_residual(s: PGState, q: float, rate: float | None = None, n: int = 128) -> float:
    """Max over the circle of ``|Re(df/dt * conj(zeta g)) - q|``.

    ``df/dt`` follows from the zero/pole velocities of the state driven at
    ``rate`` (default ``q``), through exact primitives of the differentiated map.
    """
    z = _circle(n)
    fdot = time_derivative_of_f(s, q if rate is None else rate, z)
    return float(np.max(np.abs((fdot * np.conj(z * s.g(z))).real - q)))


def lk_form_mismatch(s: PGState, q: float, n: int = 128) -> float:
    """Relative gap between the chain-rule ``df/dt`` and ``zeta g (P + R)`` on the circle."""
    z = _circle(n)
    chain = time_derivative_of_f(s, q, z)
    lk = z * s.g(z) * (poisson_P(s, q, z) + correction_R(s, q, z))
    return float(np.max(np.abs(chain - lk)) / max(1.0, np.max(np.abs(lk))))


def quadrature_identity_residual(s: PGState, degree: int, n_r: int = 400, n_theta: int = 512) -> float:
    """Mismatch between area integrals of monomials against ``|g|^2`` and the residue functional.

    The area side uses Gauss-Legendre nodes in the radius and the trapezoid
    rule in the angle; the residue side sums residues of ``zeta^k f* g`` at
    the origin and at the reflected poles.
    """
    g = s.g
    if not g.is_residue_free():
        raise UnsupportedStructureError("quadrature identity needs a residue-free map")
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w * r
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    zz = r[:, None] * np.exp(1j * theta)[None, :]
    dens = np.abs(g(zz)) ** 2
    ks = np.arange(degree + 1)
    rhs = disk_residue_sum(g, lambda z, fz: z[None, :] ** ks[:, None])
    worst = 0.0
    for k in ks:
        lhs = np.sum(wr[:, None] * zz ** k * dens) * (2 * np.pi / n_theta) / np.pi
        worst = max(worst, abs(lhs - rhs[k]))
    return float(worst)


def conjugate_boundary_check(s: PGState, n: int = 64) -> float:
    """Max deviation of ``g*`` from ``conj(g)`` on the circle (diagnostic)."""
    z = _circle(n)
    return float(np.max(np.abs(conjugate_reflect(s.g)(z) - np.conj(s.g(z)))))
