"""Rational functions in zero/pole form and the operations the dynamics need.

A derivative map is ``g(zeta) = b * prod(zeta - w_k)**mu_k / prod(zeta - p_j)**n_j``.
The conformal map is its primitive ``f(zeta) = int_0^zeta g``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad_vec

from .errors import (
    BoundaryZeroError,
    DegenerateStructureError,
    DomainError,
    PathSingularityError,
    PoleEvaluationError,
    StructureError,
    UnsupportedStructureError,
)

EPS_COINCIDE = 1e-9
EPS_CIRCLE = 1e-8
EPS_RESIDUE = 1e-10


def reflect(z):
    """Reflection in the unit circle, ``z -> 1/conj(z)``."""
    arr = np.asarray(z, dtype=complex)
    if np.any(arr == 0):
        raise DomainError("cannot reflect the origin")
    out = 1.0 / np.conj(arr)
    return complex(out) if out.ndim == 0 else out


def _parse_roots(items) -> tuple[NDArray, NDArray]:
    """Accept complex numbers (repeats allowed) or ``(location, multiplicity)`` pairs."""
    locs, mults = [], []
    for item in items:
        if isinstance(item, (tuple, list)) and len(item) == 2:
            loc, mult = item
        else:
            loc, mult = item, 1
        mult = int(mult)
        if mult < 1:
            raise StructureError("multiplicities must be positive integers")
        locs.append(complex(loc))
        mults.append(mult)
    return np.array(locs, dtype=complex), np.array(mults, dtype=int)


def _merge_equal(locs: NDArray, mults: NDArray) -> tuple[NDArray, NDArray]:
    out_l: list[complex] = []
    out_m: list[int] = []
    for loc, m in zip(locs, mults):
        for i, existing in enumerate(out_l):
            if existing == loc:
                out_m[i] += int(m)
                break
        else:
            out_l.append(complex(loc))
            out_m.append(int(m))
    return np.array(out_l, dtype=complex), np.array(out_m, dtype=int)


class RationalMap:
    """Rational function ``b * prod(z - zeros)^mu / prod(z - poles)^n``.

    Parameters
    ----------
    lead : complex
        Leading coefficient ``b``; must be nonzero.
    zeros, poles : iterable
        Complex locations, possibly repeated, or ``(location, multiplicity)`` pairs.
    reduce : bool
        If True, exactly coincident zero/pole pairs cancel and repeated locations
        merge. With False the structure is kept as given, which is how transition
        states carry a double pole sitting on top of newborn zeros.
    """

    __slots__ = ("lead", "zeros", "zero_mult", "poles", "pole_mult")

    def __init__(self, lead, zeros: Iterable = (), poles: Iterable = (), reduce: bool = True):
        lead = complex(lead)
        if lead == 0 or not np.isfinite(lead):
            raise StructureError("leading coefficient must be finite and nonzero")
        zl, zm = _parse_roots(zeros)
        pl, pm = _parse_roots(poles)
        if np.any(~np.isfinite(zl)) or np.any(~np.isfinite(pl)):
            raise StructureError("zeros and poles must be finite")
        if reduce:
            zl, zm = _merge_equal(zl, zm)
            pl, pm = _merge_equal(pl, pm)
            for i in range(len(zl)):
                hit = np.nonzero(pl == zl[i])[0]
                if hit.size:
                    j = hit[0]
                    c = min(zm[i], pm[j])
                    zm[i] -= c
                    pm[j] -= c
            zl, zm = zl[zm > 0], zm[zm > 0]
            pl, pm = pl[pm > 0], pm[pm > 0]
        self.lead = lead
        self.zeros = zl
        self.zero_mult = zm
        self.poles = pl
        self.pole_mult = pm

    # --- structure -----------------------------------------------------
    @property
    def m(self) -> int:
        """Number of zeros counted with multiplicity."""
        return int(self.zero_mult.sum())

    @property
    def n(self) -> int:
        """Number of poles counted with multiplicity."""
        return int(self.pole_mult.sum())

    @property
    def zero_list(self) -> NDArray:
        return np.repeat(self.zeros, self.zero_mult)

    @property
    def pole_list(self) -> NDArray:
        return np.repeat(self.poles, self.pole_mult)

    def copy_with(self, lead=None, zeros=None, poles=None, reduce=False) -> "RationalMap":
        """New map with some parts replaced (arrays of distinct locations + multiplicities)."""
        z = list(zip(self.zeros, self.zero_mult)) if zeros is None else zeros
        p = list(zip(self.poles, self.pole_mult)) if poles is None else poles
        return RationalMap(self.lead if lead is None else lead, z, p, reduce=reduce)

    def __repr__(self) -> str:
        def fmt(locs, mults):
            return "[" + ", ".join(
                f"{complex(l):.6g}" + (f"^{m}" if m > 1 else "") for l, m in zip(locs, mults)
            ) + "]"
        return (f"RationalMap(lead={self.lead:.6g}, zeros={fmt(self.zeros, self.zero_mult)}, "
                f"poles={fmt(self.poles, self.pole_mult)})")

    def to_record(self) -> dict:
        """JSON-friendly dictionary."""
        return {
            "lead": [self.lead.real, self.lead.imag],
            "zeros": [[z.real, z.imag, int(m)] for z, m in zip(self.zeros, self.zero_mult)],
            "poles": [[p.real, p.imag, int(m)] for p, m in zip(self.poles, self.pole_mult)],
        }

    @classmethod
    def from_record(cls, rec: dict, reduce: bool = False) -> "RationalMap":
        if "lead" in rec:
            lead = complex(*rec["lead"]) if isinstance(rec["lead"], (list, tuple)) else complex(rec["lead"])
        else:
            lead = complex(rec["lead_re"], rec.get("lead_im", 0.0))
        zeros = [(complex(r[0], r[1]), int(r[2]) if len(r) > 2 else 1) for r in rec.get("zeros", [])]
        poles = [(complex(r[0], r[1]), int(r[2]) if len(r) > 2 else 1) for r in rec.get("poles", [])]
        return cls(lead, zeros, poles, reduce=reduce)

    # --- evaluation ------------------------------------------------------
    def _check_not_pole(self, z: NDArray) -> None:
        if self.poles.size == 0:
            return
        d = np.abs(z[..., None] - self.poles)
        if np.any(d <= 1e-15 * (1.0 + np.abs(self.poles))):
            raise PoleEvaluationError("evaluation at a pole")

    def __call__(self, zeta):
        z = np.asarray(zeta, dtype=complex)
        self._check_not_pole(z)
        num = np.prod((z[..., None] - self.zeros) ** self.zero_mult, axis=-1)
        den = np.prod((z[..., None] - self.poles) ** self.pole_mult, axis=-1)
        out = self.lead * num / den
        return complex(out) if out.ndim == 0 else out

    def log_derivative(self, zeta):
        """``g'/g`` evaluated at ``zeta`` (which must avoid zeros and poles)."""
        z = np.asarray(zeta, dtype=complex)
        out = np.sum(self.zero_mult / (z[..., None] - self.zeros), axis=-1) - np.sum(
            self.pole_mult / (z[..., None] - self.poles), axis=-1
        )
        return complex(out) if out.ndim == 0 else out

    def derivative(self, zeta):
        """``g'(zeta)``; at a simple zero uses the product of the remaining factors."""
        z = np.asarray(zeta, dtype=complex)
        self._check_not_pole(z)
        diff = z[..., None] - self.zero_list
        total = np.zeros(z.shape, dtype=complex)
        for k in range(diff.shape[-1]):
            others = np.delete(diff, k, axis=-1)
            total = total + np.prod(others, axis=-1)
        num = np.prod(diff, axis=-1)
        den = np.prod((z[..., None] - self.poles) ** self.pole_mult, axis=-1)
        dlogden = np.sum(self.pole_mult / (z[..., None] - self.poles), axis=-1)
        out = self.lead * (total - num * dlogden) / den
        return complex(out) if out.ndim == 0 else out

    # --- algebra ---------------------------------------------------------
    def laurent_at_poles(self) -> tuple[NDArray, list[NDArray]]:
        """Polynomial part and principal parts of the map.

        Returns ``(poly, principal)`` where ``poly`` holds the polynomial-part
        coefficients in increasing degree, and ``principal[j][k-1]`` is the
        coefficient of ``(zeta - p_j)**(-k)``.
        """
        zl = self.zero_list
        pl = self.pole_list
        num = np.poly(zl) if zl.size else np.array([1.0 + 0j])
        den = np.poly(pl) if pl.size else np.array([1.0 + 0j])
        if zl.size >= pl.size:
            quot, _ = np.polydiv(num, den)
            poly = self.lead * np.asarray(quot, dtype=complex)[::-1]
        else:
            poly = np.zeros(1, dtype=complex)
        principal = []
        for j, (p, order) in enumerate(zip(self.poles, self.pole_mult)):
            others = np.delete(self.poles, j)
            others_m = np.delete(self.pole_mult, j)
            # Taylor coefficients (increasing order) of numerator and the other denominators at p
            nt = np.poly(zl - p)[::-1] if zl.size else np.array([1.0 + 0j])
            orep = np.repeat(others, others_m)
            dt = np.poly(orep - p)[::-1] if orep.size else np.array([1.0 + 0j])
            h = np.zeros(order, dtype=complex)
            for i in range(order):
                acc = nt[i] if i < nt.size else 0.0
                for jj in range(1, i + 1):
                    if jj < dt.size:
                        acc -= dt[jj] * h[i - jj]
                h[i] = acc / dt[0]
            # coefficient of (z-p)^{-k} is h[order-k]
            principal.append(self.lead * h[::-1].copy())
        return poly, principal

    def residues(self) -> NDArray:
        """Residue of the map at each distinct pole."""
        _, principal = self.laurent_at_poles()
        return np.array([c[0] for c in principal], dtype=complex)

    def is_residue_free(self, tol: float = EPS_RESIDUE) -> bool:
        if self.poles.size == 0:
            return True
        scale = max(1.0, float(np.max(np.abs(self(np.exp(1j * np.linspace(0, 2 * np.pi, 16, endpoint=False)) * 0.5)))))
        return bool(np.all(np.abs(self.residues()) <= tol * scale))

    def primitive(self) -> "Primitive":
        """Exact primitive vanishing at the origin."""
        return Primitive(self)


class Primitive:
    """Exact antiderivative ``F(zeta) = int_0^zeta g`` from the partial-fraction form.

    Logarithmic terms use ``log(1 - zeta/p)`` with the principal branch, which is
    the analytic continuation along straight segments from 0 whenever the
    segment avoids the ray beyond the pole.
    """

    def __init__(self, g: RationalMap, drop_logs: bool = False):
        if np.any(g.poles == 0):
            raise UnsupportedStructureError("pole at the origin")
        self.g = g
        self.drop_logs = drop_logs
        self.poly, self.principal = g.laurent_at_poles()
        deg = self.poly.size
        self._int_poly = np.concatenate([[0.0], self.poly / np.arange(1, deg + 1)])

    def __call__(self, zeta):
        z = np.asarray(zeta, dtype=complex)
        self.g._check_not_pole(z)
        out = np.polynomial.polynomial.polyval(z, self._int_poly)
        for p, coeffs in zip(self.g.poles, self.principal):
            if not self.drop_logs:
                out = out + coeffs[0] * np.log(1.0 - z / p)
            for k in range(2, coeffs.size + 1):
                out = out + coeffs[k - 1] * ((z - p) ** (1 - k) - (-p) ** (1 - k)) / (1 - k)
        return complex(out) if np.ndim(out) == 0 else out


def conjugate_reflect(g: RationalMap) -> RationalMap:
    """``g*(zeta) = conj(g(1/conj(zeta)))`` as a rational map.

    Zeros and poles map by reflection; zeros or poles at the origin become
    factors at infinity and change the power of ``zeta``.
    """
    if np.any(g.zeros == 0) or np.any(g.poles == 0):
        raise UnsupportedStructureError("zero or pole at the origin")
    lead = np.conj(g.lead) * np.prod((-np.conj(g.zeros)) ** g.zero_mult) / np.prod(
        (-np.conj(g.poles)) ** g.pole_mult
    )
    zeros = list(zip(reflect(g.zeros), g.zero_mult)) if g.zeros.size else []
    poles = list(zip(reflect(g.poles), g.pole_mult)) if g.poles.size else []
    k = g.m - g.n
    if k > 0:
        poles.append((0j, k))
    elif k < 0:
        zeros.append((0j, -k))
    return RationalMap(lead, zeros, poles, reduce=False)


def eval_g(g: RationalMap, zeta):
    """Evaluate the derivative map (raises at poles)."""
    return g(zeta)


def _segment_pole_distance(poles: NDArray, zeta: NDArray) -> NDArray:
    """Distance from each pole to the segment ``[0, zeta]`` (minimum over poles)."""
    if poles.size == 0:
        return np.full(zeta.shape, np.inf)
    zz = zeta[..., None]
    denom = np.where(np.abs(zz) > 0, np.abs(zz) ** 2, 1.0)
    s = np.clip(np.real(poles * np.conj(zz)) / denom, 0.0, 1.0)
    return np.min(np.abs(poles - s * zz), axis=-1)


def eval_f(g: RationalMap, zeta, tol: float = 1e-13):
    """Primitive of ``g`` along the straight segment from 0, by adaptive quadrature.

    Raises PathSingularityError when the segment passes within 1e-9 of a pole.
    """
    z = np.asarray(zeta, dtype=complex)
    flat = z.reshape(-1)
    if np.any(_segment_pole_distance(g.poles, flat) < 1e-9):
        raise PathSingularityError("integration path passes through a pole")
    if flat.size == 0:
        return z.astype(complex)

    def integrand(s):
        return g(s * flat) * flat

    val, _ = quad_vec(integrand, 0.0, 1.0, epsabs=tol, epsrel=tol, norm="max", limit=2000)
    out = np.asarray(val, dtype=complex).reshape(z.shape)
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PartialFractions:
    """Coefficients of ``q / (g g*)``.

    ``a[k]`` pairs with ``zeros[k]``; ``excused[k]`` marks zeros inside the
    disk whose reflection is a pole, for which the coefficient is exactly zero.
    """

    a_inf: complex
    a: NDArray
    zeros: NDArray
    excused: NDArray

    def evaluate(self, zeta):
        """Reconstruct ``q/(g g*)`` from the coefficients."""
        z = np.asarray(zeta, dtype=complex)
        w = self.zeros
        a = self.a
        const = self.a_inf + np.sum(np.conj(a) / np.conj(w))
        terms = a / (z[..., None] - w) + np.conj(a) * z[..., None] / (1.0 - np.conj(w) * z[..., None])
        out = const + np.sum(terms, axis=-1)
        return complex(out) if out.ndim == 0 else out


def _scale(g: RationalMap) -> float:
    pts = np.concatenate([np.abs(g.zeros), np.abs(g.poles), [1.0]])
    return float(np.max(pts))


def check_simple_zeros(zeros: NDArray, excused: NDArray, scale: float) -> None:
    """Raise DegenerateStructureError for coincident or mutually reflected zeros."""
    tol = EPS_COINCIDE * scale
    for i in range(zeros.size):
        for j in range(i + 1, zeros.size):
            if excused[i] and excused[j]:
                continue
            if abs(zeros[i] - zeros[j]) < tol:
                raise DegenerateStructureError("multiple zero")
            if abs(zeros[i] * np.conj(zeros[j]) - 1.0) < tol:
                raise DegenerateStructureError("zero pair related by reflection")


def excused_mask(zeros: NDArray, poles: NDArray, scale: float) -> NDArray:
    """Zeros inside the disk whose reflection coincides with a pole."""
    mask = np.zeros(zeros.size, dtype=bool)
    if poles.size == 0:
        return mask
    for k, w in enumerate(zeros):
        if abs(w) < 1.0 and w != 0:
            if np.min(np.abs(poles - 1.0 / np.conj(w))) < EPS_COINCIDE * scale:
                mask[k] = True
    return mask


def pf_coefficients(lead: complex, zeros: NDArray, poles: NDArray, pole_mult: NDArray,
                    q: float, excused: NDArray) -> tuple[complex, NDArray]:
    """Array-level coefficient formulas, no validation (used by the integrator)."""
    m = zeros.size
    n = int(pole_mult.sum())
    b2 = abs(lead) ** 2
    a = np.zeros(m, dtype=complex)
    if q != 0.0 and m:
        w = zeros[:, None]
        ws = 1.0 / np.conj(w)
        diff = w - zeros[None, :]
        np.fill_diagonal(diff, 1.0)
        num = q * np.prod((w - poles) ** pole_mult, axis=1) * np.prod(np.conj(ws - poles) ** pole_mult, axis=1)
        den = b2 * np.prod(diff, axis=1) * np.prod(np.conj(ws - zeros[None, :]), axis=1)
        with np.errstate(all="ignore"):
            a = np.where(excused, 0.0, num / den)
    if m == n:
        a_inf = q * np.prod(np.conj(poles) ** pole_mult) / (b2 * np.prod(np.conj(zeros)))
    else:
        a_inf = 0.0 + 0j
    return complex(a_inf), a


def partial_fractions(g: RationalMap, q: float) -> PartialFractions:
    """Coefficients ``A_inf, A_k`` of ``q/(g g*)`` for a map with simple zeros.

    Raises DegenerateStructureError for multiple or mutually reflected zeros,
    BoundaryZeroError for zeros on the unit circle.
    """
    if g.m < g.n:
        raise UnsupportedStructureError("fewer zeros than poles")
    zeros = g.zero_list
    if np.any(zeros == 0):
        raise UnsupportedStructureError("zero at the origin")
    scale = _scale(g)
    if np.any(np.abs(np.abs(zeros) - 1.0) < EPS_CIRCLE):
        raise BoundaryZeroError("zero on the unit circle")
    exc = excused_mask(zeros, g.poles, scale)
    check_simple_zeros(zeros, exc, scale)
    a_inf, a = pf_coefficients(g.lead, zeros, g.poles, g.pole_mult, float(q), exc)
    return PartialFractions(a_inf=a_inf, a=a, zeros=zeros, excused=exc)


def _inner_circles(g: RationalMap, n_nodes: int):
    """Small circles around the singularities of ``f* g`` inside the disk."""
    inner = [0j] + [complex(reflect(p)) for p, o in zip(g.poles, g.pole_mult) if o >= 2]
    outer = list(g.poles)
    unit = np.exp(2j * np.pi * np.arange(n_nodes) / n_nodes)
    for i, c in enumerate(inner):
        others = [abs(c - x) for j, x in enumerate(inner) if j != i] + [abs(c - x) for x in outer]
        r = 0.45 * min(others) if others else 0.5
        r = min(r, 0.9 * (1.0 - abs(c)))
        yield c, c + r * unit


def disk_residue_sum(g: RationalMap, weight, n_nodes: int = 96, strict: bool = True):
    """Sum of residues inside the disk of ``weight(zeta, f(zeta)) f*(zeta) g(zeta)``.

    ``weight`` must be holomorphic in the disk and may return an array with a
    leading axis, one entry per test function.
    """
    if strict and not g.is_residue_free():
        raise UnsupportedStructureError("residue functional needs a residue-free map")
    F = Primitive(g, drop_logs=not strict)
    total = 0.0
    for c, z in _inner_circles(g, n_nodes):
        fz = F(z)
        base = np.conj(F(1.0 / np.conj(z))) * g(z) * (z - c)
        total = total + np.mean(np.asarray(weight(z, fz)) * base, axis=-1)
    return total


def residue_moments(g: RationalMap, kmax: int, n_nodes: int = 96, strict: bool = True) -> NDArray:
    """Moments ``M_k = (1/2 pi i) oint f^k f* g`` for ``k = 0..kmax`` by residues.

    The integrand's singularities inside the disk are the origin and the
    reflections of poles of order two or more; each is enclosed by a small
    circle. Requires a residue-free map so that the primitive is single valued;
    with ``strict=False`` logarithmic terms are dropped instead, which keeps the
    functional smooth for a solver whose equations force the residues to zero.
    """
    ks = np.arange(kmax + 1)[:, None]
    return np.asarray(disk_residue_sum(g, lambda z, fz: fz[None, :] ** ks, n_nodes, strict), dtype=complex)
