"""Partial balayage on a uniform grid through the discrete obstacle problem.

``Bal(mu, lam)`` is computed from the smallest potential ``u >= 0`` with
``mu + lap(u) <= lam``, solved by projected SOR on the cell-centred 5-point
Laplacian with zero values beyond the grid. The swept density is
``mu + lap(u)`` and the saturated set is ``{u > 0} | {mu >= lam}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .dynamics import PGState
from .errors import GridTooSmallError, IterationLimitError, OutOfRangeError, PreconditionError
from .rational import RationalMap

OMEGA = 1.8
EPS_U = 1e-12
COMP_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform cell grid; ``(x0, y0)`` is the lower-left corner and values sit at cell centres."""

    x0: float
    y0: float
    h: float
    nx: int
    ny: int

    @classmethod
    def centered(cls, half_width: float, h: float, center: complex = 0j, half_height: float | None = None) -> "Grid":
        """Grid covering ``center +- half_width`` whose central cell is centred on ``center``."""
        hh = half_width if half_height is None else half_height
        nx = 2 * int(math.ceil(half_width / h - 1e-9)) + 1
        ny = 2 * int(math.ceil(hh / h - 1e-9)) + 1
        return cls(center.real - 0.5 * nx * h, center.imag - 0.5 * ny * h, h, nx, ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def axes(self) -> tuple[NDArray, NDArray]:
        return (self.x0 + (np.arange(self.nx) + 0.5) * self.h,
                self.y0 + (np.arange(self.ny) + 0.5) * self.h)

    def centers(self) -> NDArray:
        """Complex cell centres, shape ``(nx, ny)``."""
        x, y = self.axes()
        return x[:, None] + 1j * y[None, :]

    def locate(self, z) -> tuple[NDArray, NDArray]:
        """Integer cell indices containing the points ``z`` (may be out of range)."""
        z = np.asarray(z, dtype=complex)
        return (np.floor((z.real - self.x0) / self.h).astype(np.int64),
                np.floor((z.imag - self.y0) / self.h).astype(np.int64))

    def contains(self, i, j) -> NDArray:
        return (i >= 0) & (i < self.nx) & (j >= 0) & (j < self.ny)

    def to_record(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "h": self.h, "nx": self.nx, "ny": self.ny}


@dataclass
class GridField:
    """Values on a grid: a density with respect to area, a potential, or a 0/1 mask."""

    grid: Grid
    values: NDArray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "GridField":
        return cls(grid, np.full(grid.shape, float(value)))

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_area)

    def sample(self, z) -> NDArray:
        """Nearest-cell lookup; points off the grid read as 0."""
        i, j = self.grid.locate(z)
        ok = self.grid.contains(i, j)
        out = np.zeros(np.shape(z), dtype=float)
        out[ok] = self.values[i[ok], j[ok]]
        return out


def point_mass(grid: Grid, z: complex, mass: float) -> GridField:
    """Dirac mass deposited entirely in the cell containing ``z``."""
    i, j = grid.locate(z)
    if not grid.contains(i, j):
        raise OutOfRangeError("point mass off the grid")
    vals = np.zeros(grid.shape)
    vals[int(i), int(j)] = mass / grid.cell_area
    return GridField(grid, vals)


def disk_indicator(grid: Grid, radius: float = 1.0, center: complex = 0j) -> GridField:
    return GridField(grid, (np.abs(grid.centers() - center) < radius).astype(float))


@dataclass
class BalayageOutcome:
    result: GridField
    u: GridField
    saturated: GridField
    residual: float
    iterations: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def saturated_area(self) -> float:
        return float(np.count_nonzero(self.saturated.values) * self.result.grid.cell_area)


@njit(cache=True)
def _complementarity(p, rhs):
    """``max |min(u, h^2 (lam - mu) - h^2 lap u)|`` on the padded potential ``p``."""
    nx, ny = rhs.shape
    worst = 0.0
    for i in range(nx):
        for j in range(ny):
            uc = p[i + 1, j + 1]
            w = 4.0 * uc - p[i, j + 1] - p[i + 2, j + 1] - p[i + 1, j] - p[i + 1, j + 2] - rhs[i, j]
            r = abs(min(uc, w))
            if r > worst:
                worst = r
    return worst


@njit(cache=True)
def _sweeps(p, rhs, omega, i0, i1, j0, j1, count):
    c = 0.25 * omega
    for _ in range(count):
        for i in range(i0, i1):
            row, up, dn = p[i + 1], p[i], p[i + 2]
            r = rhs[i]
            left = row[j0]
            for j in range(j0, j1):
                # only ``left`` depends on the previous update in this row
                a = (1.0 - omega) * row[j + 1] + c * (up[j + 1] + dn[j + 1] + row[j + 2] + r[j])
                v = a + c * left
                left = v if v > 0.0 else 0.0
                row[j + 1] = left


def _active_box(p: NDArray, rhs: NDArray, margin: int) -> tuple[int, int, int, int]:
    nx, ny = rhs.shape
    live = (p[1:-1, 1:-1] > 0) | (rhs > 0)
    ii, jj = np.nonzero(live)
    if ii.size == 0:
        return 0, 0, 0, 0
    return (max(ii.min() - margin, 0), min(ii.max() + margin + 1, nx),
            max(jj.min() - margin, 0), min(jj.max() + margin + 1, ny))


def _psor(u: NDArray, rhs: NDArray, omega: float, tol: float, max_iter: int,
          check_every: int = 20) -> tuple[int, float]:
    """Projected SOR in lexicographic order, ``rhs = h^2 (mu - lam)``.

    Sweeps are confined to a box around the cells where ``u > 0`` or
    ``mu > lam``; the box grows whenever the positive set nears its edge.
    Outside it ``u`` stays 0, which the full-grid residual check confirms.
    """
    nx, ny = rhs.shape
    p = np.zeros((nx + 2, ny + 2))
    p[1:-1, 1:-1] = u
    margin = 8
    box = _active_box(p, rhs, margin)
    it = 0
    res = _complementarity(p, rhs)
    while it < max_iter and res >= tol:
        n = min(check_every, max_iter - it)
        _sweeps(p, rhs, omega, box[0], box[1], box[2], box[3], n)
        it += n
        new = _active_box(p, rhs, margin)
        if new != box:
            box = (min(box[0], new[0]), max(box[1], new[1]), min(box[2], new[2]), max(box[3], new[3]))
        res = _complementarity(p, rhs)
    u[...] = p[1:-1, 1:-1]
    return it, res


def discrete_laplacian(u: NDArray, h: float) -> NDArray:
    """Five-point Laplacian with zero values beyond the grid."""
    p = np.pad(u, 1)
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * u) / (h * h)


def bal(mu: GridField, lam: GridField, tol: float | None = None, omega: float = OMEGA,
        max_iter: int | None = None, u0: NDArray | None = None) -> BalayageOutcome:
    """Partial balayage of ``mu`` to ``lam``.

    ``tol`` bounds ``max |min(u, h^2 (lam - mu - lap u))|`` and defaults to
    ``1e-10 * max(lam)``, i.e. a density-level tolerance of ``1e-10 max(lam) / h^2``.
    """
    grid = mu.grid
    if lam.grid != grid:
        raise PreconditionError("mu and lambda must share a grid")
    lv = np.asarray(lam.values, dtype=float)
    mv = np.asarray(mu.values, dtype=float)
    ring = np.concatenate([lv[0], lv[-1], lv[:, 0], lv[:, -1]])
    if np.any(ring <= 0):
        raise PreconditionError("lambda must be positive near the grid boundary")
    h2 = grid.cell_area
    lam_max = float(np.max(lv))
    if tol is None:
        tol = COMP_TOL * lam_max
    if max_iter is None:
        max_iter = 200 * max(grid.nx, grid.ny)
    rhs = h2 * (mv - lv)
    u = np.zeros(grid.shape) if u0 is None else np.array(u0, dtype=float)
    it, res = _psor(u, rhs, float(omega), float(tol), int(max_iter), 20)
    ring_u = max(np.max(u[0]), np.max(u[-1]), np.max(u[:, 0]), np.max(u[:, -1]))
    if ring_u > EPS_U:
        ext = 2 * max(grid.nx, grid.ny) * grid.h
        raise GridTooSmallError("swept mass reached the grid boundary", suggested_extent=ext)
    if res >= tol:
        raise IterationLimitError(f"PSOR stopped at residual {res:.3g} after {it} sweeps")
    result = mv + discrete_laplacian(u, grid.h)
    sat = (u > EPS_U) | (mv >= lv)
    return BalayageOutcome(GridField(grid, result), GridField(grid, u),
                           GridField(grid, sat.astype(float)), float(res / max(lam_max, 1e-300)), int(it))


def weak_step(mask: GridField, lam: GridField, deltaQ: float, **kw) -> GridField:
    """One weak Hele-Shaw step: saturated set of ``Bal(2 pi dQ delta_0 + chi_mask lam, lam)``."""
    grid = mask.grid
    if deltaQ < 0:
        raise PreconditionError("deltaQ must be non-negative")
    i, j = grid.locate(0j)
    if not grid.contains(i, j) or not mask.values[int(i), int(j)]:
        raise PreconditionError("origin cell must lie in the mask")
    m = mask.values.astype(bool)
    if deltaQ == 0:
        return GridField(grid, m.astype(float))
    mu = point_mass(grid, 0j, 2 * math.pi * deltaQ)
    mu.values[m] += lam.values[m]
    out = bal(mu, lam, **kw)
    return GridField(grid, ((out.saturated.values > 0) | m).astype(float))


def weighted_blowup(g: RationalMap, Q: float, grid: Grid, **kw) -> BalayageOutcome:
    """Grow the unit disk by injecting ``Q`` against the weight ``|g|^2``.

    The disk is pre-saturated by including it in the source at density
    ``|g|^2``; the saturated set is the grown domain.
    """
    if g.poles.size:
        xs, ys = grid.axes()
        lo = complex(xs[0], ys[0]) - 10 * grid.h
        hi = complex(xs[-1], ys[-1]) + 10 * grid.h
        inside = (g.poles.real > lo.real) & (g.poles.real < hi.real) & (g.poles.imag > lo.imag) & (g.poles.imag < hi.imag)
        if np.any(inside):
            raise PreconditionError("poles of g lie on or near the grid")
    z = grid.centers()
    lam = np.abs(g(z)) ** 2
    disk = np.abs(z) < 1.0
    mu = point_mass(grid, 0j, 2 * math.pi * Q)
    mu.values[disk] += lam[disk]
    out = bal(mu, GridField(grid, lam), **kw)
    sat = out.saturated.values > 0
    h2 = grid.cell_area
    added_sat = float(np.sum(lam[sat & ~disk]) * h2)
    added_swept = float(np.sum(out.result.values[~disk]) * h2)
    low = lam < 1e-6 * np.max(lam)
    out.diagnostics = {
        "target_mass": 2 * math.pi * Q,
        "added_mass": added_swept,
        "added_mass_saturated_cells": added_sat,
        "low_weight_cells": int(np.count_nonzero(low & ~disk)),
    }
    return out


def star_shaped(outcome: BalayageOutcome, n_rays: int = 720) -> tuple[bool, float]:
    """Ray test for star-shapedness of the saturated set about the origin.

    Each ray is sampled at half-cell spacing; it must start inside and, after
    leaving, never re-enter more than 1.5 cells beyond its exit point (closer
    re-entries are staircase artefacts of the cell discretisation). Also
    returns the largest centred-difference value of ``r du/dr`` outside the
    unit disk.
    """
    mask = outcome.saturated
    grid = mask.grid
    h = grid.h
    sat = mask.values > 0
    z = grid.centers()
    i0, j0 = grid.locate(0j)
    if not grid.contains(i0, j0) or not sat[int(i0), int(j0)]:
        return False, float("nan")
    rmax = float(np.max(np.abs(z[sat]))) + 2 * h
    r = np.arange(0.0, rmax, 0.5 * h)
    theta = 2 * np.pi * np.arange(n_rays) / n_rays
    pts = r[None, :] * np.exp(1j * theta)[:, None]
    inside = mask.sample(pts) > 0
    geometric = True
    for k in range(n_rays):
        row = inside[k]
        out_idx = np.nonzero(~row)[0]
        if out_idx.size == 0:
            continue
        r_exit = r[out_idx[0]]
        again = np.nonzero(row & (r > r_exit + 1.5 * h))[0]
        if again.size:
            geometric = False
            break
    u = outcome.u.values
    p = np.pad(u, 1)
    ux = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * h)
    uy = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * h)
    v = z.real * ux + z.imag * uy
    outside = np.abs(z) > 1.0
    vmax = float(np.max(v[outside])) if np.any(outside) else float("nan")
    return geometric, vmax


# --- coverings and pushforward ------------------------------------------------

@dataclass(frozen=True)
class CoveringMap:
    """Analytic map with its derivative, used for pushforward and lifted weights."""

    name: str
    func: Callable
    deriv: Callable

    @classmethod
    def from_rational(cls, g: RationalMap) -> "CoveringMap":
        F = g.primitive()
        return cls("primitive", F, g)


def covering_map(tag: str, a: complex = 1.0) -> CoveringMap:
    """Named maps: ``identity``, ``square`` and ``square-plus-a``."""
    if tag == "identity":
        return CoveringMap(tag, lambda z: np.asarray(z, dtype=complex), lambda z: np.ones_like(np.asarray(z, dtype=complex)))
    if tag == "square":
        return CoveringMap(tag, lambda z: np.asarray(z) ** 2, lambda z: 2 * np.asarray(z))
    if tag == "square-plus-a":
        return CoveringMap(tag, lambda z: np.asarray(z) ** 2 + a, lambda z: 2 * np.asarray(z))
    raise ValueError(f"unknown map tag {tag!r}")


def _as_covering(m) -> CoveringMap:
    if isinstance(m, CoveringMap):
        return m
    if isinstance(m, RationalMap):
        return CoveringMap.from_rational(m)
    if isinstance(m, str):
        return covering_map(m)
    raise TypeError("expected a RationalMap, CoveringMap or map tag")


def deposit(points, masses, dst_grid: Grid) -> GridField:
    """Bin point masses into the cells containing them; returns a density."""
    pts = np.asarray(points, dtype=complex).reshape(-1)
    ms = np.asarray(masses, dtype=float).reshape(-1)
    keep = ms != 0
    pts, ms = pts[keep], ms[keep]
    i, j = dst_grid.locate(pts)
    if not np.all(dst_grid.contains(i, j)):
        raise OutOfRangeError("mapped mass leaves the destination grid")
    flat = np.bincount(i * dst_grid.ny + j, weights=ms, minlength=dst_grid.nx * dst_grid.ny)
    return GridField(dst_grid, flat.reshape(dst_grid.shape) / dst_grid.cell_area)


def pushforward(src: GridField, mapping, dst_grid: Grid, sub: int = 4) -> GridField:
    """Image measure of ``src`` under ``mapping`` with ``sub x sub`` sub-cells per source cell."""
    cover = _as_covering(mapping)
    grid = src.grid
    ii, jj = np.nonzero(src.values)
    if ii.size == 0:
        return GridField(dst_grid, np.zeros(dst_grid.shape))
    offs = (np.arange(sub) + 0.5) / sub
    ox, oy = np.meshgrid(offs, offs, indexing="ij")
    base = (grid.x0 + ii * grid.h) + 1j * (grid.y0 + jj * grid.h)
    pts = base[:, None] + grid.h * (ox.reshape(-1) + 1j * oy.reshape(-1))[None, :]
    masses = np.repeat(src.values[ii, jj] * grid.cell_area / (sub * sub), sub * sub).reshape(pts.shape)
    return deposit(cover.func(pts), masses, dst_grid)


def counting_density(s: PGState, dst_grid: Grid, n_sub: int = 512) -> GridField:
    """Image of the area measure ``|g|^2 dm`` on the disk under ``f``.

    The disk is sampled on an ``n_sub x n_sub`` polar grid with exact
    annular-cell areas, so the total mass equals ``pi M_0`` up to the midpoint
    rule error.
    """
    edges = np.linspace(0.0, 1.0, n_sub + 1)
    rc = 0.5 * (edges[1:] + edges[:-1])
    areas = 0.5 * (edges[1:] ** 2 - edges[:-1] ** 2) * (2 * np.pi / n_sub)
    theta = 2 * np.pi * (np.arange(n_sub) + 0.5) / n_sub
    z = rc[:, None] * np.exp(1j * theta)[None, :]
    w = np.abs(s.g(z)) ** 2 * areas[:, None]
    return deposit(s.g.primitive()(z), w, dst_grid)


def lifted_weight(cover: CoveringMap, lam_dst, src_grid: Grid) -> GridField:
    """``|p'|^2 (lam o p)`` on the source grid; ``lam_dst`` is a GridField or a constant."""
    z = src_grid.centers()
    pz = cover.func(z)
    if isinstance(lam_dst, GridField):
        # beyond the destination grid lambda keeps its edge values
        gd = lam_dst.grid
        i, j = gd.locate(pz)
        lam = lam_dst.values[np.clip(i, 0, gd.nx - 1), np.clip(j, 0, gd.ny - 1)]
    else:
        lam = np.full(z.shape, float(lam_dst))
    return GridField(src_grid, np.abs(cover.deriv(z)) ** 2 * lam)


def compatibility_residual(mu_src: GridField, g_cover, lambda_dst: GridField, src_grid: Grid,
                           dst_grid: Grid, **kw) -> float:
    """L1 distance between ``Bal(p_* Bal(mu, lam~), lam)`` and ``Bal(p_* mu, lam)``."""
    cover = _as_covering(g_cover)
    if mu_src.grid != src_grid or lambda_dst.grid != dst_grid:
        raise PreconditionError("fields must live on the given grids")
    lam_src = lifted_weight(cover, lambda_dst, src_grid)
    inner = bal(mu_src, lam_src, **kw)
    lhs = bal(pushforward(inner.result, cover, dst_grid), lambda_dst, **kw)
    rhs = bal(pushforward(mu_src, cover, dst_grid), lambda_dst, **kw)
    return float(np.sum(np.abs(lhs.result.values - rhs.result.values)) * dst_grid.cell_area)
