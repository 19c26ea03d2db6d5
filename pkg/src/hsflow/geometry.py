"""Two-chart discretization of the Riemann sphere.

The sphere is covered by the chart ``z`` and the chart ``w = 1/z``; each
chart is a square grid on ``[-R, R]^2`` whose nodes outside the disc
``|coord| <= R`` are inactive.  Nodes on the rim of a chart disc take their
values by bilinear interpolation from the other chart, which couples the
two grids into one composite discretization (alternating-Schwarz style).

Normalization: ``dd^c = (i / 2 pi) d dbar``, so a grid cell carries the
mass ``(1 / 4 pi) * Laplacian_h(u) * h^2``, ``omega_FS`` has total mass 1
and ``dd^c log|z|^2`` is the unit point mass at the origin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from . import _kernels as K

log = logging.getLogger(__name__)

CHARTS = ("Z", "W")
FOUR_PI = 4.0 * np.pi


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve hits its sweep cap."""

    def __init__(self, message: str, residual: float, sweeps: int):
        super().__init__(f"{message} (residual {residual:.3e} after {sweeps} sweeps)")
        self.residual = residual
        self.sweeps = sweeps


class ChartError(ValueError):
    pass


def other(chart: str) -> str:
    return "W" if chart == "Z" else "Z"


def fs_local_potential(coord: np.ndarray) -> np.ndarray:
    """Local Fubini-Study potential ``log(1 + |c|^2)`` in either chart."""
    return np.log1p(np.abs(coord) ** 2)


@dataclass(frozen=True)
class ChartGrid:
    chart: str
    n: int
    extent: float = 1.5

    def __post_init__(self):
        if self.chart not in CHARTS:
            raise ChartError(f"unknown chart {self.chart!r}")
        if self.n < 16:
            raise ChartError(f"need n >= 16 nodes per side, got {self.n}")
        if self.n % 2 == 0:
            raise ChartError(f"n must be odd so the chart centre is a node, got {self.n}")
        if self.extent < 1.0:
            raise ChartError("extent must be at least 1 so the charts overlap")

    @property
    def h(self) -> float:
        return 2.0 * self.extent / (self.n - 1)

    @property
    def center(self) -> int:
        return (self.n - 1) // 2

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.extent + self.h * np.arange(self.n)

    @cached_property
    def coords(self) -> np.ndarray:
        x = self.axis
        return x[None, :] + 1j * x[:, None]

    @cached_property
    def active(self) -> np.ndarray:
        return np.abs(self.coords) <= self.extent * (1 + 1e-12)

    @cached_property
    def interior(self) -> np.ndarray:
        a = self.active
        inner = np.zeros_like(a)
        inner[1:-1, 1:-1] = (a[1:-1, 1:-1] & a[1:-1, 2:] & a[1:-1, :-2]
                             & a[2:, 1:-1] & a[:-2, 1:-1])
        return inner

    @cached_property
    def rim(self) -> np.ndarray:
        return self.active & ~self.interior

    @cached_property
    def owned(self) -> np.ndarray:
        """Nodes this chart owns for integration: ``|z| <= 1`` resp. ``|z| > 1``."""
        r = np.abs(self.coords)
        return (r <= 1.0) if self.chart == "Z" else (r < 1.0)

    @cached_property
    def fs_potential(self) -> np.ndarray:
        return fs_local_potential(self.coords)

    def to_sphere(self) -> np.ndarray:
        """Z-coordinate of every node (``inf`` for the pole of the W chart)."""
        c = self.coords
        if self.chart == "Z":
            return c
        with np.errstate(divide="ignore", invalid="ignore"):
            z = 1.0 / c
        z[self.center, self.center] = np.inf
        return z

    def locate(self, coord: np.ndarray):
        """Bilinear stencil for chart coordinates; returns (i0, j0, fy, fx, ok)."""
        coord = np.asarray(coord, dtype=complex)
        gx = (coord.real + self.extent) / self.h
        gy = (coord.imag + self.extent) / self.h
        fin = np.isfinite(gx) & np.isfinite(gy)
        j0 = np.floor(np.where(fin, gx, -1.0)).astype(np.int64)
        i0 = np.floor(np.where(fin, gy, -1.0)).astype(np.int64)
        ok = fin & (j0 >= 0) & (i0 >= 0) & (j0 < self.n - 1) & (i0 < self.n - 1) & np.isfinite(gx) & np.isfinite(gy)
        j0 = np.clip(j0, 0, self.n - 2)
        i0 = np.clip(i0, 0, self.n - 2)
        fx = gx - j0
        fy = gy - i0
        a = self.active
        ok &= a[i0, j0] & a[i0, j0 + 1] & a[i0 + 1, j0] & a[i0 + 1, j0 + 1]
        return i0, j0, fy, fx, ok


class Atlas:
    """The pair of charts covering the sphere plus their coupling stencils."""

    def __init__(self, n: int, extent: float = 1.5):
        if n % 2 == 0:
            # the origin (and infinity) must be grid nodes
            n += 1
        self.n = n
        self.extent = float(extent)
        self.grids = {c: ChartGrid(c, n, self.extent) for c in CHARTS}

    def __repr__(self):
        return f"Atlas(n={self.n}, extent={self.extent})"

    def __eq__(self, other_atlas):
        return isinstance(other_atlas, Atlas) and (self.n, self.extent) == (other_atlas.n, other_atlas.extent)

    def __hash__(self):
        return hash((self.n, self.extent))

    def __getitem__(self, chart: str) -> ChartGrid:
        return self.grids[chart]

    @property
    def h(self) -> float:
        return self.grids["Z"].h

    @cached_property
    def stencils(self) -> dict:
        """Interpolation stencils for the rim nodes of each chart."""
        out = {}
        for a in CHARTS:
            ga, gb = self.grids[a], self.grids[other(a)]
            bi, bj = np.nonzero(ga.rim)
            image = 1.0 / ga.coords[bi, bj]
            i0, j0, fy, fx, ok = gb.locate(image)
            if not ok.all():
                bad = image[~ok][0]
                raise ChartError(f"rim node of chart {a} maps outside chart {other(a)} at {bad}")
            si = np.stack([i0, i0, i0 + 1, i0 + 1], axis=1)
            sj = np.stack([j0, j0 + 1, j0, j0 + 1], axis=1)
            w = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1)
            out[a] = (bi, bj, np.ascontiguousarray(si), np.ascontiguousarray(sj), np.ascontiguousarray(w))
        return out

    def base_kind(self, chart: str) -> np.ndarray:
        g = self.grids[chart]
        kind = np.full((self.n, self.n), K.INACTIVE, dtype=np.int8)
        kind[g.interior] = K.FREE
        kind[g.rim] = K.INTERP
        return kind

    def owner_of(self, z: np.ndarray):
        """Split sphere points into (Z-chart coords, W-chart coords) by ownership."""
        z = np.asarray(z, dtype=complex)
        in_z = np.abs(z) <= 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(in_z, 0.0, 1.0 / np.where(in_z, 1.0, z))
        w = np.where(np.isinf(z), 0.0, w)
        return in_z, z, w

    def zeros(self) -> dict:
        return {c: np.zeros((self.n, self.n)) for c in CHARTS}


# ---------------------------------------------------------------------------
# fields


@dataclass
class ChartField:
    """Samples of one object on both charts.

    ``fs_weight = k`` means each chart stores ``F + k * log(1 + |coord|^2)``
    for a global function ``F``: ``k = 0`` for functions on P^1, ``k = 1``
    for local potentials of ``omega_FS + dd^c F``.  Inactive nodes hold NaN.
    """

    atlas: Atlas
    z: np.ndarray
    w: np.ndarray
    fs_weight: float = 0.0
    name: str = ""
    time: Optional[float] = None

    def __getitem__(self, chart: str) -> np.ndarray:
        return self.z if chart == "Z" else self.w

    def charts(self):
        return (("Z", self.z), ("W", self.w))

    @classmethod
    def from_callables(cls, atlas: Atlas, fz: Callable, fw: Callable, *, fs_weight=0.0, name=""):
        vals = {}
        for c, f in (("Z", fz), ("W", fw)):
            g = atlas[c]
            v = np.full((atlas.n, atlas.n), np.nan)
            v[g.active] = f(g.coords[g.active])
            vals[c] = v
        return cls(atlas, vals["Z"], vals["W"], fs_weight=fs_weight, name=name)

    @classmethod
    def constant(cls, atlas: Atlas, value: float, name=""):
        return cls.from_callables(atlas, lambda z: np.full(z.shape, float(value)),
                                  lambda w: np.full(w.shape, float(value)), name=name)

    def global_part(self) -> "ChartField":
        """Strip the local FS potentials, leaving the global function ``F``."""
        if self.fs_weight == 0:
            return self
        k = self.fs_weight
        return replace(self, z=self.z - k * self.atlas["Z"].fs_potential,
                       w=self.w - k * self.atlas["W"].fs_potential, fs_weight=0.0)

    def with_fs_weight(self, k: float) -> "ChartField":
        g = self.global_part()
        return replace(g, z=g.z + k * self.atlas["Z"].fs_potential,
                       w=g.w + k * self.atlas["W"].fs_potential, fs_weight=float(k))

    def __add__(self, other_field):
        if isinstance(other_field, ChartField):
            return replace(self, z=self.z + other_field.z, w=self.w + other_field.w,
                           fs_weight=self.fs_weight + other_field.fs_weight)
        return replace(self, z=self.z + other_field, w=self.w + other_field)

    def __sub__(self, other_field):
        if isinstance(other_field, ChartField):
            return replace(self, z=self.z - other_field.z, w=self.w - other_field.w,
                           fs_weight=self.fs_weight - other_field.fs_weight)
        return replace(self, z=self.z - other_field, w=self.w - other_field)

    def scaled(self, a: float) -> "ChartField":
        return replace(self, z=a * self.z, w=a * self.w, fs_weight=a * self.fs_weight)

    def copy(self) -> "ChartField":
        return replace(self, z=self.z.copy(), w=self.w.copy())

    def at(self, z) -> np.ndarray:
        """Evaluate the global part at sphere points by bilinear interpolation."""
        g = self.global_part()
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        in_z, zz, ww = self.atlas.owner_of(z)
        out = np.empty(z.shape)
        for chart, sel, pts, vals in (("Z", in_z, zz, g.z), ("W", ~in_z, ww, g.w)):
            if sel.any():
                out[sel] = bilinear(self.atlas[chart], vals, pts[sel])
        return out

    def max_abs(self) -> float:
        return float(max(np.nanmax(np.abs(self.z)), np.nanmax(np.abs(self.w))))

    def oscillation(self) -> float:
        g = self.global_part()
        hi = max(np.nanmax(g.z), np.nanmax(g.w))
        lo = min(np.nanmin(g.z), np.nanmin(g.w))
        return float(hi - lo)


def bilinear(grid: ChartGrid, values: np.ndarray, coord: np.ndarray) -> np.ndarray:
    i0, j0, fy, fx, ok = grid.locate(coord)
    if not np.all(ok):
        bad = np.asarray(coord)[~ok].ravel()[0]
        raise ChartError(f"point {bad} outside the active region of chart {grid.chart}")
    v = ((1 - fy) * (1 - fx) * values[i0, j0] + (1 - fy) * fx * values[i0, j0 + 1]
         + fy * (1 - fx) * values[i0 + 1, j0] + fy * fx * values[i0 + 1, j0 + 1])
    return v


@dataclass
class SphereMask:
    """A region of the sphere given on both charts."""

    atlas: Atlas
    z: np.ndarray
    w: np.ndarray

    def __getitem__(self, chart: str) -> np.ndarray:
        return self.z if chart == "Z" else self.w

    @classmethod
    def from_predicate(cls, atlas: Atlas, pred: Callable[[np.ndarray], np.ndarray]):
        """``pred`` receives sphere Z-coordinates (``inf`` at the pole)."""
        out = {}
        for c in CHARTS:
            g = atlas[c]
            with np.errstate(invalid="ignore"):
                m = np.zeros((atlas.n, atlas.n), dtype=bool)
                m[g.active] = pred(g.to_sphere()[g.active])
            out[c] = m
        return cls(atlas, out["Z"], out["W"])

    @classmethod
    def empty(cls, atlas: Atlas):
        return cls(atlas, np.zeros((atlas.n, atlas.n), bool), np.zeros((atlas.n, atlas.n), bool))

    def contains_origin(self) -> bool:
        c = self.atlas["Z"].center
        return bool(self.z[c, c])

    def __and__(self, o):
        return SphereMask(self.atlas, self.z & o.z, self.w & o.w)

    def __or__(self, o):
        return SphereMask(self.atlas, self.z | o.z, self.w | o.w)

    def __invert__(self):
        return SphereMask(self.atlas, ~self.z & self.atlas["Z"].active, ~self.w & self.atlas["W"].active)

    def issubset(self, o) -> bool:
        return bool(not (self.z & ~o.z).any() and not (self.w & ~o.w).any())

    def check_consistent(self):
        """Raise if the charts disagree on the overlap beyond one-cell jitter.

        A Z node contradicts the W chart only when all four W nodes of its
        bilinear stencil carry the opposite value.
        """
        gz, gw = self.atlas["Z"], self.atlas["W"]
        r = np.abs(gz.coords)
        band = gz.interior & (r > 1.0 / self.atlas.extent + 2 * gz.h) & (r < self.atlas.extent - 2 * gz.h)
        bi, bj = np.nonzero(band)
        i0, j0, _, _, ok = gw.locate(1.0 / gz.coords[bi, bj])
        corners = np.stack([self.w[i0, j0], self.w[i0, j0 + 1], self.w[i0 + 1, j0], self.w[i0 + 1, j0 + 1]], axis=1)
        zval = self.z[bi, bj]
        bad = ok & np.where(zval, ~corners.any(axis=1), corners.all(axis=1))
        if bad.any():
            k = np.argmax(bad)
            raise ChartError(f"mask disagrees across charts at Z node ({bi[k]}, {bj[k]}), "
                             f"z = {gz.coords[bi[k], bj[k]]:.4f}")

    def harmonized(self) -> "SphereMask":
        """Copy in which every non-owned node mirrors the owning chart.

        The value at a node that the other chart owns is the bilinear
        average of the owner's four stencil nodes at the image point,
        rounded at 1/2.  Owned nodes are unchanged, so integrals and
        component counts are unaffected while the overlap becomes
        consistent by construction.
        """
        out = {"Z": self.z.copy(), "W": self.w.copy()}
        # near the seam the owner's stencils touch its own foreign nodes,
        # so repeat until nothing changes
        for _ in range(8):
            changed = False
            for c in CHARTS:
                g, src = self.atlas[c], self.atlas[other(c)]
                bi, bj = np.nonzero(g.active & ~g.owned)
                i0, j0, fy, fx, ok = src.locate(1.0 / g.coords[bi, bj])
                s_ = out[other(c)].astype(float)
                val = ((1 - fy) * (1 - fx) * s_[i0, j0] + (1 - fy) * fx * s_[i0, j0 + 1]
                       + fy * (1 - fx) * s_[i0 + 1, j0] + fy * fx * s_[i0 + 1, j0 + 1]) >= 0.5
                old = out[c][bi[ok], bj[ok]]
                changed |= bool((old != val[ok]).any())
                out[c][bi[ok], bj[ok]] = val[ok]
            if not changed:
                break
        return SphereMask(self.atlas, out["Z"], out["W"])

    def count(self) -> int:
        return int(self.z[self.atlas["Z"].owned].sum() + self.w[self.atlas["W"].owned].sum())


@dataclass
class MeasureField:
    """Cell masses per chart plus an explicit point mass at the origin.

    Only interior nodes carry masses; rim cells are NaN and listed in
    ``flagged``.
    """

    atlas: Atlas
    z: np.ndarray
    w: np.ndarray
    point_mass: float = 0.0
    name: str = ""

    def __getitem__(self, chart: str) -> np.ndarray:
        return self.z if chart == "Z" else self.w

    @property
    def flagged(self) -> SphereMask:
        return SphereMask(self.atlas, self.atlas["Z"].rim.copy(), self.atlas["W"].rim.copy())

    def total(self) -> float:
        return integrate_measure(self, None)

    def __add__(self, o: "MeasureField"):
        return MeasureField(self.atlas, self.z + o.z, self.w + o.w, self.point_mass + o.point_mass)

    def __sub__(self, o: "MeasureField"):
        return MeasureField(self.atlas, self.z - o.z, self.w - o.w, self.point_mass - o.point_mass)

    def scaled(self, a: float):
        return MeasureField(self.atlas, a * self.z, a * self.w, a * self.point_mass, self.name)

    def times(self, density: ChartField) -> "MeasureField":
        """Multiply cell masses by a (global) density function."""
        d = density.global_part()
        return MeasureField(self.atlas, self.z * d.z, self.w * d.w, self.point_mass * float(d.at(0.0)[0]))


# ---------------------------------------------------------------------------
# operations


def chart_transfer(field: ChartField, target: str) -> ChartField:
    """Refill chart ``target`` from the other chart through ``w = 1/z``.

    Nodes whose image lies outside the source chart keep the target's own
    data; if there is none there, the transfer fails.
    """
    atlas = field.atlas
    src = other(target)
    gt, gs = atlas[target], atlas[src]
    k = field.fs_weight
    out = field[target].copy()
    idx = np.nonzero(gt.active)
    coords = gt.coords[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        image = np.where(coords == 0, np.inf, 1.0 / np.where(coords == 0, 1.0, coords))
    i0, j0, fy, fx, ok = gs.locate(image)
    src_vals = field[src]
    with np.errstate(invalid="ignore"):
        vals = ((1 - fy) * (1 - fx) * src_vals[i0, j0] + (1 - fy) * fx * src_vals[i0, j0 + 1]
                + fy * (1 - fx) * src_vals[i0 + 1, j0] + fy * fx * src_vals[i0 + 1, j0 + 1])
    ok &= np.isfinite(vals)
    if k:
        # log(1 + |c|^2) - log(1 + |1/c|^2) = log|c|^2
        with np.errstate(divide="ignore"):
            vals = vals + k * np.log(np.abs(coords) ** 2)
    new = out[idx]
    new[ok] = vals[ok]
    missing = ~ok & ~np.isfinite(new)
    if missing.any():
        bad = coords[missing][0]
        raise ChartError(f"chart {target} node at {bad} maps outside both active regions")
    out[idx] = new
    return replace(field, z=out if target == "Z" else field.z, w=out if target == "W" else field.w)


def integrate_measure(m: MeasureField, region: Optional[SphereMask]) -> float:
    """Mass of ``region`` (``None`` = whole sphere) under ownership |z| <= 1 -> Z."""
    atlas = m.atlas
    total = 0.0
    for c in CHARTS:
        g = atlas[c]
        sel = g.owned & g.interior
        if region is not None:
            sel = sel & region[c]
        total += float(np.nansum(m[c][sel]))
    if region is None:
        total += m.point_mass
    else:
        if not region.z.any() and not region.w.any():
            return 0.0
        region.check_consistent()
        if region.contains_origin():
            total += m.point_mass
    return total


def discrete_ddc_mass(u: ChartField) -> MeasureField:
    """Per-cell mass ``(1/4pi) * (5-point Laplacian) * h^2`` on both charts."""
    out = {}
    for c, v in u.charts():
        g = u.atlas[c]
        m = np.full(v.shape, np.nan)
        lap = v[1:-1, 2:] + v[1:-1, :-2] + v[2:, 1:-1] + v[:-2, 1:-1] - 4.0 * v[1:-1, 1:-1]
        inner = g.interior[1:-1, 1:-1]
        core = m[1:-1, 1:-1]
        core[inner] = lap[inner] / FOUR_PI
        out[c] = m
    return MeasureField(u.atlas, out["Z"], out["W"], 0.0, name=f"ddc({u.name})")


def fs_measure(atlas: Atlas) -> MeasureField:
    """Discrete ``omega_FS`` (dd^c of the local FS potentials)."""
    m = discrete_ddc_mass(ChartField(atlas, atlas["Z"].fs_potential, atlas["W"].fs_potential, fs_weight=1.0))
    m.name = "omega_FS"
    return m


def solve_poisson(rhs: MeasureField, *, tol: float = 1e-8, mass_tol: float = 1e-6,
                  max_corrections: int = 4) -> ChartField:
    """Find ``phi`` with ``omega_FS + dd^c phi = rhs`` and ``phi(0) = 0``.

    ``rhs`` must have the same total mass as the discrete ``omega_FS``.
    The equation is imposed on every free node of both charts; the
    origin node is pinned, which fixes the additive constant.  The two-chart
    scheme is not exactly mass conservative, so the pinned node would
    absorb a small defect; it is instead spread over ``rhs`` in proportion
    to its density and the solve repeated until the origin cell matches.
    """
    from .solver import CompositeSystem

    atlas = rhs.atlas
    fs = fs_measure(atlas)
    defect = rhs.total() - fs.total()
    if abs(defect) > mass_tol:
        raise ValueError(f"right-hand side mass {rhs.total():.8f} differs from omega_FS mass "
                         f"{fs.total():.8f} by {defect:.2e}; the equation has no solution on P^1")
    if rhs.point_mass:
        raise ValueError("point masses are not supported by solve_poisson")
    ctr = atlas["Z"].center
    dens = {c: np.nan_to_num(rhs[c], nan=0.0) for c in CHARTS}
    total = rhs.total()
    scale = max(1.0, float(np.nanmax(np.abs(np.concatenate([rhs.z[np.isfinite(rhs.z)], rhs.w[np.isfinite(rhs.w)]])))) * FOUR_PI)
    shift = 0.0
    for _ in range(max_corrections + 1):
        V, O, kind, off, src = {}, {}, {}, {}, {}
        for c in CHARTS:
            g = atlas[c]
            kind[c] = atlas.base_kind(c)
            off[c] = np.where(g.active, g.fs_potential, 0.0)
            V[c] = off[c].copy()
            O[c] = np.full((atlas.n, atlas.n), np.inf)
            src[c] = -FOUR_PI * dens[c] * (1.0 + shift / total)
        kind["Z"][ctr, ctr] = K.FIXED
        sys_ = CompositeSystem(atlas, V, O, kind, off, rhs=src)
        sys_.solve(tol * scale)
        phi = sys_.field(name="phi_f")
        got = discrete_ddc_mass(phi.with_fs_weight(1.0)).z[ctr, ctr]
        want = dens["Z"][ctr, ctr] * (1.0 + shift / total)
        miss = got - want
        log.debug("poisson: %d cycles, residual %.2e, origin defect %.2e", sys_.cycles, sys_.residual, miss)
        if abs(miss) <= tol * max(1.0, abs(want)) * 10:
            break
        shift += miss
    return phi
