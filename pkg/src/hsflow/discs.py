"""Harmonic discs: the center disc, boundary-constant discs and Riemann discs.

For a simply connected flow domain ``Omega_t`` containing the origin the
Riemann map ``f: D -> Omega_t`` with ``f(0) = 0``, ``f'(0) > 0`` gives a
harmonic disc along which ``H = t - 1``.  It is represented through its
inverse ``F = f^{-1} = z exp(-v - i v~)``, where ``G = v - log|z|`` is the
Green's function of ``Omega_t`` with pole at the origin.  The disc identity

    Phi~(z, s) = psi_t(z) - (1 - t) s,      s = -log|F(z)|^2 = 2 G(z),

is then checked at domain nodes, which needs no inversion of ``F``.

``G`` is computed on both charts with the composite multigrid solver.  In
the Z chart the unknown is the smooth function ``v = G + log|z|``; in the
W chart (which does not contain the pole) it is ``G`` itself.  Boundary
nodes use Shortley-Weller weights when the boundary position between grid
nodes is known, which keeps the map second-order accurate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import _kernels as K
from .geometry import CHARTS, Atlas, ChartField, SphereMask
from .solver import CompositeSystem
from .topology import component_count

GREEN_RTOL = 1e-10
MIN_FRACTION = 1e-2

# neighbour offsets in the weight layout: east, west, north, south
_DIRS = ((0, 1), (0, -1), (1, 0), (-1, 0))


class DomainError(ValueError):
    """The domain does not admit the requested Riemann map."""


@dataclass
class ConformalMap:
    """Samples of ``F = f^{-1}: Omega_t -> D`` with ``F(0) = 0``, ``F'(0) > 0``.

    ``modulus`` holds ``|F| = exp(-G)`` on both charts (NaN off the domain).
    ``argument`` holds ``arg F`` on the Z chart only; the harmonic conjugate
    is integrated there, so the W chart carries NaN.
    """

    mask: SphereMask
    green: ChartField
    modulus: ChartField
    argument: ChartField
    cr_residual: float
    boundary_error: float
    boundary_samples: np.ndarray
    cycles: int = 0
    log_ratio: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def atlas(self) -> Atlas:
        return self.mask.atlas

    def values_z(self) -> np.ndarray:
        """Complex ``F`` on the Z chart (NaN where unavailable)."""
        return self.modulus.z * np.exp(1j * self.argument.z)

    def derivative_at_origin(self) -> complex:
        """``F'(0) = exp(-v(0))``; real and positive by construction."""
        c = self.atlas["Z"].center
        return complex(np.exp(self.log_ratio[c, c]))

    def at(self, z) -> np.ndarray:
        """``F`` at Z-chart points.

        ``log(F / z) = -v - i v~`` is smooth, so it is interpolated
        bilinearly instead of ``F`` itself.
        """
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        g = self.atlas["Z"]
        i0, j0, fy, fx, ok = g.locate(z)
        q = self.log_ratio
        val = ((1 - fy) * (1 - fx) * q[i0, j0] + (1 - fy) * fx * q[i0, j0 + 1]
               + fy * (1 - fx) * q[i0 + 1, j0] + fy * fx * q[i0 + 1, j0 + 1])
        out = z * np.exp(val)
        out[~ok] = np.nan
        return out


def disc_level(atlas: Atlas, radius: float) -> ChartField:
    """Signed level function ``radius - |z|`` of the disc ``|z| < radius``."""
    with np.errstate(divide="ignore"):
        return ChartField.from_callables(atlas, lambda z: radius - np.abs(z),
                                         lambda w: radius - 1.0 / np.abs(w), name="level")


def gap_level(phi: ChartField, psi: ChartField) -> ChartField:
    """``sqrt(phi - psi)`` as a level function of a flow domain.

    The envelope leaves the obstacle quadratically across the free
    boundary, so the square root of the gap vanishes linearly there; it is
    zero (not negative) outside, which ``riemann_map`` handles by
    extrapolating from the inside.
    """
    out = {}
    for c in CHARTS:
        with np.errstate(invalid="ignore"):
            d = phi[c] - psi[c]
        d = np.where(np.isfinite(d), np.maximum(d, 0.0), np.inf)
        out[c] = np.sqrt(d)
    return ChartField(phi.atlas, out["Z"], out["W"], name="level")


def _fractions(inside: np.ndarray, level: Optional[np.ndarray]):
    """Boundary distance (in cells) towards each neighbour; 1 where no boundary is crossed."""
    n = inside.shape[0]
    theta = np.ones((4, n, n))
    if level is None:
        return theta
    pad_in = np.pad(inside, 2)
    pad_l = np.pad(np.nan_to_num(level, nan=0.0, posinf=1e300), 2)
    for d, (di, dj) in enumerate(_DIRS):
        nb_in = pad_in[2 + di:n + 2 + di, 2 + dj:n + 2 + dj]
        nb_l = pad_l[2 + di:n + 2 + di, 2 + dj:n + 2 + dj]
        bk_in = pad_in[2 - di:n + 2 - di, 2 - dj:n + 2 - dj]
        bk_l = pad_l[2 - di:n + 2 - di, 2 - dj:n + 2 - dj]
        la = pad_l[2:n + 2, 2:n + 2]
        cross = inside & ~nb_in
        th = np.ones((n, n))
        with np.errstate(divide="ignore", invalid="ignore"):
            signed = la / (la - nb_l)
            extrap = la / (bk_l - la)
        use_signed = cross & (nb_l < 0)
        th[use_signed] = signed[use_signed]
        use_ext = cross & ~use_signed & bk_in & (bk_l > la)
        th[use_ext] = extrap[use_ext]
        theta[d] = np.clip(np.nan_to_num(th, nan=1.0), MIN_FRACTION, 1.0)
    return theta


def _weights(g, inside: np.ndarray, theta: np.ndarray, boundary_value) -> np.ndarray:
    """Shortley-Weller weights; boundary values go into the constant term."""
    n = inside.shape[0]
    te, tw, tn, ts = theta
    a = np.empty((4, n, n))
    a[0] = 2.0 / (te * (te + tw))
    a[1] = 2.0 / (tw * (te + tw))
    a[2] = 2.0 / (tn * (tn + ts))
    a[3] = 2.0 / (ts * (tn + ts))
    wts = np.zeros((n, n, 6))
    pad_in = np.pad(inside, 1)
    for d, (di, dj) in enumerate(_DIRS):
        nb_in = pad_in[1 + di:n + 1 + di, 1 + dj:n + 1 + dj]
        crossing = inside & ~nb_in
        wts[..., d] = np.where(crossing, 0.0, a[d])
        if boundary_value is not None:
            pts = g.coords + theta[d] * g.h * (dj + 1j * di)
            bv = np.where(crossing, boundary_value(pts), 0.0)
            wts[..., 5] += np.where(crossing, a[d] * bv, 0.0)
    wts[..., 4] = a.sum(axis=0)
    return wts


def riemann_map(mask: SphereMask, level: Optional[ChartField] = None, *, rtol: float = GREEN_RTOL,
                check_topology: bool = True) -> ConformalMap:
    """Inverse Riemann map ``F`` of a simply connected region containing the origin.

    ``level`` (positive inside) locates the boundary between grid nodes;
    without it the boundary is taken at the first outside node.
    """
    atlas = mask.atlas
    gz = atlas["Z"]
    ctr = gz.center
    if not mask.z[ctr, ctr]:
        raise DomainError("the origin is not in the domain")
    nb = mask.z[ctr - 1:ctr + 2, ctr - 1:ctr + 2]
    if not nb.all():
        raise DomainError("the origin is not an interior point of the domain")
    if check_topology:
        kd, kc = component_count(mask)
        if kd != 1 or kc != 1:
            raise DomainError(f"domain is not simply connected on the sphere "
                              f"({kd} components, complement has {kc})")
    V, O, kind, off, wts = {}, {}, {}, {}, {}
    for c in CHARTS:
        g = atlas[c]
        inside = mask[c] & g.active
        k = atlas.base_kind(c)
        k[g.active & ~inside] = K.FIXED
        kind[c] = k
        O[c] = np.full((atlas.n, atlas.n), np.inf)
        if c == "Z":
            with np.errstate(divide="ignore"):
                logr = np.log(np.abs(g.coords))
            logr[ctr, ctr] = 0.0
            off[c] = np.where(g.active, logr, 0.0)
            bval = lambda p: np.log(np.abs(np.where(p == 0, 1.0, p)))  # noqa: E731
        else:
            off[c] = np.zeros((atlas.n, atlas.n))
            bval = None
        # start from the boundary values (G = 0)
        V[c] = off[c].copy()
        theta = _fractions(inside, None if level is None else level[c])
        wts[c] = _weights(g, inside, theta, bval)
        if c == "Z":
            theta_z, bval_z = theta, bval
    sys_ = CompositeSystem(atlas, V, O, kind, off, weights=wts)
    sys_.solve_linear(rtol)
    v = {c: np.where(atlas[c].active, sys_.V[c], np.nan) for c in CHARTS}
    # G = v - log|z| in Z, G = V in W; infinite at the origin
    green = {}
    with np.errstate(divide="ignore"):
        green["Z"] = v["Z"] - np.where(gz.active, np.log(np.abs(gz.coords)), np.nan)
    green["W"] = v["W"]
    modulus = {}
    for c in CHARTS:
        inside = mask[c] & atlas[c].active
        with np.errstate(over="ignore"):
            modulus[c] = np.where(inside, np.exp(-green[c]), np.nan)
    modulus["Z"][ctr, ctr] = 0.0
    conj, cr = _conjugate(v["Z"], mask.z & gz.active, gz, theta_z, bval_z)
    arg = np.where(mask.z & gz.active, np.angle(gz.coords) - conj, np.nan)
    arg[ctr, ctr] = 0.0
    band = []
    for c in CHARTS:
        g = atlas[c]
        inside = mask[c] & g.active
        pad = np.pad(inside, 1, constant_values=True)
        edge = inside & ~(pad[1:-1, 2:] & pad[1:-1, :-2] & pad[2:, 1:-1] & pad[:-2, 1:-1]) & g.owned & g.interior
        band.append(np.abs(modulus[c][edge] - 1.0))
    band = np.concatenate(band)
    zi, zj = np.nonzero(mask.z & gz.owned & gz.interior
                        & ~(np.pad(mask.z, 1)[1:-1, 2:] & np.pad(mask.z, 1)[1:-1, :-2]
                            & np.pad(mask.z, 1)[2:, 1:-1] & np.pad(mask.z, 1)[:-2, 1:-1]))
    samples = np.stack([gz.coords[zi, zj], arg[zi, zj]], axis=1) if zi.size else np.zeros((0, 2), complex)
    fmap = ConformalMap(
        mask=mask,
        green=ChartField(atlas, green["Z"], green["W"], name="green"),
        modulus=ChartField(atlas, modulus["Z"], modulus["W"], name="abs_F"),
        argument=ChartField(atlas, arg, np.full((atlas.n, atlas.n), np.nan), name="arg_F"),
        cr_residual=cr,
        boundary_error=float(band.max()) if band.size else 0.0,
        boundary_samples=samples,
        cycles=sys_.cycles,
        log_ratio=np.where(mask.z & gz.active, -v["Z"] - 1j * conj, np.nan),
    )
    return fmap


def _gradient(v: np.ndarray, inside: np.ndarray, g, theta: np.ndarray, boundary_value):
    """``(v_x, v_y)`` with three-point differences that respect the boundary position.

    Next to the boundary the outside neighbour is replaced by the boundary
    point at distance ``theta * h`` carrying ``boundary_value`` there.
    """
    n = v.shape[0]
    h = g.h
    pad_v = np.pad(np.nan_to_num(v), 1, mode="edge")
    pad_in = np.pad(inside, 1)
    out = []
    for axis, (fwd, bwd) in ((1, (0, 1)), (0, (2, 3))):
        vals, dist = [], []
        for d in (fwd, bwd):
            di, dj = _DIRS[d]
            nb = pad_v[1 + di:n + 1 + di, 1 + dj:n + 1 + dj]
            nb_in = pad_in[1 + di:n + 1 + di, 1 + dj:n + 1 + dj]
            cross = inside & ~nb_in
            th = np.where(cross, theta[d], 1.0)
            if boundary_value is not None:
                bv = boundary_value(g.coords + th * h * (dj + 1j * di))
            else:
                bv = np.zeros((n, n))
            vals.append(np.where(cross, bv, nb))
            dist.append(th * h)
        (f2, f1), (b, a) = vals, dist
        f0 = np.nan_to_num(v)
        out.append((a * a * f2 - b * b * f1 + (b * b - a * a) * f0) / (a * b * (a + b)))
    return out[0], out[1]


def _conjugate(v: np.ndarray, inside: np.ndarray, g, theta: Optional[np.ndarray] = None,
               boundary_value=None):
    """Harmonic conjugate of ``v`` by path integration from the origin.

    ``v~_x = -v_y`` and ``v~_y = v_x`` are integrated with the trapezoidal
    rule along a shortest-path tree in which edges between core nodes (all
    four neighbours inside) are cheap, so the paths avoid the boundary
    layer where differences are least accurate.  Returns the conjugate and
    the largest discrete Cauchy-Riemann residual over cells whose stencils
    stay inside the domain.
    """
    n = v.shape[0]
    h = g.h
    if theta is None:
        theta = np.ones((4, n, n))
    vx, vy = _gradient(v, inside, g, theta, boundary_value)
    pad = np.pad(inside, 1)
    core = inside & pad[1:-1, 2:] & pad[1:-1, :-2] & pad[2:, 1:-1] & pad[:-2, 1:-1]
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, cost = [], [], []
    for di, dj in ((0, 1), (1, 0)):
        a = inside[: n - di, : n - dj] & inside[di:, dj:]
        both = core[: n - di, : n - dj] & core[di:, dj:]
        rows.append(idx[: n - di, : n - dj][a])
        cols.append(idx[di:, dj:][a])
        cost.append(np.where(both, 1.0, float(n * n))[a])
    r = np.concatenate(rows)
    cc = np.concatenate(cols)
    graph = coo_matrix((np.concatenate(cost), (r, cc)), shape=(n * n, n * n)).tocsr()
    start = idx[g.center, g.center]
    dist, pred = dijkstra(graph, directed=False, indices=start, return_predecessors=True)
    reach = np.isfinite(dist)
    order = np.nonzero(reach)[0]
    order = order[np.argsort(dist[order], kind="stable")]
    conj = np.full(n * n, np.nan)
    conj[start] = 0.0
    vxf, vyf = vx.ravel(), vy.ravel()
    for node in order[1:]:
        p = pred[node]
        step = node - p
        if step == 1:        # east
            inc = -0.5 * h * (vyf[p] + vyf[node])
        elif step == -1:     # west
            inc = 0.5 * h * (vyf[p] + vyf[node])
        elif step == n:      # north
            inc = 0.5 * h * (vxf[p] + vxf[node])
        else:                # south
            inc = -0.5 * h * (vxf[p] + vxf[node])
        conj[node] = conj[p] + inc
    conj = conj.reshape(n, n)
    # Cauchy-Riemann residual on cells well inside the domain
    cell = core[:-1, :-1] & core[1:, :-1] & core[:-1, 1:] & core[1:, 1:]
    if not cell.any():
        return conj, 0.0
    dvx = 0.5 * ((v[:-1, 1:] - v[:-1, :-1]) + (v[1:, 1:] - v[1:, :-1])) / h
    dvy = 0.5 * ((v[1:, :-1] - v[:-1, :-1]) + (v[1:, 1:] - v[:-1, 1:])) / h
    dcx = 0.5 * ((conj[:-1, 1:] - conj[:-1, :-1]) + (conj[1:, 1:] - conj[1:, :-1])) / h
    dcy = 0.5 * ((conj[1:, :-1] - conj[:-1, :-1]) + (conj[1:, 1:] - conj[:-1, 1:])) / h
    res = np.maximum(np.abs(dvx - dcy), np.abs(dvy + dcx))
    return conj, float(np.nanmax(res[cell]))


# ----------------------------------------------------------------------------
# descriptors


CENTER = "center"
BOUNDARY_CONSTANT = "boundary_constant"
RIEMANN = "riemann"
NO_DISC = "no_riemann_disc"


@dataclass
class DiscDescriptor:
    """One harmonic disc (or a marker that none exists at a given time).

    ``kind`` is ``center``, ``boundary_constant`` (with the point ``z`` of
    the contact set of ``psi_1``), ``riemann`` (with time ``t`` and the
    conformal map) or ``no_riemann_disc`` (time ``t`` whose domain is not
    simply connected).  ``H_value`` is the Hamiltonian along the disc.
    """

    kind: str
    H_value: Optional[float] = None
    t: Optional[float] = None
    z: Optional[complex] = None
    node: Optional[tuple] = None
    conformal_map: Optional[ConformalMap] = field(default=None, repr=False)
    psi: Optional[ChartField] = field(default=None, repr=False)
    phi: Optional[ChartField] = field(default=None, repr=False)
    note: str = ""
    residual: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "H_value": self.H_value, "t": self.t}
        if self.z is not None:
            z = complex(self.z)
            out["z"] = [z.real, z.imag] if np.isfinite(z) else ["inf", "inf"]
        if self.conformal_map is not None:
            out["cr_residual"] = self.conformal_map.cr_residual
            out["boundary_error"] = self.conformal_map.boundary_error
        if self.note:
            out["note"] = self.note
        out["residual"] = dict(self.residual)
        return out


def _sample_times(t_grid, times):
    t_grid = np.asarray(t_grid)
    if times is None:
        times = np.arange(0.1, 0.95, 0.1)
    out = []
    for t in times:
        k = int(np.argmin(np.abs(t_grid - t)))
        if 0 < t_grid[k] < 1 and k not in out:
            out.append(k)
    return out


def enumerate_discs(family, report, times: Optional[Sequence[float]] = None, *,
                    max_boundary: int = 16, compute_maps: bool = True) -> list:
    """All disc families the flow supports, plus markers for multiply connected times.

    ``times`` are snapped to the flow's time grid (default ``0.1, ..., 0.9``).
    Boundary-constant discs are sampled from the owned contact nodes of
    ``psi_1`` (at most ``max_boundary``, evenly spread); an empty contact set
    is reported in the center descriptor's note.
    """
    atlas = family.atlas
    phi = family.phi
    out = [DiscDescriptor(CENTER, H_value=-1.0, z=0j, node=("Z", atlas["Z"].center, atlas["Z"].center), phi=phi)]
    last = family.snapshots[-1]
    if last.t == 1.0:
        cand = []
        for c in CHARTS:
            g = atlas[c]
            ii, jj = np.nonzero(g.owned & g.interior & ~last.mask[c])
            cand.extend((c, int(i), int(j)) for i, j in zip(ii, jj))
        if not cand:
            out[0].note = "contact set of psi_1 is empty at this resolution"
        pick = np.unique(np.linspace(0, len(cand) - 1, min(max_boundary, len(cand))).round().astype(int)) if cand else []
        for k in pick:
            c, i, j = cand[k]
            out.append(DiscDescriptor(BOUNDARY_CONSTANT, H_value=0.0, t=1.0, z=complex(atlas[c].to_sphere()[i, j]),
                                      node=(c, i, j), phi=phi))
    else:
        out[0].note = "flow does not reach t = 1; no boundary-constant discs sampled"
    rows = {round(r.t, 12): r for r in report.rows}
    for k in _sample_times(family.t_grid, times):
        snap = family.snapshots[k]
        row = rows.get(round(snap.t, 12))
        simple = row.simply_connected if row is not None else component_count(snap.mask) == (1, 1)
        if not simple:
            out.append(DiscDescriptor(NO_DISC, t=float(snap.t),
                                      note="domain is not simply connected; no Riemann disc at this time"))
            continue
        fmap = None
        if compute_maps:
            fmap = riemann_map(snap.mask, gap_level(phi, snap.psi), check_topology=False)
        out.append(DiscDescriptor(RIEMANN, H_value=float(snap.t) - 1.0, t=float(snap.t),
                                  conformal_map=fmap, psi=snap.psi, phi=phi))
    return out


def _h_stats(hvals: np.ndarray, target: float) -> dict:
    hvals = hvals[np.isfinite(hvals)]
    if hvals.size == 0:
        return {"H_max_dev": 0.0, "H_mean_dev": 0.0, "H_std": 0.0}
    return {"H_max_dev": float(np.max(np.abs(hvals - target))),
            "H_mean_dev": float(abs(np.mean(hvals) - target)),
            "H_std": float(np.std(hvals, ddof=1)) if hvals.size > 1 else 0.0}


def verify_disc(h, d: DiscDescriptor) -> dict:
    """Residuals of the disc identity and of ``H`` constancy along ``d``.

    Riemann discs are sampled at every owned domain node (origin excluded)
    whose ``s = 2 G(z)`` lies within the stored ``s`` range.
    """
    argmax_H = {c: h.argmax_time(c) - 1.0 for c in CHARTS}
    if d.kind == CENTER:
        c, i, j = d.node
        phi0 = h.phi[c][i, j]
        res = np.abs(h.values[c][i, j, :] - (phi0 - h.s_grid))
        stats = {"max": float(res.max()), "mean": float(res.mean()), "samples": int(res.size)}
        stats.update(_h_stats(argmax_H[c][i, j, :], -1.0))
    elif d.kind == BOUNDARY_CONSTANT:
        c, i, j = d.node
        res = np.abs(h.values[c][i, j, :] - h.phi[c][i, j])
        stats = {"max": float(res.max()), "mean": float(res.mean()), "samples": int(res.size)}
        stats.update(_h_stats(argmax_H[c][i, j, :], 0.0))
    elif d.kind == RIEMANN:
        if d.conformal_map is None:
            raise ValueError("Riemann descriptor has no conformal map")
        t = d.t
        resid, hv = [], []
        skipped = 0
        for c in CHARTS:
            g = h.atlas[c]
            sel = d.conformal_map.mask[c] & g.owned & g.active
            if c == "Z":
                sel[g.center, g.center] = False
            ii, jj = np.nonzero(sel)
            s = 2.0 * d.conformal_map.green[c][ii, jj]
            ok = np.isfinite(s) & (s >= 0) & (s <= h.s_max)
            skipped += int((~ok).sum())
            ii, jj, s = ii[ok], jj[ok], s[ok]
            lhs = h.at_nodes(c, ii, jj, s)
            rhs = d.psi[c][ii, jj] - (1.0 - t) * s
            resid.append(np.abs(lhs - rhs))
            k = np.clip(np.searchsorted(h.s_grid, s), 0, h.s_grid.size - 1)
            hv.append(argmax_H[c][ii, jj, k])
        resid = np.concatenate(resid)
        hv = np.concatenate(hv)
        stats = {"max": float(resid.max()) if resid.size else 0.0,
                 "mean": float(resid.mean()) if resid.size else 0.0,
                 "samples": int(resid.size), "skipped_beyond_smax": skipped,
                 "cr_residual": d.conformal_map.cr_residual,
                 "boundary_error": d.conformal_map.boundary_error}
        stats.update(_h_stats(hv, t - 1.0))
    else:
        stats = {}
    d.residual = stats
    return stats
