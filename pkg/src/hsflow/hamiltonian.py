"""The Hamiltonian ``H = d/ds Phi~`` and the exit-time cross-check.

``H(z, s) = t*(z, s) - 1`` where ``t*`` is the (largest) maximizing flow
time of the Legendre sup.  Taking the largest maximizer is the same as
taking the right derivative of the convex function ``s -> Phi~(z, s)``,
which is the convention needed at ``s = 0``.  At ``s = 0`` this gives
``H(z, 1) + 1 = sup{t : psi_t(z) = phi(z)}``, the time at which the flow
reaches ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CHARTS, Atlas
from .legendre import HmaeSolution


@dataclass
class HamiltonianField:
    """``H`` on the same (chart grids) x (s grid) layout as ``HmaeSolution``."""

    atlas: Atlas
    s_grid: np.ndarray
    values: dict

    def at_nodes(self, chart: str, i, j, s_index) -> np.ndarray:
        return self.values[chart][i, j, s_index]

    def s_index(self, s) -> np.ndarray:
        """Grid index of the largest stored ``s`` not exceeding ``s`` (right-continuity)."""
        s = np.asarray(s, dtype=float)
        k = np.searchsorted(self.s_grid, s + 1e-12, side="right") - 1
        return np.clip(k, 0, self.s_grid.size - 1)

    def at(self, z, s) -> np.ndarray:
        """``H`` at sphere points: bilinear in ``z`` on the owning chart, grid ``s``."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        k = np.broadcast_to(self.s_index(s), z.shape)
        in_z, zz, ww = self.atlas.owner_of(z)
        out = np.empty(z.shape)
        for chart, sel, pts in (("Z", in_z, zz), ("W", ~in_z, ww)):
            if not sel.any():
                continue
            g = self.atlas[chart]
            i0, j0, fy, fx, ok = g.locate(pts[sel])
            if not ok.all():
                raise ValueError(f"point {pts[sel][~ok][0]} is outside chart {chart}")
            v = self.values[chart]
            kk = k[sel]
            out[sel] = ((1 - fy) * (1 - fx) * v[i0, j0, kk] + (1 - fy) * fx * v[i0, j0 + 1, kk]
                        + fy * (1 - fx) * v[i0 + 1, j0, kk] + fy * fx * v[i0 + 1, j0 + 1, kk])
        return out


def compute_H(h: HmaeSolution) -> HamiltonianField:
    """``H = argmax_t - 1`` (largest maximizer)."""
    vals = {}
    for c in CHARTS:
        vals[c] = h.argmax_time(c) - 1.0
    return HamiltonianField(h.atlas, h.s_grid, vals)


def exit_time_at_node(family, chart: str, i: int, j: int) -> float:
    """``sup{t : z not in Omega_t}`` for one grid node.

    The last grid time at which the node is in contact brackets the exit
    from below; the gap ``phi - psi_t`` grows quadratically after the front
    passes, so ``sqrt(gap)`` is extrapolated linearly from the next two
    times to place the exit inside that bracket.
    """
    t = np.asarray(family.t_grid)
    g = family.atlas[chart]
    if chart == "Z" and i == g.center and j == g.center:
        return 0.0
    inside = np.array([bool(s.mask[chart][i, j]) for s in family.snapshots])
    if not inside.any():
        return float(t[-1])
    k1 = int(np.argmax(inside))
    if k1 == 0:
        return float(t[0])
    lo, hi = float(t[k1 - 1]), float(t[k1])
    if k1 + 1 >= t.size:
        return lo
    phi = family.phi[chart][i, j]
    tol = family.snapshots[k1].contact_tol
    g1 = max(phi - family.snapshots[k1].psi[chart][i, j] - tol, 0.0)
    g2 = max(phi - family.snapshots[k1 + 1].psi[chart][i, j] - tol, 0.0)
    r1, r2 = np.sqrt(g1), np.sqrt(g2)
    if not np.isfinite(r2) or r2 <= r1:
        return lo
    t_star = hi - r1 * (t[k1 + 1] - hi) / (r2 - r1)
    return float(min(max(t_star, lo), hi))


def exit_time(family, z) -> np.ndarray:
    """Exit times at sphere points.

    Node exit times are interpolated bilinearly on the owning chart, the
    same stencil ``HamiltonianField.at`` uses, so the two can be compared
    point by point.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    in_z, zz, ww = family.atlas.owner_of(z)
    out = np.empty(z.shape)
    cache = {}

    def node(chart, i, j):
        key = (chart, int(i), int(j))
        if key not in cache:
            cache[key] = exit_time_at_node(family, *key)
        return cache[key]

    for chart, sel, pts in (("Z", in_z, zz), ("W", ~in_z, ww)):
        if not sel.any():
            continue
        g = family.atlas[chart]
        i0, j0, fy, fx, ok = g.locate(pts[sel])
        if not ok.all():
            raise ValueError(f"point {pts[sel][~ok][0]} is outside chart {chart}")
        vals = np.empty(i0.shape)
        for q in range(i0.size):
            a, b, y, x = i0[q], j0[q], fy[q], fx[q]
            vals[q] = ((1 - y) * (1 - x) * node(chart, a, b) + (1 - y) * x * node(chart, a, b + 1)
                       + y * (1 - x) * node(chart, a + 1, b) + y * x * node(chart, a + 1, b + 1))
        out[sel] = vals
    return out


@dataclass
class NoDiscRegion:
    """The product set ``U = {t1 - 1 < H(tau z, tau) < t2 - 1}`` on (nodes) x (s grid)."""

    mask: dict
    s_grid: np.ndarray
    t1: float
    t2: float

    @property
    def volume_fraction(self) -> float:
        num = sum(int(m.sum()) for m in self.mask.values())
        den = sum(m.size for m in self.mask.values())
        return num / den if den else 0.0

    @property
    def nonempty(self) -> bool:
        return any(bool(m.any()) for m in self.mask.values())

    @property
    def meets_boundary(self) -> bool:
        """Whether ``U`` meets the ``s = 0`` slice, i.e. ``P^1 x`` (unit circle)."""
        return any(bool(m[:, 0].any()) for m in self.mask.values())

    def summary(self) -> dict:
        return {"t1": self.t1, "t2": self.t2, "volume_fraction": self.volume_fraction,
                "nonempty": self.nonempty, "meets_boundary": self.meets_boundary}


def no_disc_region(H: HamiltonianField, t1: float, t2: float) -> NoDiscRegion:
    """Evaluate ``U`` at every owned active node ``z`` and every stored ``s``.

    The product point ``(z, tau)`` with ``|tau| = exp(-s/2)`` maps to
    ``Phi~`` coordinates ``(tau z, s)``; ``H`` is interpolated at ``tau z``
    (its value does not depend on the argument of ``tau``).
    """
    if not 0.0 <= t1 <= t2 <= 1.0:
        raise ValueError("need 0 <= t1 <= t2 <= 1")
    masks = {}
    for c in CHARTS:
        g = H.atlas[c]
        sel = g.owned & g.active
        coords = g.coords[sel]
        m = np.zeros((coords.size, H.s_grid.size), dtype=bool)
        if t1 < t2:
            for k, s in enumerate(H.s_grid):
                shrink = np.exp(-0.5 * s)
                if c == "Z":
                    pts = shrink * coords
                else:
                    # tau z in W coordinates is w / tau; w = 0 (infinity) stays put
                    wp = coords / shrink
                    with np.errstate(divide="ignore"):
                        pts = np.where(wp == 0, np.inf, 1.0 / np.where(wp == 0, 1.0, wp))
                hv = H.at(pts, s)
                m[:, k] = (hv > t1 - 1.0) & (hv < t2 - 1.0)
        masks[c] = m
    return NoDiscRegion(masks, H.s_grid, t1, t2)
