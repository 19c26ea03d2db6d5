"""Connected components of regions of the sphere given on two charts.

Each chart is labelled on its owned nodes (``|z| <= 1`` in Z, ``|z| > 1``
in W).  The two owned halves meet along the unit circle; labels are merged
across that seam with a union-find over pairs of nearby nodes that carry
the same mask value.  The domain uses 4-connectivity and the complement
8-connectivity, the usual pairing that keeps digital Jordan curves
separating.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .geometry import Atlas, SphereMask

FOUR = ndimage.generate_binary_structure(2, 1)
EIGHT = ndimage.generate_binary_structure(2, 2)


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, a):
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _seam_pairs(atlas: Atlas):
    """Pairs (Z node, W node) that are neighbours across the unit circle.

    Every owned Z node within two cells of the circle is linked to the
    nearest owned W nodes of its image ``1/z``.
    """
    gz, gw = atlas["Z"], atlas["W"]
    h = atlas.h
    r = np.abs(gz.coords)
    zi, zj = np.nonzero(gz.owned & (r > 1.0 - 2.5 * h))
    image = 1.0 / gz.coords[zi, zj]
    gx = (image.real + atlas.extent) / h
    gy = (image.imag + atlas.extent) / h
    pairs = []
    for di in (0, 1):
        for dj in (0, 1):
            wi = np.floor(gy).astype(int) + di
            wj = np.floor(gx).astype(int) + dj
            ok = gw.owned[wi, wj]
            d = np.abs(gw.coords[wi, wj] - image)
            ok &= d < 1.5 * h
            pairs.append((zi[ok], zj[ok], wi[ok], wj[ok]))
    return [np.concatenate(p) for p in zip(*pairs)]


_SEAM_CACHE: dict = {}


def _label_sphere(mask_z, mask_w, atlas: Atlas, value: bool, structure):
    """Count sphere components of ``{mask == value}`` over owned nodes."""
    gz, gw = atlas["Z"], atlas["W"]
    sel_z = gz.owned & (mask_z == value)
    sel_w = gw.owned & (mask_w == value)
    lz, nz = ndimage.label(sel_z, structure=structure)
    lw, nw = ndimage.label(sel_w, structure=structure)
    if nz + nw == 0:
        return 0
    key = (atlas.n, atlas.extent)
    if key not in _SEAM_CACHE:
        _SEAM_CACHE[key] = _seam_pairs(atlas)
    zi, zj, wi, wj = _SEAM_CACHE[key]
    a = lz[zi, zj]
    b = lw[wi, wj]
    keep = (a > 0) & (b > 0)
    uf = _UnionFind(nz + nw + 1)
    for x, y in set(zip(a[keep].tolist(), (b[keep] + nz).tolist())):
        uf.union(x, y)
    roots = {uf.find(k) for k in range(1, nz + nw + 1)}
    return len(roots)


def component_count(mask: SphereMask, check: bool = True):
    """``(k_domain, k_complement)`` on the sphere.

    The domain uses 4-connectivity and the complement 8-connectivity.
    """
    if check:
        mask.check_consistent()
    atlas = mask.atlas
    zm = mask.z & atlas["Z"].active
    wm = mask.w & atlas["W"].active
    k_dom = _label_sphere(zm, wm, atlas, True, FOUR)
    k_comp = _label_sphere(zm, wm, atlas, False, EIGHT)
    return k_dom, k_comp


@dataclass
class TopologyRow:
    t: float
    domain_components: int
    complement_components: int
    simply_connected: bool
    area: float


@dataclass
class ConnectivityReport:
    rows: list = field(default_factory=list)
    window: Optional[tuple] = None
    window_rows: tuple = ()
    violations: list = field(default_factory=list)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def multiply_connected_times(self):
        return [r.t for r in self.rows if r.complement_components >= 2]


def find_window(t, k_complement, min_rows: int = 2):
    """Longest run of consecutive rows with ``k_complement >= 2``.

    Returns ``((t_first, t_last), (i_first, i_last))`` or ``(None, ())``.
    """
    best = None
    start = None
    ks = list(k_complement) + [0]
    for i, k in enumerate(ks):
        if k >= 2 and start is None:
            start = i
        elif k < 2 and start is not None:
            if i - start >= min_rows and (best is None or i - start > best[1] - best[0] + 1):
                best = (start, i - 1)
            start = None
    if best is None:
        return None, ()
    return (float(t[best[0]]), float(t[best[1]])), best


def connectivity_report(family) -> ConnectivityReport:
    """Topology of every snapshot of a flow family plus the multiply-connected window."""
    rep = ConnectivityReport()
    for snap in family.snapshots:
        kd, kc = component_count(snap.mask)
        simple = kd == 1 and kc == 1
        rep.rows.append(TopologyRow(snap.t, kd, kc, simple, snap.area))
        if snap.t > 0 and kd != 1:
            rep.violations.append(f"t={snap.t:.4f}: flow domain has {kd} components")
    window, idx = find_window([r.t for r in rep.rows], [r.complement_components for r in rep.rows])
    rep.window, rep.window_rows = window, idx
    return rep
