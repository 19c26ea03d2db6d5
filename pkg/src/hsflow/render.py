"""Static pictures (binary PPM) and CSV profiles of flows and their analysis.

Contours come from marching squares (``skimage.measure.find_contours``)
and are drawn with Pillow; every image is a plain RGB raster saved as P6
PPM, so output bytes depend only on the inputs.
"""

from __future__ import annotations

import csv
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw
from skimage import measure

from .geometry import Atlas

BACKGROUND = (255, 255, 255)
GUIDE = (200, 200, 200)
INK = (20, 20, 20)


def _ramp(x: np.ndarray) -> np.ndarray:
    """Blue to yellow to red colour ramp for ``x`` in ``[0, 1]`` (uint8 RGB)."""
    x = np.clip(np.nan_to_num(x, nan=0.0), 0.0, 1.0)
    stops = np.array([[49, 54, 149], [116, 173, 209], [255, 255, 191], [244, 109, 67], [165, 0, 38]], float)
    pos = x * (len(stops) - 1)
    k = np.minimum(pos.astype(int), len(stops) - 2)
    f = (pos - k)[..., None]
    return ((1 - f) * stops[k] + f * stops[k + 1]).round().astype(np.uint8)


class _Canvas:
    """Square image of the Z chart window ``|Re z|, |Im z| <= view``."""

    def __init__(self, atlas: Atlas, size: int, view: Optional[float] = None):
        self.atlas = atlas
        self.size = int(size)
        self.view = float(view or atlas.extent)
        self.image = Image.new("RGB", (self.size, self.size), BACKGROUND)
        self.draw = ImageDraw.Draw(self.image)

    def to_px(self, z: np.ndarray):
        x = (np.real(z) + self.view) / (2 * self.view) * (self.size - 1)
        y = (self.view - np.imag(z)) / (2 * self.view) * (self.size - 1)
        return x, y

    def grid_to_z(self, contour: np.ndarray) -> np.ndarray:
        g = self.atlas["Z"]
        return (contour[:, 1] * g.h - g.extent) + 1j * (contour[:, 0] * g.h - g.extent)

    def polyline(self, z: np.ndarray, colour, width: int = 1):
        x, y = self.to_px(z)
        pts = list(zip(np.round(x, 3).tolist(), np.round(y, 3).tolist()))
        if len(pts) >= 2:
            self.draw.line(pts, fill=colour, width=width)

    def circle(self, r: float, colour):
        t = np.linspace(0, 2 * np.pi, 721)
        self.polyline(r * np.exp(1j * t), colour)

    def dot(self, z: complex, colour, radius: int = 3):
        x, y = self.to_px(np.array([z]))
        self.draw.ellipse([x[0] - radius, y[0] - radius, x[0] + radius, y[0] + radius], fill=colour)

    def contours(self, values: np.ndarray, level: float, colour, width: int = 1):
        arr = np.where(np.isfinite(values), values, np.nanmax(values[np.isfinite(values)]) if np.isfinite(values).any() else 0)
        for c in measure.find_contours(arr, level):
            self.polyline(self.grid_to_z(c), colour, width)

    def save(self, path):
        self.image.save(path, format="PPM")


def front_times(t_grid: Sequence[float], count: int = 12) -> list:
    """Evenly spread grid indices in ``(0, 1)`` for front pictures."""
    t = np.asarray(t_grid)
    idx = [k for k in range(t.size) if 0 < t[k] < 1]
    if len(idx) <= count:
        return idx
    pick = np.linspace(0, len(idx) - 1, count).round().astype(int)
    return [idx[i] for i in pick]


def render_fronts(family, path, *, times: Optional[Sequence[int]] = None, size: int = 600,
                  view: Optional[float] = None) -> None:
    """Nested flow fronts ``{psi_t = phi}`` on the Z chart, coloured by time.

    Each front is the marching-squares contour of the domain indicator at
    level 1/2, so it follows exactly the nodes that count as inside.
    """
    cv = _Canvas(family.atlas, size, view)
    cv.circle(1.0, GUIDE)
    ks = front_times(family.t_grid) if times is None else list(times)
    colours = _ramp(np.linspace(0, 1, max(len(ks), 2)))
    for col, k in zip(colours, ks):
        snap = family.snapshots[k]
        ind = np.where(family.atlas["Z"].active, snap.mask.z.astype(float), 0.0)
        cv.contours(ind, 0.5, tuple(int(v) for v in col), width=2)
    cv.dot(0j, INK)
    cv.save(path)


def render_field(field: np.ndarray, atlas: Atlas, path, *, lo: float, hi: float, size: int = 600,
                 view: Optional[float] = None) -> None:
    """Heat map of a Z-chart array, nearest-node sampled onto the pixel grid."""
    cv = _Canvas(atlas, size, view)
    g = atlas["Z"]
    px = np.arange(cv.size)
    x = -cv.view + px / (cv.size - 1) * 2 * cv.view
    y = cv.view - px / (cv.size - 1) * 2 * cv.view
    j = np.clip(np.round((x + g.extent) / g.h).astype(int), 0, g.n - 1)
    i = np.clip(np.round((y + g.extent) / g.h).astype(int), 0, g.n - 1)
    vals = field[i[:, None], j[None, :]]
    rgb = _ramp((vals - lo) / (hi - lo if hi > lo else 1.0))
    rgb[~np.isfinite(vals)] = BACKGROUND
    cv.image = Image.fromarray(rgb, "RGB")
    cv.draw = ImageDraw.Draw(cv.image)
    cv.circle(1.0, GUIDE)
    cv.save(path)


def render_hamiltonian(H, path, *, s_index: int = 0, size: int = 600) -> None:
    """``H(., s)`` on the Z chart with the fixed colour range ``[-1, 0]``."""
    render_field(H.values["Z"][:, :, s_index], H.atlas, path, lo=-1.0, hi=0.0, size=size)


def render_discs(discs, path, *, size: int = 600, radii: Sequence[float] = (0.2, 0.4, 0.6, 0.8, 0.95)) -> None:
    """Traces of the Riemann discs: images of ``|tau| = r`` (level sets of ``|F|``).

    One colour per disc time; boundary-constant points are drawn as dots.
    """
    riemann = [d for d in discs if d.kind == "riemann" and d.conformal_map is not None]
    atlas = riemann[0].conformal_map.atlas if riemann else None
    if atlas is None:
        for d in discs:
            if d.phi is not None:
                atlas = d.phi.atlas
                break
    if atlas is None:
        raise ValueError("no disc carries grid information")
    cv = _Canvas(atlas, size)
    cv.circle(1.0, GUIDE)
    colours = _ramp(np.linspace(0, 1, max(len(riemann), 2)))
    for col, d in zip(colours, riemann):
        mod = d.conformal_map.modulus.z
        vals = np.where(np.isfinite(mod), mod, 1.0)
        for r in radii:
            cv.contours(vals, r, tuple(int(v) for v in col))
    for d in discs:
        if d.kind == "boundary_constant" and d.z is not None and np.isfinite(d.z) and abs(d.z) <= cv.view:
            cv.dot(d.z, INK, 2)
    cv.dot(0j, INK)
    cv.save(path)


def write_profiles(family, path, oracle=None) -> None:
    """``phi`` and every ``psi_t`` along the positive real axis of the Z chart.

    With an ``oracle`` (``t -> RadialOracle``) the closed-form envelope is
    added as extra columns.
    """
    g = family.atlas["Z"]
    c = g.center
    r = g.axis[c:]
    cols = {"r": r, "phi": family.phi.z[c, c:]}
    for snap in family.snapshots:
        cols[f"psi_t={snap.t:.6g}"] = snap.psi.z[c, c:]
        if oracle is not None and 0 < snap.t < 1:
            cols[f"oracle_t={snap.t:.6g}"] = oracle(snap.t).psi(r.astype(complex))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([f"{v:.12g}" for v in row])


def write_radius_table(family, path, oracle_radius=None) -> None:
    """Per-time area, equivalent radius and (optionally) the oracle radius."""
    from .envelope import equivalent_radius

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t", "area", "equivalent_radius"] + (["oracle_radius"] if oracle_radius else [])
        w.writerow(head)
        for snap in family.snapshots:
            row = [snap.t, snap.area, equivalent_radius(snap)]
            if oracle_radius:
                row.append(oracle_radius(snap.t) if snap.t < 1 else float("inf"))
            w.writerow([f"{v:.12g}" for v in row])
