"""Hele-Shaw envelopes ``psi_t`` and flow domains ``Omega_t``.

For a Kähler potential ``phi`` and a time ``t`` in ``[0, 1]`` the envelope
``psi_t`` is the largest ``omega_FS``-subharmonic function below ``phi``
with a logarithmic pole of strength ``t`` at the origin.  Writing

    psi_t = g_t + u,     g_t(z) = t * log(|z|^2 / (1 + |z|^2)),

turns the pole into a bounded obstacle problem for ``u``: it is the largest
function with ``u <= phi - g_t`` and ``(1 - t) omega_FS + dd^c u >= 0``.
In each chart the local potential ``V = u + (1 - t) log(1 + |c|^2)`` is then
a subharmonic function below ``O = phi - g_t + (1 - t) log(1 + |c|^2)``,
which the multigrid complementarity solver handles directly.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (CHARTS, Atlas, ChartField, MeasureField, SphereMask,
                       discrete_ddc_mass, integrate_measure)
from .solver import CompositeSystem

log = logging.getLogger(__name__)

CONTACT_RTOL = 1e-6
SOLVE_RTOL = 1e-10


class KahlerError(ValueError):
    """The potential does not define a positive form on the grid."""


def omega_phi(phi: ChartField) -> MeasureField:
    """Cell masses of ``omega_FS + dd^c phi``."""
    m = discrete_ddc_mass(phi.with_fs_weight(1.0))
    m.name = "omega_phi"
    return m


def check_kahler(phi: ChartField, floor: float = 1e-10) -> MeasureField:
    """Return ``omega_phi`` or raise if some interior cell mass is ``<= floor``."""
    m = omega_phi(phi)
    for c in CHARTS:
        g = phi.atlas[c]
        vals = np.where(g.interior, m[c], np.inf)
        k = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[k] <= floor:
            raise KahlerError(f"potential is not Kähler: cell mass {vals[k]:.3e} at chart {c} node "
                              f"{k}, coordinate {g.coords[k]:.4f}")
    return m


def log_pole(atlas: Atlas, t: float) -> ChartField:
    """``g_t = t log(|z|^2 / (1 + |z|^2))`` as a global function (``-inf`` at 0)."""
    with np.errstate(divide="ignore"):
        return ChartField.from_callables(
            atlas,
            lambda z: t * (np.log(np.abs(z) ** 2) - np.log1p(np.abs(z) ** 2)) if t else np.zeros(z.shape),
            lambda w: -t * np.log1p(np.abs(w) ** 2),
            name="g_t")


def contact_tolerance(phi: ChartField) -> float:
    """Default contact tolerance: ``1e-6`` times the oscillation of ``phi`` (at least ``1e-6``)."""
    return CONTACT_RTOL * max(1.0, phi.oscillation())


@dataclass
class FlowSnapshot:
    """One Hele-Shaw time: envelope, bounded part, domain and diagnostics."""

    t: float
    psi: ChartField
    u: ChartField
    mask: SphereMask
    area: float
    residual: float = 0.0
    cycles: int = 0
    contact_tol: float = 0.0

    def omega_psi(self) -> MeasureField:
        """Cell masses of ``omega_FS + dd^c psi_t``; the pole sits in ``point_mass``."""
        m = discrete_ddc_mass(self.u.with_fs_weight(1.0 - self.t))
        m.point_mass = self.t
        m.name = "omega_psi"
        return m


@dataclass
class FlowFamily:
    phi: ChartField
    t_grid: np.ndarray
    snapshots: list = field(default_factory=list)

    @property
    def atlas(self) -> Atlas:
        return self.phi.atlas

    def areas(self) -> np.ndarray:
        return np.array([s.area for s in self.snapshots])

    def psi_stack(self, chart: str) -> np.ndarray:
        """Array of shape ``(nt, n, n)`` with ``psi_t`` on one chart."""
        return np.stack([s.psi[chart] for s in self.snapshots])


def _check_t(t: float):
    if not (0.0 <= t <= 1.0) or not np.isfinite(t):
        raise ValueError(f"flow time must lie in [0, 1], got {t}")


def extract_domain(snap_or_psi, phi: ChartField, tol: float, t: Optional[float] = None) -> SphereMask:
    """``{psi_t < phi - tol}`` on both charts; the origin joins for ``t > 0``.

    Each chart decides its owned nodes; the rest mirror the owner, so the
    mask is consistent across the overlap even where ``psi_t`` and ``phi``
    agree to within the discretization error.
    """
    psi = snap_or_psi.psi if isinstance(snap_or_psi, FlowSnapshot) else snap_or_psi
    t = snap_or_psi.t if isinstance(snap_or_psi, FlowSnapshot) else (t if t is not None else psi.time)
    out = {}
    for c in CHARTS:
        g = phi.atlas[c]
        with np.errstate(invalid="ignore"):
            out[c] = g.active & (psi[c] < phi[c] - tol)
    mask = SphereMask(phi.atlas, out["Z"], out["W"])
    if t is not None and t > 0:
        ctr = phi.atlas["Z"].center
        mask.z[ctr, ctr] = True
    return mask.harmonized()


def compute_envelope(phi: ChartField, t: float, *, warm: Optional[FlowSnapshot] = None,
                     contact_tol: Optional[float] = None, rtol: float = SOLVE_RTOL,
                     omega: Optional[MeasureField] = None) -> FlowSnapshot:
    """Solve for ``psi_t``; ``warm`` may hold the snapshot of an earlier time."""
    _check_t(t)
    phi = phi.global_part()
    atlas = phi.atlas
    if omega is None:
        omega = check_kahler(phi)
    tol = contact_tolerance(phi) if contact_tol is None else contact_tol
    if t == 0.0:
        u = phi.copy()
        return FlowSnapshot(0.0, phi.copy(), u, SphereMask.empty(atlas), 0.0, 0.0, 0, tol)
    g = log_pole(atlas, t)
    if t == 1.0:
        # With no background form left, the composite operator only admits
        # constant subsolutions (maximum principle), so the maximal one is
        # the smallest obstacle value.  The complementarity residual cannot
        # single it out, hence no iterative solve here.
        with np.errstate(invalid="ignore"):
            gap = phi - g
        lo = min(np.nanmin(np.where(np.isfinite(gap[c]), gap[c], np.nan)) for c in CHARTS)
        u = ChartField.constant(atlas, lo, name="u")
        u.time = 1.0
        psi = u + g
        psi.name, psi.time = "psi", 1.0
        mask = extract_domain(psi, phi, tol, 1.0)
        return FlowSnapshot(1.0, psi, u, mask, integrate_measure(omega, mask), 0.0, 0, tol)
    V, O, kind, off = {}, {}, {}, {}
    for c in CHARTS:
        gr = atlas[c]
        kind[c] = atlas.base_kind(c)
        off[c] = np.where(gr.active, (1.0 - t) * gr.fs_potential, 0.0)
        with np.errstate(invalid="ignore"):
            ob = phi[c] - g[c] + off[c]
        ob[~gr.active] = np.inf
        if c == "Z":
            ob[gr.center, gr.center] = np.inf
        O[c] = ob
        start = warm.u[c] if warm is not None and warm.t > 0 else phi[c] - g[c]
        v = np.where(gr.active, start + off[c], 0.0)
        if c == "Z" and not np.isfinite(v[gr.center, gr.center]):
            # no finite warm value at the pole: use the neighbours' mean
            i = gr.center
            v[i, i] = 0.25 * (v[i + 1, i] + v[i - 1, i] + v[i, i + 1] + v[i, i - 1])
        V[c] = np.minimum(v, O[c])
    scale = max(1.0, phi.oscillation())
    sys_ = CompositeSystem(atlas, V, O, kind, off)
    sys_.solve(rtol * scale)
    u = sys_.field(name="u", time=t)
    psi = u + g
    psi.name, psi.time, psi.fs_weight = "psi", t, 0.0
    mask = extract_domain(psi, phi, tol, t)
    area = integrate_measure(omega, mask)
    log.debug("t=%.4f area=%.6f cycles=%d residual=%.2e", t, area, sys_.cycles, sys_.residual)
    return FlowSnapshot(float(t), psi, u, mask, area, sys_.residual, sys_.cycles, tol)


def default_t_grid(nt: int) -> np.ndarray:
    """``nt`` equally spaced times from 0 to 1 (just ``[0]`` for ``nt = 1``)."""
    if nt < 1:
        raise ValueError("nt must be at least 1")
    return np.array([0.0]) if nt == 1 else np.linspace(0.0, 1.0, nt)


def compute_flow(phi: ChartField, t_grid: Sequence[float], *, warm_start: bool = True,
                 contact_tol: Optional[float] = None, jobs: Optional[int] = None,
                 progress=None) -> FlowFamily:
    """Snapshots for every time in ``t_grid`` (increasing, starting at 0).

    With ``warm_start`` the times are solved in order, each starting from
    the previous solution.  Without it they are independent and may run on
    ``jobs`` worker threads (default: ``HSFLOW_JOBS`` or 1).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing and start at 0")
    for t in t_grid:
        _check_t(t)
    phi = phi.global_part()
    omega = check_kahler(phi)
    tol = contact_tolerance(phi) if contact_tol is None else contact_tol
    fam = FlowFamily(phi, t_grid)
    if warm_start:
        prev = None
        for t in t_grid:
            prev = compute_envelope(phi, float(t), warm=prev, contact_tol=tol, omega=omega)
            fam.snapshots.append(prev)
            if progress:
                progress(prev)
        return fam
    from concurrent.futures import ThreadPoolExecutor

    jobs = jobs or int(os.environ.get("HSFLOW_JOBS", "1") or 1)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as ex:
        fam.snapshots = list(ex.map(lambda t: compute_envelope(phi, float(t), contact_tol=tol, omega=omega),
                                    t_grid))
    if progress:
        for s in fam.snapshots:
            progress(s)
    return fam


def equivalent_radius(snap: FlowSnapshot) -> float:
    """Radius of the centred disc with the same ``omega_FS`` area as ``Omega_t``."""
    from .geometry import fs_measure

    a = integrate_measure(fs_measure(snap.psi.atlas), snap.mask) if snap.t > 0 else 0.0
    a = min(max(a, 0.0), 1.0 - 1e-15)
    return float(np.sqrt(a / (1.0 - a)))


def boundary_radii(snap: FlowSnapshot) -> np.ndarray:
    """``|z|`` of Z-chart mask nodes that have a neighbour outside the mask.

    Only nodes with ``|z| <= 1`` (the Z-owned half) are listed.
    """
    m = snap.mask.z
    g = snap.psi.atlas["Z"]
    edge = np.zeros_like(m)
    edge[1:-1, 1:-1] = m[1:-1, 1:-1] & ~(m[1:-1, 2:] & m[1:-1, :-2] & m[2:, 1:-1] & m[:-2, 1:-1])
    edge &= g.interior & g.owned
    return np.abs(g.coords[edge])
