"""The HMAE solution as a Legendre transform of the flow.

With ``s = -log|tau|^2`` the solution of the homogeneous complex
Monge-Ampère equation with boundary data ``phi`` is, in the twisted
coordinates of ``Phi~``,

    Phi~(z, s) = sup_t { psi_t(z) - (1 - t) s },

and the flow is recovered by the inverse transform

    psi_t(z) = inf_s { Phi~(z, s) + (1 - t) s }.

The sup runs over the discrete time grid and the inf over the discrete
``s`` grid.  Both are exact discrete operations: the sup walks the upper
concave hull of ``t -> psi_t(z)`` and records the maximizing time (the
largest one in case of ties), which is what the Hamiltonian needs.
Because ``Phi~`` does not depend on the argument of ``tau`` it is stored
on an ``s`` grid rather than on a disc.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .geometry import CHARTS, Atlas, ChartField

DEFAULT_SMAX = 8.0


@dataclass
class HmaeSolution:
    """``Phi~`` on (both chart grids) x (s grid) plus the maximizing time index.

    ``values[c]`` and ``argmax[c]`` have shape ``(n, n, ns)``; inactive nodes
    hold NaN and -1.
    """

    atlas: Atlas
    s_grid: np.ndarray
    t_grid: np.ndarray
    values: dict
    argmax: dict
    phi: ChartField
    tie_tol: float = 0.0

    @property
    def ds(self) -> float:
        return float(self.s_grid[1] - self.s_grid[0]) if self.s_grid.size > 1 else 0.0

    @property
    def s_max(self) -> float:
        return float(self.s_grid[-1])

    def argmax_time(self, chart: str) -> np.ndarray:
        idx = self.argmax[chart]
        out = np.full(idx.shape, np.nan)
        ok = idx >= 0
        out[ok] = self.t_grid[idx[ok]]
        return out

    def slice(self, k: int) -> ChartField:
        """``Phi~(., s_k)`` as a chart field."""
        return ChartField(self.atlas, self.values["Z"][:, :, k].copy(), self.values["W"][:, :, k].copy(),
                          name=f"phi_tilde(s={self.s_grid[k]:.4g})")

    def _locate_s(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0) or np.any(s > self.s_max + 1e-12):
            raise ValueError(f"s outside the stored range [0, {self.s_max}]")
        if self.s_grid.size == 1:
            return np.zeros(s.shape, int), np.zeros(s.shape)
        pos = np.interp(s, self.s_grid, np.arange(self.s_grid.size))
        k0 = np.minimum(np.floor(pos).astype(int), self.s_grid.size - 2)
        return k0, pos - k0

    def at_nodes(self, chart: str, i, j, s) -> np.ndarray:
        """``Phi~`` at grid nodes, linearly interpolated in ``s``."""
        k0, f = self._locate_s(s)
        v = self.values[chart]
        return (1 - f) * v[i, j, k0] + f * v[i, j, k0 + 1]

    def at(self, z, s) -> np.ndarray:
        """``Phi~(z, s)``: bilinear in ``z`` on the owning chart, linear in ``s``."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        s = np.broadcast_to(np.asarray(s, dtype=float), z.shape)
        k0, f = self._locate_s(s)
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
            acc = 0.0
            for di, dj, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                                (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
                lo = v[i0 + di, j0 + dj, k0[sel]]
                hi = v[i0 + di, j0 + dj, k0[sel] + 1] if self.s_grid.size > 1 else lo
                acc = acc + wgt * ((1 - f[sel]) * lo + f[sel] * hi)
            out[sel] = acc
        return out


def make_s_grid(s_max: float = DEFAULT_SMAX, ds: float = 0.01) -> np.ndarray:
    if s_max <= 0 or ds <= 0:
        raise ValueError("s_max and ds must be positive")
    ns = int(round(s_max / ds)) + 1
    return np.linspace(0.0, ds * (ns - 1), ns)


def required_s_max(family) -> float:
    """Largest hull slope ``-(psi_{k+1} - psi_k) / dt`` over all finite nodes.

    Beyond this ``s`` every node is at its last hull vertex and ``Phi~`` is
    affine, so an ``s`` grid reaching it makes the roundtrip exact.
    """
    t = np.asarray(family.t_grid)
    worst = 0.0
    for c in CHARTS:
        stack = family.psi_stack(c)
        with np.errstate(invalid="ignore"):
            d = -(np.diff(stack, axis=0)) / np.diff(t)[:, None, None]
        d = d[np.isfinite(d)]
        if d.size:
            worst = max(worst, float(d.max()))
    return worst


def build_phi_tilde(family, s_grid, tie_tol: Optional[float] = None) -> HmaeSolution:
    """``Phi~(z, s) = max_k psi_{t_k}(z) - (1 - t_k) s`` at every node and ``s``."""
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.ndim != 1 or s_grid.size == 0 or s_grid[0] != 0.0:
        raise ValueError("s_grid must start at 0")
    if np.any(np.diff(s_grid) <= 0):
        raise ValueError("s_grid must be strictly increasing")
    t = np.ascontiguousarray(family.t_grid, dtype=float)
    if tie_tol is None:
        tie_tol = family.snapshots[-1].contact_tol if family.snapshots else 0.0
    n = family.atlas.n
    values, argmax = {}, {}
    for c in CHARTS:
        stack = family.psi_stack(c).reshape(t.size, n * n).T.copy()
        val = np.empty((n * n, s_grid.size))
        arg = np.empty((n * n, s_grid.size), dtype=np.int16 if t.size < 32000 else np.int32)
        K.concave_hull_legendre(t, stack, s_grid, val, arg, float(tie_tol))
        values[c] = val.reshape(n, n, s_grid.size)
        argmax[c] = arg.reshape(n, n, s_grid.size)
    return HmaeSolution(family.atlas, s_grid, t, values, argmax, family.phi, float(tie_tol))


def recover_psi(h: HmaeSolution, t: float) -> ChartField:
    """``min_s Phi~(z, s) + (1 - t) s`` over the stored ``s`` grid."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"flow time must lie in [0, 1], got {t}")
    out = {}
    lin = (1.0 - t) * h.s_grid
    for c in CHARTS:
        v = h.values[c]
        res = np.full(v.shape[:2], np.nan)
        act = h.atlas[c].active
        res[act] = np.min(v[act] + lin[None, :], axis=1)
        out[c] = res
    return ChartField(h.atlas, out["Z"], out["W"], name=f"recovered_psi(t={t:.4g})", time=t)


def phi_on_product(h: HmaeSolution, z, tau) -> np.ndarray:
    """``Phi(z, tau)`` on ``P^1 x`` (punctured disc) from ``Phi~``.

    ``Phi(z, tau) = Phi~(tau z, -log|tau|^2) + log(1+|tau z|^2) - log|tau|^2 - log(1+|z|^2)``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    tau = np.broadcast_to(np.atleast_1d(np.asarray(tau, dtype=complex)), z.shape)
    if np.any(tau == 0):
        raise ValueError("Phi(z, tau) is only represented for tau != 0")
    if np.any(np.abs(tau) > 1 + 1e-12):
        raise ValueError("tau must lie in the closed unit disc")
    a2 = np.abs(tau) ** 2
    s = -np.log(a2)
    s = np.where(s < 0, 0.0, s)
    if np.any(s > h.s_max + 1e-12):
        raise ValueError(f"|tau| below exp(-s_max/2) = {np.exp(-h.s_max / 2):.3g}; increase s_max")
    tz = tau * z
    return h.at(tz, s) + np.log1p(np.abs(tz) ** 2) - np.log(a2) - np.log1p(np.abs(z) ** 2)
