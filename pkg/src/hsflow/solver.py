"""Multigrid for the composite two-chart maximal-subsolution problem.

The fine problem on every free node ``i`` reads

    V_i <= O_i,   r_i := T_i(V) - V_i >= 0,   (O_i - V_i) r_i = 0,

where ``T_i`` is the 5-point average plus a source term (or a
Shortley-Weller weighted average).  Rim nodes copy the other chart through
bilinear interpolation.  With ``O = +inf`` this is a linear Dirichlet /
Poisson problem.

V-cycles use projected Gauss-Seidel smoothing, full-approximation-scheme
coarse problems, and the monotone "defect obstacle"
``O_c = V + min_{3x3}(O - V)`` (injected), so that prolongated corrections
never push an iterate above the obstacle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import _kernels as K
from .geometry import CHARTS, Atlas, ChartField, ConvergenceError, other

log = logging.getLogger(__name__)

COARSEST = 17
_NO_WEIGHTS = np.zeros((1, 1, 6))


def default_omega(n: int) -> float:
    """SOR factor used on the coarsest level."""
    return 2.0 / (1.0 + np.sin(np.pi / (0.75 * n)))


class _Level:
    def __init__(self, atlas: Atlas, kind: dict, O: dict, V: dict, c: dict,
                 corr: dict, weights: Optional[dict] = None):
        self.atlas = atlas
        self.kind = kind
        self.O = O
        self.V = V
        self.c = c
        self.weights = weights or {}
        self.interp = {}
        for ch in CHARTS:
            bi, bj, si, sj, w = atlas.stencils[ch]
            keep = kind[ch][bi, bj] == K.INTERP
            self.interp[ch] = [bi[keep], bj[keep], si[keep], sj[keep], w[keep], None]
            self.set_corr(ch, corr[ch][keep] if corr.get(ch) is not None else np.zeros(keep.sum()))
        self.coarse: Optional[_Level] = None
        self.V0 = {ch: np.zeros_like(V[ch]) for ch in CHARTS}
        self.rhs_work = {ch: np.zeros_like(V[ch]) for ch in CHARTS}

    def set_corr(self, ch, corr):
        self.interp[ch][5] = np.ascontiguousarray(corr, dtype=np.float64)

    def sync(self, ch):
        bi, bj, si, sj, w, corr = self.interp[ch]
        K.interp_update(self.V[ch], self.O[ch], bi, bj, si, sj, w, corr, self.V[other(ch)])

    def smooth(self, sweeps: int, omega: float = 1.0):
        for _ in range(sweeps):
            for ch in CHARTS:
                self.sync(ch)
                if ch in self.weights:
                    K.relax_weighted(self.V[ch], self.O[ch], self.kind[ch], self.weights[ch], omega)
                else:
                    K.relax_uniform(self.V[ch], self.O[ch], self.kind[ch], self.c[ch], omega)
        for ch in CHARTS:
            self.sync(ch)

    def max_residual(self) -> float:
        worst = 0.0
        for ch in CHARTS:
            if ch in self.weights:
                r = K.residual_weighted(self.V[ch], self.O[ch], self.kind[ch], self.weights[ch])
            else:
                r = K.residual_uniform(self.V[ch], self.O[ch], self.kind[ch], self.c[ch])
            bi, bj, si, sj, w, corr = self.interp[ch]
            r2 = K.interp_residual(self.V[ch], self.O[ch], bi, bj, si, sj, w, corr, self.V[other(ch)])
            worst = max(worst, r, r2)
        return worst

    def build_coarse(self):
        n = self.atlas.n
        nc = (n - 1) // 2 + 1
        if nc < COARSEST or (n - 1) % 4 != 0:
            return None
        ca = Atlas(nc, self.atlas.extent)
        kind, O, V, c = {}, {}, {}, {}
        for ch in CHARTS:
            k = ca.base_kind(ch)
            fine_fixed = self.kind[ch] == K.FIXED
            fixed_c = fine_fixed[::2, ::2]
            if fine_fixed.any() and not fixed_c.any():
                # a Dirichlet set thinner than the coarse spacing would vanish
                # under injection and leave a singular coarse problem; keep
                # every coarse node next to it instead
                fixed_c = ndimage.binary_dilation(fine_fixed)[::2, ::2]
            k[fixed_c & (k != K.INACTIVE)] = K.FIXED
            kind[ch] = k
            O[ch] = np.full((nc, nc), np.inf)
            V[ch] = np.zeros((nc, nc))
            c[ch] = np.zeros((nc, nc))
        self.coarse = _Level(ca, kind, O, V, c, {})
        self.coarse.build_coarse()
        return self.coarse


def _vcycle(lv: _Level, pre: int, post: int, gamma: int = 1):
    cl = lv.coarse
    if cl is None:
        om = default_omega(lv.atlas.n)
        for _ in range(40):
            lv.smooth(25, om)
            if lv.max_residual() < 1e-15:
                break
        return
    lv.smooth(pre)
    for ch in CHARTS:
        weighted = ch in lv.weights
        K.scaled_residual(lv.V[ch], lv.O[ch], lv.kind[ch], lv.c[ch],
                          lv.weights[ch] if weighted else _NO_WEIGHTS, weighted, lv.rhs_work[ch])
        K.restrict_fas(lv.V[ch], lv.O[ch], lv.kind[ch], lv.rhs_work[ch],
                       cl.kind[ch], cl.V[ch], cl.O[ch], cl.rhs_work[ch])
        vc = cl.V[ch]
        cl.V0[ch][...] = vc
        Vp = np.pad(vc, 1)
        nvc = 0.25 * (Vp[1:-1, 2:] + Vp[1:-1, :-2] + Vp[2:, 1:-1] + Vp[:-2, 1:-1]) - vc
        cl.c[ch] = np.where(cl.kind[ch] == K.FREE, 4.0 * (4.0 * cl.rhs_work[ch] - nvc), 0.0)
    for ch in CHARTS:
        bi, bj, si, sj, w, _ = cl.interp[ch]
        vb = cl.V[ch][bi, bj]
        vi = (w * cl.V[other(ch)][si, sj]).sum(axis=1)
        cl.set_corr(ch, vb - vi)
    for _ in range(gamma):
        _vcycle(cl, pre, post, gamma)
    for ch in CHARTS:
        e = cl.V[ch] - cl.V0[ch]
        K.prolong_add(lv.V[ch], lv.O[ch], lv.kind[ch], e, cl.kind[ch])
    lv.smooth(post)


@dataclass
class CompositeSystem:
    """Maximal-subsolution problem on both charts in local variables ``V``.

    Each chart stores ``V_c = F + offset_c`` for one global unknown ``F``.
    ``rhs`` is the source term ``c`` in ``V = (sum of neighbours + c) / 4``;
    ``weights`` (shape ``(n, n, 6)``: E, W, N, S, diagonal, constant) replace
    the uniform stencil on a chart when given.
    """

    atlas: Atlas
    V: dict
    O: dict
    kind: dict
    offset: dict
    rhs: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    cycles: int = 0
    residual: float = np.inf

    def __post_init__(self):
        a = self.atlas
        corr = {}
        for c in CHARTS:
            self.V[c] = np.ascontiguousarray(self.V[c], dtype=np.float64)
            self.O[c] = np.ascontiguousarray(self.O[c], dtype=np.float64)
            self.kind[c] = np.ascontiguousarray(self.kind[c], dtype=np.int8)
            self.rhs[c] = np.ascontiguousarray(self.rhs.get(c, np.zeros((a.n, a.n))), dtype=np.float64)
            self.V[c][self.kind[c] == K.INACTIVE] = 0.0
            np.minimum(self.V[c], self.O[c], out=self.V[c])
        for c in CHARTS:
            bi, bj, si, sj, w = a.stencils[c]
            off_a = self.offset[c][bi, bj]
            off_b = (w * self.offset[other(c)][si, sj]).sum(axis=1)
            corr[c] = off_a - off_b
        self._fine = _Level(a, self.kind, self.O, self.V, self.rhs, corr,
                            {c: np.ascontiguousarray(w) for c, w in self.weights.items()})
        self._fine.build_coarse()

    def measure_residual(self) -> float:
        return self._fine.max_residual()

    def solve(self, tol: float, max_cycles: int = 400, pre: int = 2, post: int = 2) -> float:
        fine = self._fine
        fine.smooth(1)
        last = np.inf
        for cycle in range(1, max_cycles + 1):
            _vcycle(fine, pre, post)
            self.residual = fine.max_residual()
            self.cycles += 1
            if not np.isfinite(self.residual):
                raise ConvergenceError("multigrid diverged", self.residual, self.cycles)
            if self.residual < tol:
                return self.residual
            log.debug("cycle %d residual %.3e (rate %.3f)", cycle, self.residual, self.residual / last)
            last = self.residual
        raise ConvergenceError("iteration cap exceeded", self.residual, self.cycles)

    def solve_linear(self, tol: float, max_cycles: int = 400, pre: int = 2, post: int = 2,
                     restart: int = 20) -> float:
        """GMRES-accelerated V-cycles for problems without an obstacle.

        With ``O = +inf`` one V-cycle is an affine map ``y -> y + B(b - A y)``
        of the non-fixed unknowns, so GMRES on ``B A y = B b`` can use a cycle
        per product.  This removes the slow near-constant mode that plain
        cycles show when the Dirichlet set is small.
        """
        from scipy.sparse.linalg import LinearOperator, gmres

        if any(np.isfinite(self.O[c]).any() for c in CHARTS):
            raise ValueError("solve_linear needs an obstacle-free problem")
        fine = self._fine
        unk = {c: self.kind[c] >= K.FREE for c in CHARTS}
        unk = {c: unk[c] & (self.kind[c] != K.FIXED) for c in CHARTS}
        sizes = [int(unk[c].sum()) for c in CHARTS]

        def put(y):
            self.V["Z"][unk["Z"]] = y[:sizes[0]]
            self.V["W"][unk["W"]] = y[sizes[0]:]

        def get():
            return np.concatenate([self.V[c][unk[c]] for c in CHARTS])

        def update(y):
            put(y)
            _vcycle(fine, pre, post)
            self.cycles += 1
            return get() - y

        y = get()
        d0 = update(np.zeros_like(y))
        op = LinearOperator((y.size, y.size), matvec=lambda x: d0 - update(x), dtype=float)
        budget = max(1, (max_cycles - 2) // (restart + 1))
        for _ in range(budget):
            y, _info = gmres(op, d0, x0=y, rtol=1e-14, atol=0.0, restart=restart, maxiter=1)
            put(y)
            for ch in CHARTS:
                fine.sync(ch)
            self.residual = fine.max_residual()
            log.debug("gmres: %d cycles, residual %.3e", self.cycles, self.residual)
            if not np.isfinite(self.residual):
                raise ConvergenceError("multigrid diverged", self.residual, self.cycles)
            if self.residual < tol:
                return self.residual
            if self.cycles >= max_cycles:
                break
        raise ConvergenceError("iteration cap exceeded", self.residual, self.cycles)

    def field(self, name="", fs_weight=0.0, time=None) -> ChartField:
        """Global unknown ``F = V - offset`` (plus ``fs_weight`` FS potentials)."""
        out = {}
        for c in CHARTS:
            g = self.atlas[c]
            v = np.full((self.atlas.n, self.atlas.n), np.nan)
            act = g.active
            v[act] = self.V[c][act] - self.offset[c][act] + fs_weight * g.fs_potential[act]
            out[c] = v
        return ChartField(self.atlas, out["Z"], out["W"], fs_weight=fs_weight, name=name, time=time)
