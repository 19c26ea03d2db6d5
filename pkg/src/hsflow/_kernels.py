"""Compiled relaxation kernels for the two-chart composite grid.

Every chart is an ``n x n`` array.  Node kinds:

* ``INACTIVE`` - outside the chart disc, never touched;
* ``FREE`` - 5-point (possibly Shortley-Weller weighted) equation;
* ``INTERP`` - value copied by bilinear interpolation from the other chart;
* ``FIXED`` - Dirichlet value, never touched.

All kernels solve the *maximal subsolution* problem

    V <= O,   V <= T(V)

where ``T`` is the local averaging (or interpolation) operator.  With
``O = +inf`` this is a plain linear solve.
"""

import numpy as np
from numba import njit

INACTIVE = 0
FREE = 1
INTERP = 2
FIXED = 3


@njit(cache=True)
def relax_uniform(V, O, kind, c, omega):
    n = V.shape[0]
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            if kind[i, j] != FREE:
                continue
            g = 0.25 * (V[i, j + 1] + V[i, j - 1] + V[i + 1, j] + V[i - 1, j] + c[i, j])
            v = V[i, j] + omega * (g - V[i, j])
            if v > O[i, j]:
                v = O[i, j]
            V[i, j] = v


@njit(cache=True)
def relax_weighted(V, O, kind, wts, omega):
    # wts[..., 0:4] = east, west, north, south; wts[..., 4] = diagonal;
    # wts[..., 5] = constant term.
    n = V.shape[0]
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            if kind[i, j] != FREE:
                continue
            g = (wts[i, j, 0] * V[i, j + 1] + wts[i, j, 1] * V[i, j - 1]
                 + wts[i, j, 2] * V[i + 1, j] + wts[i, j, 3] * V[i - 1, j]
                 + wts[i, j, 5]) / wts[i, j, 4]
            v = V[i, j] + omega * (g - V[i, j])
            if v > O[i, j]:
                v = O[i, j]
            V[i, j] = v


@njit(cache=True)
def interp_update(VA, OA, bi, bj, si, sj, w, corr, VB):
    for k in range(bi.shape[0]):
        v = corr[k]
        for m in range(4):
            v += w[k, m] * VB[si[k, m], sj[k, m]]
        if v > OA[bi[k], bj[k]]:
            v = OA[bi[k], bj[k]]
        VA[bi[k], bj[k]] = v


@njit(cache=True)
def residual_uniform(V, O, kind, c):
    n = V.shape[0]
    worst = 0.0
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            if kind[i, j] != FREE:
                continue
            g = 0.25 * (V[i, j + 1] + V[i, j - 1] + V[i + 1, j] + V[i - 1, j] + c[i, j])
            r = g - V[i, j]
            gap = O[i, j] - V[i, j]
            if gap < r:
                r = gap
            if abs(r) > worst:
                worst = abs(r)
    return worst


@njit(cache=True)
def residual_weighted(V, O, kind, wts):
    n = V.shape[0]
    worst = 0.0
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            if kind[i, j] != FREE:
                continue
            g = (wts[i, j, 0] * V[i, j + 1] + wts[i, j, 1] * V[i, j - 1]
                 + wts[i, j, 2] * V[i + 1, j] + wts[i, j, 3] * V[i - 1, j]
                 + wts[i, j, 5]) / wts[i, j, 4]
            r = g - V[i, j]
            gap = O[i, j] - V[i, j]
            if gap < r:
                r = gap
            if abs(r) > worst:
                worst = abs(r)
    return worst


@njit(cache=True)
def interp_residual(VA, OA, bi, bj, si, sj, w, corr, VB):
    worst = 0.0
    for k in range(bi.shape[0]):
        v = corr[k]
        for m in range(4):
            v += w[k, m] * VB[si[k, m], sj[k, m]]
        r = v - VA[bi[k], bj[k]]
        gap = OA[bi[k], bj[k]] - VA[bi[k], bj[k]]
        if gap < r:
            r = gap
        if abs(r) > worst:
            worst = abs(r)
    return worst


@njit(cache=True)
def concave_hull_legendre(t, psi, s, out_val, out_arg, tie_tol):
    """Discrete Legendre transform ``max_k psi[k] - (1 - t[k]) s`` per node.

    ``psi`` has shape (nodes, nt); rows may contain ``-inf``.  Builds the
    upper concave hull of ``(t_k, psi_k)`` and walks it for increasing
    ``s``.  Values are exact maxima; the recorded maximizer is the largest
    hull time whose objective is within ``tie_tol`` of the maximum.
    Rows without finite entries give NaN and index -1.
    """
    nodes = psi.shape[0]
    nt = t.shape[0]
    ns = s.shape[0]
    hull = np.empty(nt, dtype=np.int64)
    for p in range(nodes):
        m = 0
        for k in range(nt):
            y = psi[p, k]
            if not np.isfinite(y):
                continue
            while m >= 2:
                a = hull[m - 2]
                b = hull[m - 1]
                # drop b if it lies on or below the chord a -> k
                lhs = (psi[p, b] - psi[p, a]) * (t[k] - t[a])
                rhs = (y - psi[p, a]) * (t[b] - t[a])
                if lhs <= rhs:
                    m -= 1
                else:
                    break
            hull[m] = k
            m += 1
        if m == 0:
            for r in range(ns):
                out_val[p, r] = np.nan
                out_arg[p, r] = -1
            continue
        # objective for vertex k at slope s: psi_k + t_k s - s
        q = 0
        qa = 0
        for r in range(ns):
            sv = s[r]
            while q + 1 < m:
                a = hull[q]
                b = hull[q + 1]
                if psi[p, b] + t[b] * sv >= psi[p, a] + t[a] * sv:
                    q += 1
                else:
                    break
            k = hull[q]
            best = psi[p, k] + t[k] * sv
            if qa < q:
                qa = q
            while qa + 1 < m:
                b = hull[qa + 1]
                if psi[p, b] + t[b] * sv >= best - tie_tol:
                    qa += 1
                else:
                    break
            out_val[p, r] = best - sv
            out_arg[p, r] = hull[qa]


@njit(cache=True)
def scaled_residual(V, O, kind, c, wts, weighted, r):
    """Free-node residual in 5-point units; contact nodes keep only its negative part."""
    n = V.shape[0]
    r[:, :] = 0.0
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            if kind[i, j] != FREE:
                continue
            if weighted:
                g = (wts[i, j, 0] * V[i, j + 1] + wts[i, j, 1] * V[i, j - 1]
                     + wts[i, j, 2] * V[i + 1, j] + wts[i, j, 3] * V[i - 1, j]
                     + wts[i, j, 5]) - wts[i, j, 4] * V[i, j]
                x = 0.25 * g
            else:
                x = 0.25 * (V[i, j + 1] + V[i, j - 1] + V[i + 1, j] + V[i - 1, j] + c[i, j]) - V[i, j]
            if V[i, j] >= O[i, j] and x > 0.0:
                x = 0.0
            r[i, j] = x


@njit(cache=True)
def restrict_fas(V, O, kind, r, kind_c, Vc, Oc, rc):
    """Injection of ``V``, defect obstacle and full weighting of ``r``.

    Fills ``Vc`` (injected iterate), ``Oc`` (``Vc + min_3x3(O - V)``) and
    ``rc`` (full-weighted residual) on every active coarse node.
    """
    n = V.shape[0]
    nc = Vc.shape[0]
    for I in range(nc):
        for J in range(nc):
            if kind_c[I, J] == INACTIVE:
                Vc[I, J] = 0.0
                Oc[I, J] = np.inf
                rc[I, J] = 0.0
                continue
            i = 2 * I
            j = 2 * J
            Vc[I, J] = V[i, j]
            dmin = np.inf
            acc = 0.0
            i0 = max(i - 1, 0)
            i1 = min(i + 1, n - 1)
            j0 = max(j - 1, 0)
            j1 = min(j + 1, n - 1)
            for ii in range(i0, i1 + 1):
                for jj in range(j0, j1 + 1):
                    wgt = (2 - abs(ii - i)) * (2 - abs(jj - j))
                    acc += wgt * r[ii, jj]
                    if kind[ii, jj] != INACTIVE:
                        d = O[ii, jj] - V[ii, jj]
                        if d < dmin:
                            dmin = d
            Oc[I, J] = V[i, j] + dmin
            rc[I, J] = acc / 16.0


@njit(cache=True)
def prolong_add(V, O, kind, e, kind_c):
    """Add the bilinear interpolant of coarse correction ``e`` and clip.

    Coarse inactive nodes are left out and the weights renormalised.
    """
    n = V.shape[0]
    for i in range(n):
        for j in range(n):
            k = kind[i, j]
            if k != FREE and k != INTERP:
                continue
            I0 = i // 2
            J0 = j // 2
            oi = i % 2
            oj = j % 2
            s = 0.0
            ws = 0.0
            for a in range(oi + 1):
                for b in range(oj + 1):
                    I = I0 + a
                    J = J0 + b
                    if kind_c[I, J] == INACTIVE:
                        continue
                    wgt = (0.5 if oi else 1.0) * (0.5 if oj else 1.0)
                    s += wgt * e[I, J]
                    ws += wgt
            if ws > 0.0:
                v = V[i, j] + s / ws
                if v > O[i, j]:
                    v = O[i, j]
                V[i, j] = v
