"""Self-check suites run by ``hsflow verify``.

Each suite computes flows at a desk-scale resolution and compares them
with closed forms or structural properties.  The result is a list of
``Check`` records; the command exits non-zero when any of them fails.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .envelope import compute_flow, default_t_grid, equivalent_radius, omega_phi
from .geometry import CHARTS, Atlas, ChartField, fs_measure, integrate_measure
from .hamiltonian import compute_H, exit_time, no_disc_region
from .legendre import build_phi_tilde, make_s_grid, recover_psi, required_s_max
from .potentials import (Dumbbell, DumbbellParams, PotentialSpec, RadialProfile, ZeroProfile,
                         make_potential, radial_flow_oracle)
from .topology import connectivity_report


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{mark} {self.name}: {self.value:.4g} vs {self.tolerance:.4g}{extra}"


def _le(name, value, tol, detail="") -> Check:
    return Check(name, bool(value <= tol), float(value), float(tol), detail)


def _ge(name, value, tol, detail="") -> Check:
    return Check(name, bool(value >= tol), float(value), float(tol), detail)


def area_error(family) -> float:
    return float(np.max(np.abs(family.areas() - np.asarray(family.t_grid))))


def radius_error(family, profile, t_lo=0.05, t_hi=0.8) -> float:
    """Largest ``|equivalent radius - oracle radius|`` over grid times in ``[t_lo, t_hi]``.

    The equivalent radius is taken from the ``omega_phi`` area through the
    oracle's mass function, so it measures where the front sits.
    """
    worst = 0.0
    for snap in family.snapshots:
        if not t_lo - 1e-12 <= snap.t <= t_hi + 1e-12:
            continue
        if isinstance(profile, ZeroProfile):
            r = equivalent_radius(snap)
        else:
            r = _profile_radius(profile, snap.area)
        worst = max(worst, abs(r - radial_flow_oracle(profile, snap.t).radius))
    return worst


def _profile_radius(profile: RadialProfile, area: float) -> float:
    s = float(np.interp(area, profile.M, profile.s))
    return float(np.sqrt(s / (1.0 - s)))


def duality_error(family, hmae, times) -> float:
    worst = 0.0
    t_grid = np.asarray(family.t_grid)
    for t in times:
        k = int(np.argmin(np.abs(t_grid - t)))
        rec = recover_psi(hmae, float(t_grid[k]))
        ref = family.snapshots[k].psi
        for c in CHARTS:
            ok = family.atlas[c].active & np.isfinite(ref[c])
            worst = max(worst, float(np.max(np.abs(rec[c][ok] - ref[c][ok]))))
    return worst


def radial_suite(n: int = 257, nt: int = 51, progress: Optional[Callable] = None) -> list:
    atlas = Atlas(n)
    h = atlas.h
    out = []
    zero = make_potential(PotentialSpec("zero"), atlas)
    fam = compute_flow(zero, default_t_grid(nt), progress=progress)
    out.append(_le("zero potential: max |area - t|", area_error(fam), 0.01))
    out.append(_le("zero potential: radius vs sqrt(t/(1-t)) on [0.05, 0.8]",
                   radius_error(fam, ZeroProfile()), 2 * h, "2h"))
    k = int(np.argmin(np.abs(fam.t_grid - 0.5)))
    if abs(fam.t_grid[k] - 0.5) < 1e-12:
        v = float(fam.snapshots[k].psi.at(np.array([0.5 + 0j]))[0])
        out.append(_le("zero potential: |psi_0.5(0.5) + log(5/4)|", abs(v + np.log(1.25)), 5e-3))
    spec = PotentialSpec("radial")
    phi = make_potential(spec, atlas)
    prof = RadialProfile(spec.radial)
    mass = omega_phi(phi).total()
    out.append(_le("radial bump: |total mass - 1|", abs(mass - fs_measure(atlas).total()), 10 * h * h,
                   "10h^2, relative to the discrete FS mass"))
    fam = compute_flow(phi, default_t_grid(nt), progress=progress)
    out.append(_le("radial bump: max |area - t|", area_error(fam), 0.01))
    out.append(_le("radial bump: radius vs oracle on [0.05, 0.8]", radius_error(fam, prof), 2 * h, "2h"))
    return out


def dumbbell_suite(n: int = 257, nt: int = 51, area_n: int = 513, progress: Optional[Callable] = None) -> list:
    """Lobe masses, area law, window and no-disc region.

    The area law converges to first order for this potential, so it is
    checked on its own flow at ``area_n`` nodes (the topology and the
    Hamiltonian use ``n``, which keeps the Legendre tables in memory).
    """
    atlas = Atlas(n)
    out = []
    db = Dumbbell(atlas, DumbbellParams())
    m1, m2 = db.lobe_masses()
    total = fs_measure(atlas).total()
    out.append(_le("dumbbell: lobe mass error", max(abs(m1 - total / 2), abs(m2 - total / 2)), 1e-4))
    phi = db.potential()
    fam = compute_flow(phi, default_t_grid(nt), progress=progress)
    if area_n > atlas.n:
        fine = compute_flow(Dumbbell(Atlas(area_n), DumbbellParams()).potential(), default_t_grid(nt),
                            progress=progress)
        out.append(_le(f"dumbbell: max |area - t| at n={fine.atlas.n}", area_error(fine), 0.01))
        del fine
    else:
        out.append(_le(f"dumbbell: max |area - t| at n={atlas.n}", area_error(fam), 0.01))
    rep = connectivity_report(fam)
    out.append(_le("dumbbell: disconnected flow domains", len(rep.violations), 0))
    length = 0.0 if rep.window is None else rep.window[1] - rep.window[0]
    out.append(_ge("dumbbell: multiply connected window length", length, 0.02,
                   f"window {rep.window}"))
    if rep.window is not None:
        hm = build_phi_tilde(fam, make_s_grid(8.0, 0.01))
        U = no_disc_region(compute_H(hm), *rep.window)
        out.append(_ge("dumbbell: no-disc region volume fraction", U.volume_fraction, 1e-12))
        out.append(Check("dumbbell: no-disc region meets s = 0", U.meets_boundary, float(U.meets_boundary), 1.0))
    return out


def duality_suite(n: int = 129, nt: int = 101, ds: float = 0.01, progress: Optional[Callable] = None) -> list:
    atlas = Atlas(n)
    h = atlas.h
    dt = 1.0 / (nt - 1)
    tol = 1e-3 + 20 * h * h
    out = []
    for label, phi in (("zero", make_potential(PotentialSpec("zero"), atlas)),
                       ("dumbbell", make_potential(PotentialSpec("dumbbell"), atlas))):
        fam = compute_flow(phi, default_t_grid(nt), progress=progress)
        hm = build_phi_tilde(fam, make_s_grid(max(8.0, required_s_max(fam)), ds))
        err = duality_error(fam, hm, np.linspace(0, 1, 11))
        out.append(_le(f"{label}: Legendre roundtrip", err, tol, "1e-3 + 20h^2"))
        H = compute_H(hm)
        from .analysis import sample_points

        z = sample_points(atlas, 200)
        dev = float(np.max(np.abs(H.at(z, 0.0) + 1.0 - exit_time(fam, z))))
        out.append(_le(f"{label}: |H(z,1) + 1 - exit time| on 200 nodes", dev, dt + 1e-3, "dt + 1e-3"))
        if label == "zero":
            closed = float(np.max(np.abs(H.at(z, 0.0) + 1.0 / (1.0 + np.abs(z) ** 2))))
            out.append(_le("zero: H(z,1) vs -1/(1+|z|^2)", closed, dt + 1e-3, "dt + 1e-3"))
            v = float(hm.at(np.array([1 + 0j]), 1.0)[0])
            out.append(_le("zero: |Phi~(1, s=1) - log((1/e + 1)/2)|",
                           abs(v - (np.log(np.exp(-1) + 1) - np.log(2))), 1e-3))
    return out


SUITES = {"radial": radial_suite, "dumbbell": dumbbell_suite, "duality": duality_suite}
