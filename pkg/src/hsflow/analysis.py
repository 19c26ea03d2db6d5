"""The analysis chain behind ``hsflow analyze``: Legendre, topology, discs and H.

``analyze_family`` turns a flow family into the report document (see
``io.REPORT_SCHEMA``) together with the in-memory objects it computed, so
callers such as the renderer or the tests can reuse them.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .discs import RIEMANN, enumerate_discs, verify_disc
from .geometry import CHARTS
from .hamiltonian import compute_H, exit_time, no_disc_region
from .legendre import DEFAULT_SMAX, build_phi_tilde, make_s_grid, required_s_max
from .topology import connectivity_report

log = logging.getLogger(__name__)

# Legendre tables are (n, n, ns) float64 per chart plus int16 maximizers
MEMORY_BUDGET_GB = float(os.environ.get("HSFLOW_MEMORY_GB", "3"))


class AnalysisError(RuntimeError):
    """A stage of the analysis failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class Analysis:
    report: dict
    hmae: object = None
    H: object = None
    topology: object = None
    discs: list = field(default_factory=list)
    no_disc: object = None


def legendre_memory_gb(n: int, ns: int) -> float:
    return 2 * n * n * ns * (8 + 2) / 1e9


def sample_points(atlas, count: int = 200, seed: int = 0) -> np.ndarray:
    """``count`` owned active nodes of both charts, drawn with a fixed seed.

    Nodes are used (rather than arbitrary points) so that grid quantities
    are compared without interpolation.
    """
    pts = []
    for c in CHARTS:
        g = atlas[c]
        pts.append(g.to_sphere()[g.owned & g.interior])
    pts = np.concatenate(pts)
    rng = np.random.default_rng(seed)
    return pts[np.sort(rng.choice(pts.size, size=min(count, pts.size), replace=False))]


def _h_checks(H, family, samples: int, dt: float) -> dict:
    lo = min(float(np.nanmin(H.values[c])) for c in CHARTS)
    hi = max(float(np.nanmax(H.values[c])) for c in CHARTS)
    mono = True
    for c in CHARTS:
        with np.errstate(invalid="ignore"):
            d = np.diff(H.values[c], axis=2)
        mono &= not bool((d < -1e-12).any())
    z = sample_points(family.atlas, samples)
    et = exit_time(family, z)
    h1 = H.at(z, 0.0) + 1.0
    dev = np.abs(h1 - et)
    return {
        "range": [lo, hi],
        "range_ok": bool(lo >= -1.0 - 1e-12 and hi <= 1e-12),
        "monotone_in_s": bool(mono),
        "exit_time_samples": int(z.size),
        "exit_time_max_dev": float(dev.max()),
        "exit_time_tolerance": dt + 1e-3,
        "exit_time_ok": bool(dev.max() <= dt + 1e-3),
        "derivative_convention": "largest maximizing time (right derivative in s)",
    }


def analyze_family(family, *, s_max=DEFAULT_SMAX, ns: Optional[int] = None, ds: float = 0.01,
                   t1: Optional[float] = None, t2: Optional[float] = None,
                   disc_times: Optional[Sequence[float]] = None, exit_samples: int = 200,
                   max_boundary: int = 16) -> Analysis:
    """Run every analysis stage on ``family`` and assemble the report.

    ``s_max`` may be ``"auto"`` (the largest hull slope, at least the
    default), which makes the Legendre roundtrip exact on the stored grid.
    ``ns`` (number of ``s`` samples) overrides ``ds``.  Without explicit
    ``t1``/``t2`` the no-disc region uses the detected window, if any.
    """
    t_grid = np.asarray(family.t_grid)
    if t_grid.size < 2:
        raise AnalysisError("legendre", "the flow needs at least two times")
    dt = float(np.max(np.diff(t_grid)))
    try:
        if s_max == "auto":
            s_max = max(DEFAULT_SMAX, required_s_max(family))
        s_max = float(s_max)
        s_grid = np.linspace(0.0, s_max, int(ns)) if ns else make_s_grid(s_max, ds)
        need = legendre_memory_gb(family.atlas.n, s_grid.size)
        if need > MEMORY_BUDGET_GB:
            raise AnalysisError("legendre", f"tables need {need:.1f} GB (budget {MEMORY_BUDGET_GB:g} GB, "
                                            "HSFLOW_MEMORY_GB); use a coarser grid or fewer s samples")
        hmae = build_phi_tilde(family, s_grid)
    except AnalysisError:
        raise
    except (ValueError, MemoryError) as exc:
        raise AnalysisError("legendre", str(exc)) from exc
    topo = connectivity_report(family)
    try:
        H = compute_H(hmae)
        hc = _h_checks(H, family, exit_samples, dt)
    except ValueError as exc:
        raise AnalysisError("hamiltonian", str(exc)) from exc
    try:
        discs = enumerate_discs(family, topo, disc_times, max_boundary=max_boundary)
        for d in discs:
            verify_disc(hmae, d)
    except Exception as exc:  # surfaced with the stage name by the CLI
        raise AnalysisError("discs", str(exc)) from exc
    tol_disc = 1e-3 + 20 * family.atlas.h ** 2
    by_kind = {}
    for d in discs:
        if d.residual:
            by_kind.setdefault(d.kind, []).append(d)
    residuals = {
        "solver_residual_max": float(max(s.residual for s in family.snapshots)),
        "disc_tolerance": {"center": 1e-3, "boundary_constant": 1e-3, "riemann": tol_disc,
                           "H_constancy": dt + 1e-3},
    }
    for kind, ds_ in by_kind.items():
        residuals[f"{kind}_max"] = max(d.residual["max"] for d in ds_)
        residuals[f"{kind}_H_max_dev"] = max(d.residual["H_max_dev"] for d in ds_)
        residuals[f"{kind}_H_std"] = max(d.residual["H_std"] for d in ds_)
    riemann = by_kind.get(RIEMANN, [])
    if riemann:
        residuals["riemann_cr_max"] = max(d.residual["cr_residual"] for d in riemann)
        residuals["riemann_boundary_max"] = max(d.residual["boundary_error"] for d in riemann)
    # constancy of H along a disc is judged by its sample standard deviation;
    # the largest pointwise deviation (front nodes, where s is tiny) is reported too
    hc["disc_constancy_std_max"] = max((d.residual.get("H_std", 0.0) for d in discs if d.residual), default=0.0)
    hc["disc_constancy_max_dev"] = max((d.residual.get("H_max_dev", 0.0) for d in discs if d.residual), default=0.0)
    hc["disc_constancy_ok"] = bool(hc["disc_constancy_std_max"] <= dt + 1e-3)
    window = topo.window
    nd = None
    if t1 is None and t2 is None and window is not None:
        t1, t2 = window
    if t1 is not None and t2 is not None:
        U = no_disc_region(H, float(t1), float(t2))
        nd = U.summary()
    else:
        U = None
    report = {
        "t": [float(x) for x in t_grid],
        "area": [float(s.area) for s in family.snapshots],
        "domain_components": topo.column("domain_components"),
        "complement_components": topo.column("complement_components"),
        "simply_connected": topo.column("simply_connected"),
        "window": None if window is None else [float(window[0]), float(window[1])],
        "discs": [d.to_json() for d in discs],
        "residuals": residuals,
        "H_checks": hc,
        "no_disc_region": nd,
        "meta": {"n": family.atlas.n, "extent": family.atlas.extent, "h": family.atlas.h,
                 "dt": dt, "s_max": s_max, "ns": int(s_grid.size),
                 "topology_violations": topo.violations},
    }
    return Analysis(report, hmae, H, topo, discs, U)
