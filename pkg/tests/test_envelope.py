import numpy as np
import pytest

from hsflow.envelope import compute_envelope, compute_flow, default_t_grid, equivalent_radius
from hsflow.geometry import CHARTS, Atlas
from hsflow.potentials import PotentialSpec, ZeroProfile, make_potential, radial_flow_oracle


def test_t_grid():
    np.testing.assert_array_equal(default_t_grid(1), [0.0])
    assert default_t_grid(5).tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ValueError):
        default_t_grid(0)


def test_time_zero_is_the_obstacle(zero65):
    s = zero65.snapshots[0]
    assert s.t == 0 and s.area == 0
    assert not s.mask.z.any() and not s.mask.w.any()
    np.testing.assert_array_equal(s.psi.z, zero65.phi.z)


def test_time_one_covers_the_sphere(zero65):
    s = zero65.snapshots[-1]
    assert s.t == 1.0
    assert s.area == pytest.approx(1.0, abs=0.02)


def test_areas_follow_time(zero65, radial65):
    # first order in h; n = 65 is a coarse grid
    assert np.max(np.abs(zero65.areas() - zero65.t_grid)) < 0.02
    assert np.max(np.abs(radial65.areas() - radial65.t_grid)) < 0.03


def test_zero_potential_matches_closed_form(zero65):
    k = 10
    snap = zero65.snapshots[k]
    assert snap.t == pytest.approx(0.5)
    oracle = radial_flow_oracle(ZeroProfile(), 0.5)
    g = zero65.atlas["Z"]
    sel = g.owned & g.interior & (g.coords != 0)
    err = np.max(np.abs(snap.psi.z[sel] - oracle.psi(g.coords[sel])))
    assert err < 5e-3
    assert abs(equivalent_radius(snap) - oracle.radius) < 2 * zero65.atlas.h


def test_masks_nested_and_psi_decreasing(radial65):
    """Rim nodes are bilinear copies of the other chart and are left out."""
    snaps = radial65.snapshots
    for a, b in zip(snaps, snaps[1:]):
        assert a.mask.issubset(b.mask)
        for c in CHARTS:
            act = radial65.atlas[c].interior & np.isfinite(b.psi[c])
            assert np.all(b.psi[c][act] <= a.psi[c][act] + 1e-9)


def test_psi_below_obstacle(radial65):
    for s in radial65.snapshots:
        for c in CHARTS:
            act = radial65.atlas[c].active
            assert np.all(s.psi[c][act] <= radial65.phi[c][act] + 1e-9)


def test_single_time_flow():
    fam = compute_flow(make_potential(PotentialSpec("zero"), Atlas(33)), default_t_grid(1))
    assert len(fam.snapshots) == 1 and fam.snapshots[0].area == 0


def test_bad_time_grids_rejected():
    phi = make_potential(PotentialSpec("zero"), Atlas(33))
    with pytest.raises(ValueError):
        compute_flow(phi, [0.2, 0.5])
    with pytest.raises(ValueError):
        compute_flow(phi, [0.0, 0.5, 0.4])
    with pytest.raises(ValueError):
        compute_envelope(phi, 1.5)


def test_independent_solves_match_warm_start(monkeypatch):
    phi = make_potential(PotentialSpec("radial"), Atlas(33))
    warm = compute_flow(phi, default_t_grid(6))
    monkeypatch.setenv("HSFLOW_JOBS", "2")
    cold = compute_flow(phi, default_t_grid(6), warm_start=False)
    for a, b in zip(warm.snapshots, cold.snapshots):
        assert a.area == pytest.approx(b.area, abs=1e-9)
        ok = np.isfinite(a.psi.z)
        assert np.max(np.abs(a.psi.z[ok] - b.psi.z[ok])) < 1e-7
