import numpy as np
import pytest

from hsflow.discs import (BOUNDARY_CONSTANT, CENTER, NO_DISC, RIEMANN, DomainError, disc_level, enumerate_discs,
                          riemann_map, verify_disc)
from hsflow.geometry import Atlas, SphereMask
from hsflow.legendre import build_phi_tilde, make_s_grid
from hsflow.topology import connectivity_report


def _disc_map(atlas, radius):
    level = disc_level(atlas, radius)
    mask = SphereMask(atlas, level.z > 0, level.w > 0)
    return riemann_map(mask, level)


@pytest.mark.parametrize("radius", [0.5, 1.0, 2.0])
def test_disc_maps_are_dilations(radius):
    atlas = Atlas(129)
    fmap = _disc_map(atlas, radius)
    g = atlas["Z"]
    z = g.coords
    sel = (np.abs(z) > 0) & (np.abs(z) < 0.9 * min(radius, 1.4))
    F = fmap.values_z()[sel]
    assert np.max(np.abs(F - z[sel] / radius)) * radius < 0.01 * np.abs(z[sel]).max()
    assert fmap.derivative_at_origin() == pytest.approx(1 / radius, rel=1e-3)
    assert fmap.values_z()[g.center, g.center] == 0
    # |F| = 1 on the boundary band and a conformal discrete map
    assert fmap.boundary_error <= 5 * atlas.h + 1e-8
    assert fmap.cr_residual <= 10 * atlas.h


def test_interpolated_map():
    fmap = _disc_map(Atlas(129), 0.5)
    pts = np.array([0.1 + 0.05j, -0.2 + 0.1j])
    np.testing.assert_allclose(fmap.at(pts), 2 * pts, rtol=1e-3)


def test_rejects_annulus_and_missing_origin():
    atlas = Atlas(65)
    ann = SphereMask.from_predicate(atlas, lambda z: (np.abs(z) > 0.2) & (np.abs(z) < 0.8)).harmonized()
    with pytest.raises(DomainError, match="origin"):
        riemann_map(ann)
    holed = SphereMask.from_predicate(atlas, lambda z: (np.abs(z) < 0.8) & (np.abs(z - 0.5) > 0.1)).harmonized()
    with pytest.raises(DomainError, match="simply connected"):
        riemann_map(holed)
    off = SphereMask.from_predicate(atlas, lambda z: np.abs(z - 0.6) < 0.3).harmonized()
    with pytest.raises(DomainError):
        riemann_map(off)


@pytest.fixture(scope="module")
def zero_discs(zero65):
    hm = build_phi_tilde(zero65, make_s_grid(8.0, 0.01))
    discs = enumerate_discs(zero65, connectivity_report(zero65), [0.25, 0.5])
    for d in discs:
        verify_disc(hm, d)
    return discs


def test_center_disc(zero_discs):
    c = [d for d in zero_discs if d.kind == CENTER]
    assert len(c) == 1
    assert c[0].H_value == -1.0
    assert c[0].residual["max"] <= 1e-6
    assert c[0].residual["H_max_dev"] == 0.0


def test_boundary_constant_discs(zero_discs):
    bc = [d for d in zero_discs if d.kind == BOUNDARY_CONSTANT]
    assert bc, "the contact set of psi_1 contains infinity"
    for d in bc:
        assert d.H_value == 0.0
        assert d.residual["max"] <= 1e-3


def test_riemann_discs(zero_discs, zero65):
    h = zero65.atlas.h
    rs = [d for d in zero_discs if d.kind == RIEMANN]
    assert [d.t for d in rs] == [0.25, 0.5]
    for d in rs:
        assert d.H_value == pytest.approx(d.t - 1)
        assert d.residual["max"] <= 1e-3 + 20 * h * h
        assert d.residual["H_std"] <= 0.05 + 1e-3
        assert d.residual["cr_residual"] <= 10 * h


def test_descriptor_json(zero_discs):
    docs = [d.to_json() for d in zero_discs]
    assert {doc["kind"] for doc in docs} == {CENTER, BOUNDARY_CONSTANT, RIEMANN}
    assert all("residual" in doc for doc in docs)


def test_marker_inside_dumbbell_window(dumbbell129):
    rep = connectivity_report(dumbbell129)
    t1, t2 = rep.window
    mid = dumbbell129.t_grid[(dumbbell129.t_grid >= t1) & (dumbbell129.t_grid <= t2)][1]
    discs = enumerate_discs(dumbbell129, rep, [mid], compute_maps=False)
    kinds = [d.kind for d in discs]
    assert CENTER in kinds
    assert RIEMANN not in kinds
    marker = [d for d in discs if d.kind == NO_DISC]
    assert len(marker) == 1 and marker[0].t == pytest.approx(mid)
