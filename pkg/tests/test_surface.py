import numpy as np
import pytest

from roughwave import (
    PeriodicGrid,
    catalog,
    dnu0_density,
    flatten,
    foliation_slice,
    make_surface,
)
from roughwave.surface import SurfaceError, build_surface


def test_flat_cone_null_with_two_kinks(grid128):
    prob = catalog("flat1d", grid128)
    cone = make_surface("cone", grid128, prob.metric)
    assert cone.classification == "null"
    assert cone.kink_mask.sum() == 2
    res = cone.residual
    assert np.max(np.abs(res[~cone.kink_mask])) < 1e-10
    # kinks sit at the vertex and the far point
    idx = np.where(cone.kink_mask)[0]
    assert set(idx) == {0, 64}


def test_tilted_surface_residual_formula(grid256):
    prob = catalog("flat1d", grid256)
    x = grid256.axis_coords(0)
    surf = build_surface(grid256, 0.5 * np.sin(x), prob.metric)
    assert surf.classification == "spacelike"
    oracle = 0.25 * np.cos(x) ** 2 - 1.0
    assert np.max(np.abs(surf.residual - oracle)) < 5 * grid256.spacing[0] ** 2
    assert np.max(surf.residual) <= -0.74


def test_steep_surface_is_timelike(grid128):
    prob = catalog("flat1d", grid128)
    x = grid128.axis_coords(0)
    L = grid128.lengths[0]
    d = np.minimum(x, L - x)
    surf = build_surface(grid128, 2.0 * d, prob.metric)
    assert surf.classification == "timelike_invalid"
    live = surf.residual[~surf.kink_mask]
    assert np.max(np.abs(live - 3.0)) < 1e-10
    with pytest.raises(SurfaceError):
        dnu0_density(surf, prob.metric)


def test_classification_catalog(grid128):
    prob = catalog("flat1d", grid128)
    assert make_surface("slice", grid128, prob.metric).classification == "spacelike"
    assert make_surface("cone", grid128, prob.metric).classification == "null"
    flatcone = make_surface("flatcone", grid128, prob.metric)
    assert flatcone.classification == "weakly_spacelike"
    # piecewise oracle: residual is 0 on the cone part, -1 on the cap
    live = ~flatcone.kink_mask
    on_cap = flatcone.phi >= 0.5 * np.pi - 1e-9
    assert np.max(np.abs(flatcone.residual[live & on_cap] + 1.0)) < 1e-10
    assert np.max(np.abs(flatcone.residual[live & ~on_cap])) < 1e-10
    with pytest.raises(SurfaceError):
        make_surface("paraboloid", grid128, prob.metric)


def test_dnu0_density_values(grid256):
    prob = catalog("flat1d", grid256)
    cone = make_surface("cone", grid256, prob.metric)
    dens = dnu0_density(cone, prob.metric)
    assert np.max(np.abs(dens.values[~cone.kink_mask])) < 1e-10
    slice0 = make_surface("slice", grid256, prob.metric)
    np.testing.assert_allclose(dnu0_density(slice0, prob.metric).values, 1.0, atol=1e-13)
    x = grid256.axis_coords(0)
    tilted = build_surface(grid256, 0.5 * np.sin(x), prob.metric)
    oracle = 1.0 - 0.25 * np.cos(x) ** 2
    np.testing.assert_allclose(
        dnu0_density(tilted, prob.metric).values, oracle, atol=5 * grid256.spacing[0] ** 2
    )


def test_eikonal_ode_cone_under_smooth_metric(grid256):
    prob = catalog("smooth1d", grid256)
    cone = make_surface("cone", grid256, prob.metric)
    assert cone.classification == "null"
    assert np.max(np.abs(cone.residual[~cone.kink_mask])) < 1e-6
    # stored slopes agree with differenced samples away from the kinks
    from roughwave.grid import diff_values

    dc = diff_values(cone.phi, grid256.spacing[0], 0, "centered2")
    interior = ~cone.kink_mask
    for off in (-1, 0, 1):
        interior &= ~np.roll(cone.kink_mask, off)
    assert np.max(np.abs(dc[interior] - cone.grad_phi[0][interior])) < 5e-4
    # phi is even around the vertex for this even metric
    assert cone.phi[1] == pytest.approx(cone.phi[-1], abs=1e-10)


def test_cone_under_c1_metric():
    g = PeriodicGrid(128)
    prob = catalog("c1_1d", g)
    cone = make_surface("cone", g, prob.metric, match_tol=1e-4)
    assert cone.classification == "null"
    assert np.max(np.abs(cone.residual[~cone.kink_mask])) < 1e-6


def test_foliation_slice(grid128):
    prob = catalog("flat1d", grid128)
    cone = make_surface("cone", grid128, prob.metric)
    same = foliation_slice(cone, 0.0)
    np.testing.assert_allclose(same.phi, cone.phi)
    assert same.classification == cone.classification
    # flat (time-independent) metric: classification invariant under shifts
    for t in (-1.0, 0.7, 2.0):
        assert foliation_slice(cone, t).classification == "null"
    # constant shifts leave the tilted classification alone too
    x = grid128.axis_coords(0)
    tilted = build_surface(grid128, 0.5 * np.sin(x), prob.metric)
    assert foliation_slice(tilted, 1.3).classification == "spacelike"


def test_foliation_slice_c1_drift():
    g = PeriodicGrid(128)
    prob = catalog("c1_1d", g)
    cone = make_surface("cone", g, prob.metric, match_tol=1e-4)
    shifted = foliation_slice(cone, 0.5)
    live = ~shifted.kink_mask
    drift = np.max(np.abs(shifted.residual[live]))
    # metric drift is eps * t * cos x with eps = 0.1 and |grad phi|^2 <= 1/g_min
    assert 0 < drift <= 0.1 * 0.5 * 1.5
    assert shifted.classification in ("weakly_spacelike", "timelike_invalid", "null")


def test_flatten_identity_and_cone(grid128):
    prob = catalog("flat1d", grid128)
    slice0 = make_surface("slice", grid128, prob.metric)
    tp = flatten(prob.metric, prob.op, slice0, 0.5)
    np.testing.assert_allclose(tp.a.values, 1.0, atol=1e-13)
    for c in tp.cross:
        np.testing.assert_allclose(c.values, 0.0, atol=1e-13)

    cone = make_surface("cone", grid128, prob.metric)
    tp2 = flatten(prob.metric, prob.op, cone, 0.75)
    live = ~cone.kink_mask
    np.testing.assert_allclose(tp2.a.values[live], 0.25, atol=1e-10)
    # algebraic identity a + lam g dphi dphi = 1 at every node
    m = prob.metric.matrix(0.0)[..., 0, 0]
    q = m * cone.grad_phi[0] ** 2
    np.testing.assert_allclose(tp2.a.values + 0.75 * q, 1.0, atol=1e-13)


def test_flatten_smooth_metric_minimum(grid256):
    prob = catalog("smooth1d", grid256)
    x = grid256.axis_coords(0)
    surf = build_surface(grid256, 0.5 * np.sin(x), prob.metric)
    lam = 0.9
    tp = flatten(prob.metric, prob.op, surf, lam)
    # dense sampling oracle for min a = 1 - 0.9 (1 + sin^2/2)(cos^2/4)
    xs = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
    oracle = np.min(1 - lam * (1 + 0.5 * np.sin(xs) ** 2) * 0.25 * np.cos(xs) ** 2)
    assert np.min(tp.a.values) == pytest.approx(oracle, abs=1e-3)


def test_flatten_rejects_bad_lambda_and_timelike(grid128):
    prob = catalog("flat1d", grid128)
    cone = make_surface("cone", grid128, prob.metric)
    with pytest.raises(SurfaceError):
        flatten(prob.metric, prob.op, cone, 1.0)
    with pytest.raises(SurfaceError):
        flatten(prob.metric, prob.op, cone, -0.1)
    x = grid128.axis_coords(0)
    L = grid128.lengths[0]
    steep = build_surface(grid128, 2.0 * np.minimum(x, L - x), prob.metric)
    with pytest.raises(SurfaceError):
        flatten(prob.metric, prob.op, steep, 0.9)


def test_kink_fraction_vanishes_under_refinement():
    fracs = []
    for n in (64, 128, 256):
        g = PeriodicGrid(n)
        prob = catalog("flat1d", g)
        cone = make_surface("cone", g, prob.metric)
        fracs.append(cone.kink_mask.sum() / n)
    assert fracs[0] > fracs[1] > fracs[2]


def test_2d_cone_and_slice():
    g = PeriodicGrid((32, 32))
    prob = catalog("flat2d", g)
    cone = make_surface("cone", g, prob.metric)
    assert cone.classification == "null"
    live = ~cone.kink_mask
    assert np.max(np.abs(cone.residual[live])) < 1e-10
    slice0 = make_surface("slice", g, prob.metric)
    assert slice0.classification == "spacelike"


def test_surface_csv(tmp_path, grid128):
    prob = catalog("flat1d", grid128)
    cone = make_surface("cone", grid128, prob.metric)
    text = cone.to_csv(tmp_path / "surface.csv")
    lines = text.strip().split("\n")
    assert lines[1] == "x,phi,residual,kink_flag"
    assert len(lines) == 2 + 128


def test_classify_is_total(grid128):
    prob = catalog("flat1d", grid128)
    rng = np.random.default_rng(2)
    for _ in range(5):
        phi = 0.3 * rng.standard_normal() * np.sin(grid128.axis_coords(0) + rng.uniform(0, 6))
        surf = build_surface(grid128, phi, prob.metric)
        assert surf.classification in (
            "spacelike", "null", "weakly_spacelike", "timelike_invalid",
        )
