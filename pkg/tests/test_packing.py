"""Periodic disk packings: densities, the triangle bound, tight families."""

import math

import numpy as np
import pytest

from hypack.geometry import klein_distance
from hypack.packing import (DensityReport, PeriodicPacking, SeparationError,
                            build_tight_packing, disk_area, ft_bound,
                            halved_octagon_packing, mc_density,
                            octagon_packing, periodic_density, shrink_factor,
                            tight_density, tight_radius, validate)

TIGHT7_DENSITY = 0.9142946128874598


def test_disk_area_limits():
    # small disks look euclidean, large ones grow like the circumference
    r = 1e-3
    assert abs(disk_area(r) / (math.pi * r * r) - 1.0) < 1e-6
    assert disk_area(5.0) / (2.0 * math.pi * math.sinh(5.0)) < 1.01


def test_shrink_factor_is_the_area_ratio():
    rng = np.random.default_rng(11)
    for _ in range(10):
        r = float(rng.uniform(0.05, 2.0))
        s = float(rng.uniform(0.01, r))
        want = disk_area(s) / disk_area(r)
        assert abs(shrink_factor(r, s) - want) < 1e-14


def test_shrunk_packing_scales_density_exactly():
    pk = octagon_packing()
    s = 0.17
    small = pk.shrunk(s)
    assert small.radius == s
    want = pk.density * shrink_factor(pk.radius, s)
    assert abs(small.density - want) < 1e-15


def test_octagon_descriptions_agree():
    full = octagon_packing()
    half = halved_octagon_packing()
    assert abs(full.density - half.density) < 1e-12
    # same disks on the plane: every center of one description appears
    # in the orbit of the other
    a = full.orbit_centers(2.5)
    b = half.orbit_centers(2.5)
    d = klein_distance(a[:, None, :], b[None, :, :])
    assert float(np.max(np.min(d, axis=1))) < 1e-8
    validate(full)
    validate(half)


def test_validate_rejects_overlapping_disks():
    pk = octagon_packing()
    fat = PeriodicPacking(pk.generators, pk.centers, 1.2, pk.domain)
    with pytest.raises(SeparationError):
        validate(fat)


def test_validate_rejects_center_listings_that_miss_orbit_points():
    pk = build_tight_packing(7)
    # an off-axis center has unlisted rotation images inside the cell
    bad = PeriodicPacking(pk.generators, [[0.3, 0.0]], 0.05, pk.domain)
    with pytest.raises(SeparationError):
        validate(bad)
    out = PeriodicPacking(pk.generators, [[0.9, 0.0]], 0.05, pk.domain)
    with pytest.raises(SeparationError):
        validate(out)


def test_monte_carlo_density_matches_exact():
    pk = octagon_packing()
    rep = mc_density(pk, 40000, seed=12)
    assert isinstance(rep, DensityReport)
    assert rep.samples == 40000
    assert abs(rep.value - pk.density) < 4.0 * rep.stderr
    again = mc_density(pk, 40000, seed=12)
    assert again.value == rep.value and again.stderr == rep.stderr
    with pytest.raises(ValueError):
        mc_density(pk, 0, seed=1)


def test_triangle_bound_shape():
    rs = np.arange(0.05, 6.0, 0.05)
    vals = np.array([ft_bound(r) for r in rs])
    assert np.all(np.diff(vals) > 0.0)
    # euclidean limit at small radius, three-over-pi at large radius
    assert abs(ft_bound(1e-4) - math.pi / math.sqrt(12.0)) < 1e-4
    assert abs(ft_bound(20.0) - 3.0 / math.pi) < 1e-6
    with pytest.raises(ValueError):
        ft_bound(0.0)


def test_tight_radius_touching_identity():
    # 2 sin(pi/k) cosh(r_k) = 1 defines the radius
    for k in (7, 9, 24):
        r = tight_radius(k)
        assert abs(2.0 * math.sin(math.pi / k) * math.cosh(r) - 1.0) < 1e-12
    assert tight_radius(8) < tight_radius(12)
    with pytest.raises(ValueError):
        tight_radius(6)
    with pytest.raises(ValueError):
        build_tight_packing(5)


def test_tight_packing_attains_the_bound():
    pk = build_tight_packing(7)
    assert abs(pk.density - TIGHT7_DENSITY) < 1e-12
    assert abs(periodic_density(pk) - pk.density) == 0.0
    assert abs(tight_density(7) - pk.density) < 1e-12
    for k in (7, 11, 19):
        assert abs(tight_density(k) - ft_bound(tight_radius(k))) < 1e-9
    # disks actually touch: orbit separation equals the diameter
    rep = validate(pk)
    assert abs(rep["separation"] - 2.0 * pk.radius) < 1e-9


def test_tight_density_monte_carlo_cross_check():
    pk = build_tight_packing(7)
    est = mc_density(pk, 60000, seed=13)
    assert abs(est.value - TIGHT7_DENSITY) < 4.0 * est.stderr


def test_tight_family_large_k_limit():
    assert abs(tight_density(1000) - 3.0 / math.pi) < 0.01
    assert tight_density(1000) < 3.0 / math.pi


def test_orbit_centers_window():
    pk = build_tight_packing(7)
    small = pk.orbit_centers(2.0)
    big = pk.orbit_centers(4.0)
    assert len(big) > len(small) >= 1
    assert np.max(klein_distance(small, np.zeros(2))) <= 2.0 + 1e-9
    d = klein_distance(big[:, None, :], big[None, :, :])
    np.fill_diagonal(d, np.inf)
    assert float(np.min(d)) > 2.0 * pk.radius - 1e-9
