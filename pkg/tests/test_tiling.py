"""Regular tessellations: closed-form geometry and tile enumeration."""

import math

import numpy as np
import pytest

from hypack.geometry import GeometryError, klein_distance, metric_angle
from hypack.packing import disk_area, tight_radius
from hypack.tiling import (TilingFamily, build_tile, edge_flips,
                           edge_midpoints, tiling_geometry,
                           tiling_vertices_within)


def test_euclidean_and_spherical_pairs_rejected():
    for s, a in ((3, 6), (4, 4), (6, 3), (3, 5), (2, 9), (5, 3)):
        with pytest.raises(GeometryError):
            tiling_geometry(s, a)


def test_closed_form_dimensions_match_the_built_tile():
    for s, a in ((3, 7), (4, 5), (5, 4), (7, 3), (3, 20)):
        geo = tiling_geometry(s, a)
        tile = build_tile(s, a)
        v = tile.vertices
        assert len(tile) == s
        d0 = klein_distance(v, np.zeros(2))
        assert np.allclose(d0, geo.circumradius, atol=1e-12)
        edges = klein_distance(v, np.roll(v, -1, axis=0))
        assert np.allclose(edges, geo.edge_length, atol=1e-10)
        mid = edge_midpoints(s, a)
        dm = klein_distance(mid, np.zeros(2))
        assert np.allclose(dm, geo.inradius, atol=1e-10)
        # interior angle at each vertex closes up a times around
        ang = metric_angle(v[0], v[1] - v[0], v[-1] - v[0])
        assert abs(ang - 2.0 * math.pi / a) < 1e-10
        assert abs(tile.area - geo.area) < 1e-10


def test_area_closed_form_sample():
    # the full (s, a) sweep runs in the acceptance suite
    for s, a in ((3, 7), (3, 20), (5, 5), (20, 3), (11, 13)):
        geo = tiling_geometry(s, a)
        want = (s - 2.0 - 2.0 * s / a) * math.pi
        assert abs(build_tile(s, a).area - want) < 1e-8
        assert abs(geo.area - want) < 1e-12


def test_triangle_edge_doubles_the_tight_radius():
    # vertices of the {3, 7} tessellation form the 7-tight packing, so
    # a full edge is two touching radii
    geo = tiling_geometry(3, 7)
    assert abs(geo.edge_length - 2.0 * tight_radius(7)) < 1e-12


def test_edge_flips_are_involutions_onto_neighbors():
    s, a = 4, 5
    geo = tiling_geometry(s, a)
    mids = edge_midpoints(s, a)
    for flip, mid in zip(edge_flips(s, a), mids):
        assert np.allclose(flip.apply(mid), mid, atol=1e-12)
        assert (flip @ flip).is_identity()
        img = flip.apply(np.zeros(2))
        assert abs(float(klein_distance(img, np.zeros(2)))
                   - 2.0 * geo.inradius) < 1e-9


def test_family_counts_obey_area_bracketing():
    fam = TilingFamily(3, 7)
    geo = tiling_geometry(3, 7)
    for d in (1.0, 2.0, 3.0):
        fam.ensure_radius(d)
        n = int(np.sum(klein_distance(fam.centers, np.zeros(2)) <= d))
        assert n * geo.area >= disk_area(max(d - geo.circumradius, 0.0))
        assert n * geo.area <= disk_area(d + geo.circumradius)


def test_family_isometries_place_the_base_tile():
    fam = TilingFamily(5, 4)
    fam.ensure_radius(1.5)
    assert len(fam) > 1
    for i in (0, 1, len(fam) - 1):
        iso = fam.isometry(i)
        assert np.allclose(iso.apply(np.zeros(2)), fam.center(i), atol=1e-9)
        assert np.allclose(fam.polygon(i).vertices,
                           iso.apply(fam.polygon(0).vertices), atol=1e-9)


def test_locate_returns_a_containing_tile():
    fam = TilingFamily(3, 7)
    fam.ensure_radius(2.5)
    rng = np.random.default_rng(10)
    rho = math.tanh(2.0)
    pts = rho * np.sqrt(rng.uniform(0, 1, 40))[:, None] \
        * np.stack([np.cos(t := rng.uniform(0, 2 * math.pi, 40)),
                    np.sin(t)], axis=1)
    assert fam.locate(np.zeros(2)) == 0
    for p in pts:
        i = fam.locate(p)
        assert fam.polygon(i).contains(np.atleast_2d(p), margin=1e-9)[0]
        assert fam.locate(p) == i


def test_vertex_points_of_the_triangular_tiling():
    pts = tiling_vertices_within(3, 7, 2.0)
    geo = tiling_geometry(3, 7)
    d = klein_distance(pts[:, None, :], pts[None, :, :])
    np.fill_diagonal(d, np.inf)
    assert abs(float(np.min(d)) - geo.edge_length) < 1e-9
    # the nearest shell sits at the circumradius
    d0 = np.sort(klein_distance(pts, np.zeros(2)))
    assert abs(d0[0] - geo.circumradius) < 1e-9
    more = tiling_vertices_within(3, 7, 3.0)
    assert len(more) > len(pts)


def test_vertex_counts_scale_like_area():
    # each vertex meets a triangles, each triangle has 3 vertices
    geo = tiling_geometry(3, 7)
    pts = tiling_vertices_within(3, 7, 4.0)
    per_vertex = 7.0 * geo.area / 3.0
    lo = disk_area(4.0 - 2.0 * geo.circumradius) / per_vertex
    hi = disk_area(4.0 + 2.0 * geo.circumradius) / per_vertex
    assert lo <= len(pts) <= hi
