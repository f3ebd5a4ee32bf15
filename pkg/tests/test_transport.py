"""Free-group domains, packing colorings, and fundamental-domain averaging."""

import math
import types
from fractions import Fraction

import numpy as np
import pytest

from hypack.geometry import Isometry, klein_distance
from hypack.homothety import WindowPacking
from hypack.packing import build_tight_packing, disk_area
from hypack.shifts import (PeriodicColoring, QuotientSystem, ball,
                           build_quotient, components, periodic_measure,
                           rationalize_weights, reduce_word, validate_weights)
from hypack.transport import (ColoringFamily, Discretization, EncodingError,
                              FreeGroupEmbedding, IndexedAlphabet, OrbitFamily,
                              PeriodicFamily, average_functional,
                              averaged_coverage, coverage_functional, decode,
                              default_free_group, dirichlet_domain, discretize,
                              empirical_weights, encode, invariance_test,
                              mixed_coverage, sample_group_fiber)

ARCCOSH3 = 1.762747174039086
TIGHT7_DENSITY = 0.9142946128874598


def disk_sample(rng, n, rho):
    """n points area-uniform in the euclidean disk of radius rho."""
    r = rho * np.sqrt(rng.uniform(0, 1, n))
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


def grid_for(emb, x, delta):
    """Discretization with the mesh sized for snap moves of delta/2."""
    spread = math.sinh(x) / x
    mesh = delta / (math.sqrt(2.0) * math.hypot(1.0, spread))
    return Discretization(emb, x, delta, mesh)


def same_point_set(a, b, tol=1e-8):
    """Rows of a and b match pairwise within tol, in some order."""
    if a.shape != b.shape:
        return False
    if len(a) == 0:
        return True
    d = np.abs(a[:, None, :] - b[None, :, :]).max(axis=2)
    return d.min(axis=1).max() < tol and d.min(axis=0).max() < tol


def test_default_domain_shape():
    emb = default_free_group()
    assert emb.n == 2
    dom = emb.domain
    assert len(dom.vertices) == 4
    assert sorted(dom.edge_sources) == [(-2,), (-1,), (1,), (2,)]
    # three cusps pinch off area; the tiny deficit is the ideal-vertex clamp
    assert 0.0 < 2.0 * math.pi - dom.area < 5e-6


def test_relation_defect_certifies_freeness():
    emb = default_free_group()
    d = emb.relation_defect(8)
    assert abs(d - ARCCOSH3) < 1e-9
    assert d >= 1e-6


def test_dirichlet_second_basepoint():
    gens = default_free_group().generators
    dom = dirichlet_domain(gens, basepoint=(0.25, 0.15))
    assert len(dom.vertices) == 6
    assert 0.0 < 2.0 * math.pi - dom.area < 5e-6


def test_fold_word_isometry_point_agree():
    emb = default_free_group()
    rng = np.random.default_rng(4)
    pts = disk_sample(rng, 40, math.tanh(3.0))
    folded = emb.fold_points(pts)
    for p, fp in zip(pts, folded):
        w, gam, q = emb.fold(p)
        assert np.allclose(gam.matrix, emb.word_matrix(w), atol=1e-9)
        assert np.max(np.abs(gam.apply(p) - q)) < 1e-9
        assert emb.domain.contains(q[None], margin=1e-9)[0]
        assert np.max(np.abs(fp - q)) < 1e-9


def test_fold_returns_from_afar():
    emb = default_free_group()
    p = math.tanh(7.0) * np.array([math.cos(0.5), math.sin(0.5)])
    w, gam, q = emb.fold(p)
    assert len(w) >= 2
    assert emb.domain.contains(q[None], margin=1e-9)[0]


def test_tile_enumeration():
    emb = default_free_group()
    for reach, count in ((1.0, 5), (2.5, 21), (4.0, 153), (5.0, 485)):
        words, mats, dist = emb.tile_words(reach)
        assert len(words) == count == len(mats) == len(dist)
    words, mats, dist = emb.tile_words(1.0)
    assert words[0] == () and dist[0] == 0.0
    for w, m, d in zip(words, mats, dist):
        assert np.allclose(m, emb.word_matrix(w), atol=1e-9)
        if len(w) == 1:
            # neighboring copies meet along the orbit-point bisectors
            assert abs(d - ARCCOSH3 / 2.0) < 1e-9


def test_encode_decode_roundtrip():
    pk = build_tight_packing(7)
    emb = default_free_group()
    col = encode(pk, emb, 2)
    assert col.total() > 0 and col.window_words == 2
    dec = decode(col)
    assert dec.radius == pk.radius
    col2 = encode(dec, emb, 2)
    assert set(col2.values) == set(col.values)
    for w in col.values:
        a = np.array(sorted(map(tuple, col.values[w])))
        b = np.array(sorted(map(tuple, col2.values[w])))
        assert a.shape == b.shape
        if len(a):
            assert np.allclose(a, b, atol=1e-9)


def test_encode_is_equivariant():
    pk = build_tight_packing(7)
    emb = default_free_group()
    master = pk.orbit_centers(6.5)
    base = WindowPacking(master, pk.radius, 6.5, validate=False)
    right = encode(base, emb, 5)
    for f in [(1,), (-2,), (1, 2), (2, -1, -1)]:
        finv = tuple(-l for l in reversed(f))
        shifted = WindowPacking(emb.isometry(f).apply(master), pk.radius,
                                12.0, validate=False)
        left = encode(shifted, emb, 2)
        for w in ball(2, 2):
            assert same_point_set(left.values[w],
                                  right.values[reduce_word(finv, w)])


def test_encode_rejects_boundary_centers():
    emb = default_free_group()
    v = emb.domain.vertices
    mid = 0.5 * (v[0] + v[1])
    wp = WindowPacking([mid], 0.3, 8.0, validate=False)
    with pytest.raises(EncodingError):
        encode(wp, emb, 0)


def test_encode_empty_packing():
    emb = default_free_group()
    empty = WindowPacking(np.empty((0, 2)), 0.3, 1.0)
    col = encode(empty, emb, 1)
    assert col.total() == 0
    assert len(decode(col)) == 0


def test_discretize_stays_close():
    pk = build_tight_packing(7)
    emb = default_free_group()
    col = encode(pk, emb, 0)
    x, delta = 1.2, 0.1
    dcol, disc = discretize(col, x, delta)
    assert abs(dcol.radius - (col.radius - delta)) < 1e-15
    orig = col.values[()]
    snap = dcol.values[()]
    kept = orig[klein_distance(orig, np.zeros(2)) <= x - 1e-9]
    assert len(snap) == len(kept)
    for p in kept:
        assert float(klein_distance(snap, p).min()) <= delta / 2 + 1e-9
    for q in snap:
        assert float(klein_distance(orig, q).min()) <= delta / 2 + 1e-9
    # shrunk radius keeps the decoded packing separation-valid
    decode(dcol)
    for bad in (0.0, -0.1, col.radius, 1.0):
        with pytest.raises(EncodingError):
            discretize(col, x, bad)


def test_discretization_cells():
    emb = default_free_group()
    disc = grid_for(emb, 1.0, 0.2)
    rng = np.random.default_rng(6)
    pts = disk_sample(rng, 5, math.tanh(0.9))
    cell = disc.cell_of(pts)
    assert disc.cell_of(pts) == cell
    assert len(cell) == len(pts)
    # snapping is idempotent: representatives land back in their own cell
    assert disc.cell_of(disc.rep(cell)) == cell
    assert disc.rep(frozenset()).shape == (0, 2)
    assert disc.cell_of(np.empty((0, 2))) == frozenset()
    assert frozenset() in disc.alphabet()
    assert cell in disc.alphabet()


def test_indexed_alphabet_guard():
    emb = default_free_group()
    disc = grid_for(emb, 0.5, 0.3)
    empty = disc.cell_of(np.empty((0, 2)))
    full = disc.cell_of([[0.1, 0.0]])
    alpha = IndexedAlphabet(disc, [empty, full])
    assert alpha.rep(0).shape == (0, 2)
    assert len(alpha.rep(1)) == 1
    with pytest.raises(EncodingError):
        IndexedAlphabet(disc, [full, empty])


def test_sample_group_fiber_law():
    emb = default_free_group()
    rng = np.random.default_rng(17)
    n = 2000
    gs = [sample_group_fiber(emb, rng) for _ in range(n)]
    zs = np.array([g.apply(np.zeros(2)) for g in gs])
    assert emb.domain.contains(zs, margin=1e-9).all()
    rho = np.hypot(zs[:, 0], zs[:, 1])
    assert np.all(rho <= math.tanh(8.0) + 1e-12)
    # the point marginal is area-uniform: ball frequencies follow areas
    p = disk_area(0.8) / (2.0 * math.pi)
    frac = float(np.mean(np.arctanh(rho) <= 0.8))
    assert abs(frac - p) <= 4.0 * math.sqrt(p * (1 - p) / n)
    # the rotation marginal is uniform on the circle
    cs = np.empty(n)
    for k, (g, z) in enumerate(zip(gs, zs)):
        m = (Isometry.translation_to(z).inverse @ g).matrix
        cs[k] = math.cos(math.atan2(m[1, 0], m[0, 0]))
    assert abs(float(np.mean(cs))) <= 4.0 / math.sqrt(2.0 * n)


def test_orbit_family_exact_oracle():
    emb = default_free_group()
    fam = OrbitFamily(emb, [[0.0, 0.0]], 0.5)
    est, se = averaged_coverage(fam, 40_000, seed=7)
    # one disk per domain copy: the mean is the disk-to-domain area ratio
    oracle = disk_area(0.5) / (2.0 * math.pi)
    assert se > 0.0
    assert abs(est - oracle) <= 4.0 * se


def test_generic_average_matches_batched():
    emb = default_free_group()
    fam = OrbitFamily(emb, [[0.0, 0.0]], 0.5)
    pt = (0.3, -0.1)
    e1, s1 = average_functional(coverage_functional(pt), fam, 1500, seed=9)
    e2, s2 = averaged_coverage(fam, 30_000, seed=10, point=pt)
    assert abs(e1 - e2) <= 4.0 * math.hypot(s1, s2)
    # the family is invariant under its own group, so moving the
    # observation point must not move the mean
    oracle = disk_area(0.5) / (2.0 * math.pi)
    assert abs(e2 - oracle) <= 4.0 * s2


def test_periodic_family_recovers_density():
    fam = PeriodicFamily(build_tight_packing(7))
    est, se = averaged_coverage(fam, 40_000, seed=21)
    assert abs(est - TIGHT7_DENSITY) <= 4.0 * se


def test_two_domains_agree():
    emb = default_free_group()
    gens = emb.generators
    dom2 = dirichlet_domain(gens, basepoint=(0.25, 0.15))
    emb2 = FreeGroupEmbedding(gens, dom2, basepoint=(0.25, 0.15))
    fam = OrbitFamily(emb, [[0.1, 0.05]], 0.45)
    e1, s1 = averaged_coverage(fam, 30_000, seed=31)
    e2, s2 = averaged_coverage(fam, 30_000, seed=32, emb=emb2)
    assert abs(e1 - e2) <= 4.0 * math.hypot(s1, s2)


def test_invariance_of_averaged_coverage():
    fam = PeriodicFamily(build_tight_packing(7))
    ok, base, base_se, rows = invariance_test(fam, 15_000, seed=3, trials=3)
    assert ok
    assert len(rows) == 3
    assert abs(base - TIGHT7_DENSITY) <= 4.0 * base_se


def test_direct_coverage_is_not_invariant():
    fam = PeriodicFamily(build_tight_packing(7))
    ts = np.linspace(0.0, 1.2, 121)
    pts = np.tanh(ts)[:, None] * np.array([math.cos(0.3), math.sin(0.3)])
    cov = fam.coverage_batch(pts)
    # a disk is centred at the origin, yet the ray leaves the disks, so
    # the unaveraged coverage functional moves under translations
    assert cov[0]
    assert not cov.all()


def test_seeded_estimates_reproduce():
    fam = PeriodicFamily(build_tight_packing(7))
    a = averaged_coverage(fam, 4000, seed=42)
    b = averaged_coverage(fam, 4000, seed=42)
    assert a == b
    c = averaged_coverage(fam, 4000, seed=43)
    assert a[0] != c[0]


def test_empirical_weights_to_mixture():
    pk = build_tight_packing(7)
    emb = default_free_group()
    disc = grid_for(emb, 0.5, 0.3)
    w, alpha = empirical_weights(pk, emb, disc, 1500, seed=5)
    assert alpha.cells[0] == frozenset()
    assert w.n == 2 and w.r == 0
    assert w.alphabet == tuple(range(len(alpha.cells)))
    assert sum(w.vertex.values()) == 1
    for i in (1, 2):
        assert sum(v for (j, _), v in w.edge.items() if j == i) == 1
    # sampling noise breaks the flow laws; the rational repair restores
    # them on the observed support without moving any vertex weight far
    eps = Fraction(1, 20)
    rep = rationalize_weights(w, eps)
    assert validate_weights(rep) is None
    dev = max(abs(rep.vertex.get(p, Fraction(0)) - w.vertex[p])
              for p in w.vertex)
    assert dev < eps
    Q = build_quotient(rep)
    assert Q.N >= 1
    assert sum(c.N for c in components(Q)) == Q.N
    lam = periodic_measure(Q, 0)
    assert lam.vertex == rep.vertex
    assert lam.edge == rep.edge
    # mixture coverage equals mean centers per site times the area ratio
    radius = pk.radius - disc.delta
    est, se = mixed_coverage(emb, Q, alpha, radius, 30_000, seed=13)
    mbar = float(sum(v * len(alpha.cells[p[0]])
                     for p, v in lam.vertex.items()))
    oracle = mbar * disk_area(radius) / (2.0 * math.pi)
    assert se > 0.0
    assert abs(est - oracle) <= 4.0 * se


def test_empirical_weights_bad_inputs():
    pk = build_tight_packing(7)
    emb = default_free_group()
    disc = grid_for(emb, 0.5, 0.3)
    with pytest.raises(ValueError):
        empirical_weights(pk, emb, disc, 0, seed=1)
    with pytest.raises(ValueError):
        mixed_coverage(emb, types.SimpleNamespace(N=0), None, 0.2, 100,
                       seed=1)


def test_coloring_family_matches_orbit():
    emb = default_free_group()
    disc = grid_for(emb, 1.0, 0.2)
    cell = disc.cell_of([[0.05, 0.02]])
    # constant coloring: one quotient point, identity permutations
    Q = QuotientSystem(2, 0, (frozenset(), cell), ((1,),),
                       (np.array([0]), np.array([0])))
    fam_c = ColoringFamily(emb, PeriodicColoring(Q, 0), disc, 0.4)
    fam_o = OrbitFamily(emb, disc.rep(cell), 0.4)
    rng = np.random.default_rng(2)
    pts = disk_sample(rng, 50, 0.9)
    for p in pts:
        a = np.array(sorted(map(tuple, fam_c.local_centers(p, 0.8))))
        b = np.array(sorted(map(tuple, fam_o.local_centers(p, 0.8))))
        assert a.shape == b.shape
        if len(a):
            assert np.allclose(a, b, atol=1e-9)
    assert np.array_equal(fam_c.coverage_batch(pts),
                          fam_o.coverage_batch(pts))
