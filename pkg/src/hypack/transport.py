"""Packings written as colorings of a free group, and orbit averaging.

A discrete free group of isometries with a fundamental polygon turns a
packing into a word-indexed family of center sets inside the polygon,
and back.  Center sets are snapped to a finite alphabet by a polar grid,
and functionals of randomly repositioned packings are averaged over the
fundamental-domain fiber of the group in the full isometry group.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .geometry import (GeometryError, Isometry, fold_with,
                       group_ball_matrices, halfplane_intersection,
                       klein_distance, lift, repair_ideal_vertices, to_klein)
from .homothety import WindowPacking
from .montecarlo import chunked_mean
from .shifts import (CylinderWeights, PeriodicColoring, ball, evaluate_lift,
                     reduce_word)


class EncodingError(ValueError):
    """A configuration cannot be encoded or discretized reliably."""


def _inverse_word(w):
    return tuple(-l for l in reversed(w))


def _point_to_chords(q, vertices):
    """Euclidean distance from q to a closed convex chord polygon."""
    v = vertices
    e = np.roll(v, -1, axis=0) - v
    ln2 = np.sum(e * e, axis=1)
    t = np.clip(np.sum((q - v) * e, axis=1) / np.maximum(ln2, 1e-300), 0.0, 1.0)
    foot = v + t[:, None] * e
    d = np.min(np.hypot(foot[:, 0] - q[0], foot[:, 1] - q[1]))
    # Inside the polygon the distance is zero.
    nrm = np.stack([e[:, 1], -e[:, 0]], axis=1)
    if np.all(np.sum(nrm * (q - v), axis=1) <= 0.0):
        return 0.0
    return float(d)


class FreeGroupEmbedding:
    """Discrete free group of isometries with a fundamental polygon.

    ``domain`` must carry edge sources naming, for each side, the group
    word whose orbit-point bisector carved it; those side pairings drive
    the folding walk and the tile enumeration.  Words are tuples of
    nonzero generator indices as in the shift module.
    """

    def __init__(self, generators, domain, basepoint=(0.0, 0.0)):
        self.generators = tuple(generators)
        self.domain = domain
        self.basepoint = np.asarray(basepoint, dtype=float)
        mats = {}
        for i, g in enumerate(self.generators, start=1):
            mats[i] = g.matrix
            mats[-i] = g.inverse.matrix
        self._mats = mats
        bl = lift(self.basepoint)
        sides = []
        seen = set()
        for w in domain.edge_sources or []:
            if w is None or w in seen:
                continue
            seen.add(w)
            m = self.word_matrix(w)
            u = bl - (m @ bl) / math.sqrt(abs(
                (m @ bl)[2] ** 2 - (m @ bl)[0] ** 2 - (m @ bl)[1] ** 2))
            nrm = math.hypot(u[0], u[1])
            if nrm < 1e-12:
                raise GeometryError("side word fixes the basepoint")
            sides.append((w, self.word_matrix(_inverse_word(w)),
                          -u[:2] / nrm, -u[2] / nrm))
        self._sides = sides
        self._to_base = (Isometry.translation_to(self.basepoint)
                         if np.hypot(*self.basepoint) > 0 else
                         Isometry.identity())
        self._tiles = None
        self._tile_reach = -1.0

    @property
    def n(self):
        return len(self.generators)

    def word_matrix(self, word):
        m = np.eye(3)
        for l in word:
            m = m @ self._mats[l]
        return m

    def isometry(self, word):
        return Isometry(self.word_matrix(word), validate=False)

    def relation_defect(self, max_len=8):
        """Least distance any nontrivial short word moves the basepoint.

        A value comfortably above zero certifies that no relation of
        length up to ``max_len`` holds among the generators.
        """
        bl = lift(self.basepoint)
        mats = {(): np.eye(3)}
        best = math.inf
        for w in ball(self.n, max_len)[1:]:
            m = mats[w[:-1]] @ self._mats[w[-1]]
            mats[w] = m
            v = m @ bl
            best = min(best, math.acosh(max(1.0, float(
                v[2] * bl[2] - v[0] * bl[0] - v[1] * bl[1]))))
        return best

    def fold(self, p, max_iter=100_000):
        """Word w with w(p) inside the domain, found by side descent.

        Repeatedly applies the pairing of the most violated side.  Each
        application strictly shrinks the distance from p to the orbit of
        the basepoint, and those distances form a finite set below the
        starting value, so the walk terminates.  Returns
        (word, isometry, folded point).
        """
        if not self._sides:
            raise GeometryError("domain carries no side pairing words")
        q = np.asarray(p, dtype=float)
        word = ()
        m = np.eye(3)
        for _ in range(max_iter):
            pick = None
            worst = 1e-12
            for w, inv_m, nrm, off in self._sides:
                viol = float(nrm[0] * q[0] + nrm[1] * q[1] - off)
                if viol > worst:
                    worst = viol
                    pick = (w, inv_m)
            if pick is None:
                return word, Isometry(m, validate=False), q
            w, inv_m = pick
            q = to_klein(inv_m @ lift(q))
            word = reduce_word(_inverse_word(w), word)
            m = inv_m @ m
        raise GeometryError("side descent did not terminate")

    def fold_points(self, pts, max_iter=200_000):
        """Fold an array of points into the domain, positions only.

        Batched form of the side descent in ``fold`` for callers that do
        not need the folding words.  Returns the folded Klein points with
        the same row order.
        """
        if not self._sides:
            raise GeometryError("domain carries no side pairing words")
        x = lift(np.atleast_2d(np.asarray(pts, dtype=float)))
        nrms = np.array([s[2] for s in self._sides])
        offs = np.array([s[3] for s in self._sides])
        invs = np.array([s[1] for s in self._sides])
        idx = np.arange(len(x))
        for _ in range(max_iter):
            q = to_klein(x[idx])
            viol = q @ nrms.T - offs
            worst = viol.argmax(axis=1)
            act = viol[np.arange(len(idx)), worst] > 1e-12
            if not act.any():
                break
            idx = idx[act]
            x[idx] = np.einsum("aij,aj->ai", invs[worst[act]], x[idx])
            # Renormalizing onto the hyperboloid stops roundoff drift on
            # the long parabolic walks out of the cusp tails.
            nr = np.sqrt(np.maximum(
                x[idx, 2] ** 2 - x[idx, 0] ** 2 - x[idx, 1] ** 2, 1e-300))
            x[idx] /= nr[:, None]
        else:
            raise GeometryError("side descent did not terminate")
        return to_klein(x)

    def tile_words(self, reach):
        """Stacked words/matrices of domain copies within ``reach``.

        Copies are walked by side-pairing adjacency; every copy meeting
        the ball about the basepoint is chained to the base copy through
        the ball by convexity, so the enumeration is exhaustive.  The
        result is cached and filtered on repeat calls; returns
        (words list, (t, 3, 3) matrix array, min-distance array).
        """
        if self._tiles is None or reach > self._tile_reach:
            self._build_tiles(max(reach, 2.0))
        words, mats, dist = self._tiles
        keep = dist <= reach + 1e-12
        return ([w for w, k in zip(words, keep) if k], mats[keep], dist[keep])

    def _build_tiles(self, reach):
        base_inv = self._to_base.inverse.matrix
        lifted = lift(self.domain.vertices).T
        cut = math.tanh(reach)
        found = {(): np.eye(3)}
        dists = {(): 0.0}
        frontier = [()]
        while frontier:
            new = []
            for w in frontier:
                m = found[w]
                for s, _, _, _ in self._sides:
                    cw = reduce_word(w, s)
                    if cw in found:
                        continue
                    cm = m @ self.word_matrix(s)
                    img = to_klein((base_inv @ cm @ lifted).T)
                    # Ideal corners sit a few ulps outside after the map.
                    rho = np.maximum(np.hypot(img[:, 0], img[:, 1]), 1e-300)
                    img = img * np.minimum(1.0, (1.0 - 1e-13) / rho)[:, None]
                    d = _point_to_chords(np.zeros(2), img)
                    if d > cut:
                        continue
                    found[cw] = cm
                    dists[cw] = math.atanh(min(d, 1.0 - 1e-15))
                    new.append(cw)
            frontier = new
        words = sorted(found, key=lambda w: (len(w), w))
        self._tiles = (words,
                       np.array([found[w] for w in words]),
                       np.array([dists[w] for w in words]))
        self._tile_reach = reach


def dirichlet_domain(generators, basepoint=(0.0, 0.0), word_len=6):
    """Fundamental polygon of points nearer the basepoint than its orbit.

    Bisector half-planes of orbit points under words up to ``word_len``
    are intersected; rim arcs left where the region reaches the circle
    are replaced by ideal corner points.
    """
    b = np.asarray(basepoint, dtype=float)
    bl = lift(b)
    n = len(generators)
    mats = {(): np.eye(3)}
    step = {}
    for i, g in enumerate(generators, start=1):
        step[i] = g.matrix
        step[-i] = g.inverse.matrix
    normals, offsets, sources, lines = [], [], [], {}
    for w in ball(n, word_len)[1:]:
        m = mats[w[:-1]] @ step[w[-1]]
        mats[w] = m
        u = bl - (m @ bl) / math.sqrt(abs(
            (m @ bl)[2] ** 2 - (m @ bl)[0] ** 2 - (m @ bl)[1] ** 2))
        nrm = math.hypot(u[0], u[1])
        if nrm < 1e-12:
            raise GeometryError("group word fixes the basepoint")
        normal, off = -u[:2] / nrm, -u[2] / nrm
        normals.append(normal)
        offsets.append(off)
        sources.append(w)
        lines[w] = (normal, off)
    poly = halfplane_intersection(normals, offsets, sources)
    return repair_ideal_vertices(poly, lines)


def default_free_group(word_len=6):
    """Rank-2 free group of parabolic unimodular matrices, with domain.

    The generators are the images of [[1,2],[0,1]] and [[1,0],[2,1]];
    they generate a discrete cofinite free group whose quotient is a
    three-cusped sphere of area 2*pi.
    """
    a = Isometry.from_sl2(np.array([[1.0, 2.0], [0.0, 1.0]]))
    b = Isometry.from_sl2(np.array([[1.0, 0.0], [2.0, 1.0]]))
    dom = dirichlet_domain((a, b), word_len=word_len)
    return FreeGroupEmbedding((a, b), dom)


# ---------------------------------------------------------------------------
# encoding between packings and colorings


class PackingColoring:
    """Window of a packing in fundamental-domain coordinates.

    ``values`` maps each reduced word f in the window to the array of
    centers of the f-shifted packing that land inside the domain.
    """

    def __init__(self, embedding, radius, window_words, values):
        self.embedding = embedding
        self.radius = float(radius)
        self.window_words = int(window_words)
        self.values = {w: np.atleast_2d(np.asarray(v, dtype=float)).reshape(-1, 2)
                       for w, v in values.items()}

    def total(self):
        return sum(len(v) for v in self.values.values())


def encode(packing, emb, window_words):
    """Word-indexed center sets of a packing inside the domain.

    Windowed center lists are encoded as given; periodic packings are
    windowed automatically, wide enough to cover the domain core for
    every requested word (cusp tails beyond the window are not
    represented).  A center within 1e-9 of the domain boundary raises
    EncodingError: the boundary rule is half open and such ties cannot
    be resolved in floating point.
    """
    words = ball(emb.n, window_words)
    if hasattr(packing, "orbit_centers"):
        spread = max(float(klein_distance(emb.isometry(w).apply(emb.basepoint),
                                          emb.basepoint)) for w in words)
        centers = packing.orbit_centers(spread + 4.0)
    else:
        centers = np.asarray(packing.centers, dtype=float)
    values = {}
    for w in words:
        local = emb.isometry(w).inverse.apply(centers) if len(centers) \
            else np.empty((0, 2))
        wide = emb.domain.contains(local, margin=1e-9)
        tight = emb.domain.contains(local, margin=-1e-9)
        if np.any(wide != tight):
            raise EncodingError("center within 1e-9 of the domain boundary")
        values[w] = local[tight]
    return PackingColoring(emb, packing.radius, window_words, values)


def decode(col):
    """Packing reassembled as the union of f(values(f)) over the window.

    Raises SeparationError through the packing validator if the decoded
    centers overlap, which signals a corrupted coloring.
    """
    parts = []
    for w in sorted(col.values):
        arr = col.values[w]
        if len(arr):
            parts.append(col.embedding.isometry(w).apply(arr))
    centers = np.concatenate(parts) if parts else np.empty((0, 2))
    window = 0.0
    if len(centers):
        window = float(np.max(klein_distance(centers, np.zeros(2)))) + 1e-9
    return WindowPacking(centers, col.radius, window, validate=True)


class Discretization:
    """Finite alphabet of center sets via a polar grid about the basepoint.

    Cells are frozen sets of integer grid indices; ``rep`` rebuilds the
    representative centers of a cell in domain coordinates.  The mesh is
    sized so that snapping moves a center at most half the requested
    diameter anywhere in the radius-x ball.
    """

    def __init__(self, embedding, x, delta, mesh):
        self.embedding = embedding
        self.x = float(x)
        self.delta = float(delta)
        self.mesh = float(mesh)
        self.seen = {}

    def cell_of(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
        if len(pts) == 0:
            key = frozenset()
            self.seen.setdefault(key, None)
            return key
        local = self.embedding._to_base.inverse.apply(pts)
        rho = np.hypot(local[:, 0], local[:, 1])
        d = np.arctanh(np.minimum(rho, 1.0 - 1e-15))
        keep = d <= self.x + 1e-12
        local, rho, d = local[keep], rho[keep], d[keep]
        u = local * (d / np.maximum(rho, 1e-300))[:, None]
        idx = np.rint(u / self.mesh).astype(int)
        key = frozenset(map(tuple, idx))
        self.seen.setdefault(key, None)
        return key

    def rep(self, cell):
        if not cell:
            return np.empty((0, 2))
        u = self.mesh * np.array(sorted(cell), dtype=float)
        d = np.hypot(u[:, 0], u[:, 1])
        scale = np.where(d > 0, np.tanh(d) / np.maximum(d, 1e-300), 0.0)
        return self.embedding._to_base.apply(u * scale[:, None])

    def alphabet(self):
        return tuple(sorted(self.seen, key=lambda c: sorted(c)))


def discretize(col, x, delta):
    """Snap every center set of a coloring to the polar grid.

    Each represented center moves at most delta/2 and centers beyond
    distance x of the basepoint are dropped, so every value set stays
    within Hausdorff distance delta of the original restricted to the
    radius-x ball.  The radius field shrinks by delta to keep decoded
    separation claims honest.  Returns (coloring, discretization).
    """
    if not 0.0 < delta < col.radius:
        raise EncodingError("cell diameter must lie strictly between 0 "
                            "and the packing radius")
    spread = math.sinh(x) / x if x > 0 else 1.0
    mesh = delta / (math.sqrt(2.0) * math.hypot(1.0, spread))
    disc = Discretization(col.embedding, x, delta, mesh)
    values = {w: disc.rep(disc.cell_of(arr)) for w, arr in col.values.items()}
    out = PackingColoring(col.embedding, col.radius - delta,
                          col.window_words, values)
    return out, disc


# ---------------------------------------------------------------------------
# fundamental-domain averaging


def sample_group_fiber(emb, rng, cap=8.0):
    """One isometry from the fundamental-domain fiber of the group.

    Area-uniform point of the domain composed with a uniform rotation;
    the point marginal is truncated at distance ``cap`` from the origin
    because the cusp tails of the domain carry area decaying like
    exp(-distance) but extend forever.
    """
    cut = math.tanh(cap)
    while True:
        z = emb.domain.sample(1, rng)[0]
        if math.hypot(z[0], z[1]) <= cut:
            break
    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    return Isometry.translation_to(z) @ Isometry.rotation(theta)


class IndexedAlphabet:
    """Integer-symbol view of a discretization for quotient colorings.

    Cell index 0 must be the empty cell, so that a zero symbol decodes
    to no centers wherever a cell would be treated as falsy.
    """

    def __init__(self, disc, cells):
        self.disc = disc
        self.cells = list(cells)
        self.x = disc.x
        self.delta = disc.delta
        if self.cells and self.cells[0]:
            raise EncodingError("cell index 0 must be the empty cell")

    def rep(self, symbol):
        return self.disc.rep(self.cells[symbol])


def empirical_weights(packing, emb, disc, samples, seed, cap=8.0):
    """Sampled single-site cylinder weights of a packing's coloring law.

    Draws isometries from the fundamental-domain fiber, reads off the
    grid cell seen at the identity and at each generator neighbor of the
    repositioned packing, and tallies exact rational frequencies.  Each
    observed adjacency is credited half to the outgoing and half to the
    incoming edge of the site, so the two flow laws hold up to sampling
    noise only and the rational repair can restore them on the observed
    support.  Returns (weights, alphabet) where the weights use integer
    symbols and the alphabet maps them back to grid cells.
    """
    if samples <= 0:
        raise ValueError("need a positive sample count")
    rng = np.random.default_rng(seed)
    ball_mats = group_ball_matrices(packing.generators)
    master = packing.orbit_centers(disc.x + 1.5)
    base = np.asarray(emb.basepoint, dtype=float)
    words = [()] + [(i,) for i in range(1, emb.n + 1)] \
        + [(-i,) for i in range(1, emb.n + 1)]
    word_iso = {w: emb.isometry(w) for w in words}
    index = {frozenset(): 0}
    disc.cell_of(np.empty((0, 2)))
    vcount = {}
    ecount = {}
    half = Fraction(1, 2 * samples)
    for _ in range(samples):
        g = sample_group_fiber(emb, rng, cap)
        sym = {}
        for w in words:
            t = g @ word_iso[w]
            gam, q = fold_with(ball_mats, t.apply(base))
            sel = master[klein_distance(master, q) <= disc.x]
            local = (gam @ t).inverse.apply(sel) if len(sel) \
                else np.empty((0, 2))
            local = local[emb.domain.contains(local)]
            cell = disc.cell_of(local)
            sym[w] = index.setdefault(cell, len(index))
        s0 = sym[()]
        vcount[(s0,)] = vcount.get((s0,), 0) + 1
        for i in range(1, emb.n + 1):
            fwd = (s0, sym[(i,)])
            ecount[(i, fwd)] = ecount.get((i, fwd), 0) + 1
            rev = (sym[(-i,)], s0)
            ecount[(i, rev)] = ecount.get((i, rev), 0) + 1
    cells = sorted(index, key=index.get)
    vertex = {p: Fraction(c, samples) for p, c in vcount.items()}
    edge = {k: c * half for k, c in ecount.items()}
    weights = CylinderWeights(emb.n, 0, tuple(range(len(cells))),
                              vertex, edge)
    return weights, IndexedAlphabet(disc, cells)


class PeriodicFamily:
    """Orbit data of a packing under its own cocompact symmetry group.

    The packing itself serves as the sampling embedding, so averaging
    defaults to the fiber over the packing's own unit cell; there the
    averaged coverage equals the exact density.
    """

    def __init__(self, packing):
        self.packing = packing
        self.embedding = packing
        self.radius = packing.radius
        self._ball = group_ball_matrices(packing.generators)
        self._span = math.acosh(float(np.max(self._ball[:, 2, 2])))
        self._master = np.empty((0, 2))
        self._master_r = -1.0

    def _need_master(self, need):
        if need > self._master_r:
            self._master = self.packing.orbit_centers(need)
            self._master_r = need
        return self._master

    def local_centers(self, p, rad):
        """Packing centers within ``rad`` of p, in plane coordinates."""
        gam, q = fold_with(self._ball, p, stop=1.0)
        master = self._need_master(self._span + rad + 0.5)
        if len(master) == 0:
            return np.empty((0, 2))
        sel = master[klein_distance(master, q) <= rad]
        return gam.inverse.apply(sel) if len(sel) else np.empty((0, 2))

    def coverage_batch(self, pts, max_iter=1000):
        """Boolean cover test for an array of points, via batched fold."""
        x = lift(np.atleast_2d(np.asarray(pts, dtype=float)))
        third = self._ball[:, 2, :]
        for _ in range(max_iter):
            disp = x @ third.T
            best = disp.argmin(axis=1)
            act = disp[np.arange(len(x)), best] < x[:, 2] - 1e-12
            if not act.any():
                break
            x[act] = np.einsum("aij,aj->ai", self._ball[best[act]], x[act])
            nr = np.sqrt(np.maximum(
                x[act, 2] ** 2 - x[act, 0] ** 2 - x[act, 1] ** 2, 1e-300))
            x[act] /= nr[:, None]
        else:
            raise GeometryError("orbit descent did not terminate")
        q = to_klein(x)
        master = self._need_master(self._span + self.radius + 0.5)
        d = klein_distance(q[:, None, :], master[None, :, :])
        return d.min(axis=1) <= self.radius


class OrbitFamily:
    """Orbit of finitely many domain centers under the embedded group."""

    def __init__(self, emb, centers, radius):
        self.embedding = emb
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radius = float(radius)
        self._dmax = float(np.max(klein_distance(self.centers, emb.basepoint)))

    def local_centers(self, p, rad):
        emb = self.embedding
        word, gam, q = emb.fold(p)
        dq = float(klein_distance(q, emb.basepoint))
        # Inside the domain the nearest orbit point of the basepoint is
        # the basepoint itself, which bounds every orbit center away.
        if dq > rad + self._dmax + 1e-9:
            return np.empty((0, 2))
        _, mats, _ = emb.tile_words(dq + rad + self._dmax + 0.1)
        img = to_klein(np.einsum("tij,cj->tci", mats,
                                 lift(self.centers)).reshape(-1, 3))
        sel = img[klein_distance(img, q) <= rad]
        return gam.inverse.apply(sel) if len(sel) else np.empty((0, 2))

    def master_centers(self, reach):
        """All orbit centers within ``reach`` of the basepoint."""
        emb = self.embedding
        _, mats, _ = emb.tile_words(reach)
        img = to_klein(np.einsum("tij,cj->tci", mats,
                                 lift(self.centers)).reshape(-1, 3))
        return img[klein_distance(img, emb.basepoint) <= reach]

    def coverage_batch(self, pts):
        """Boolean cover test for an array of points, via batched fold."""
        return _folded_coverage(self.embedding, pts, self.radius,
                                self._dmax, self.master_centers)


class ColoringFamily:
    """Decoded orbit data of a periodic coloring of the group.

    ``coloring`` assigns grid cells to group elements through its
    quotient system; centers are reconstructed on demand around the
    query point only, so the infinite decoded packing never needs to be
    materialized.
    """

    def __init__(self, emb, coloring, disc, radius):
        self.embedding = emb
        self.coloring = coloring
        self.disc = disc
        self.radius = float(radius)

    def local_centers(self, p, rad):
        emb = self.embedding
        word, gam, q = emb.fold(p)
        dq = float(klein_distance(q, emb.basepoint))
        if dq > rad + self.disc.x + 1e-9:
            return np.empty((0, 2))
        back = _inverse_word(word)
        # The snap can push a cell representative slightly past the
        # domain boundary into the neighboring tile, so the tile reach
        # carries the cell diameter as extra padding.
        words, mats, _ = emb.tile_words(dq + rad + self.disc.x + 0.1
                                        + self.disc.delta)
        parts = []
        for w, m in zip(words, mats):
            cell = evaluate_lift(self.coloring, reduce_word(back, w))
            if not cell:
                continue
            pts = to_klein((m @ lift(self.disc.rep(cell)).T).T)
            keep = klein_distance(pts, q) <= rad
            if np.any(keep):
                parts.append(pts[keep])
        if not parts:
            return np.empty((0, 2))
        return gam.inverse.apply(np.concatenate(parts))

    def master_centers(self, reach):
        """All decoded centers within ``reach`` of the basepoint."""
        emb = self.embedding
        words, mats, _ = emb.tile_words(reach + self.disc.delta)
        parts = []
        for w, m in zip(words, mats):
            cell = evaluate_lift(self.coloring, w)
            if not cell:
                continue
            parts.append(to_klein((m @ lift(self.disc.rep(cell)).T).T))
        if not parts:
            return np.empty((0, 2))
        pts = np.concatenate(parts)
        return pts[klein_distance(pts, emb.basepoint) <= reach]

    def coverage_batch(self, pts):
        """Boolean cover test for an array of points, via batched fold."""
        return _folded_coverage(self.embedding, pts, self.radius,
                                self.disc.x, self.master_centers,
                                pad=0.1 + self.disc.delta)


def _folded_coverage(emb, pts, rad, dmax, master_of, pad=0.1):
    """Shared cover test against the orbit of centers carried near words.

    Folds the points into the domain; a folded point farther than
    rad + dmax from the basepoint cannot be covered, because every
    center stays within dmax of some orbit point of the basepoint while
    the basepoint is the nearest such orbit point inside the domain.
    The rest are tested against the master center list, which holds
    every center a qualifying point could reach.
    """
    q = emb.fold_points(pts)
    bl = lift(emb.basepoint)
    ql = lift(q)
    dq = np.arccosh(np.maximum(
        ql[:, 2] * bl[2] - ql[:, 0] * bl[0] - ql[:, 1] * bl[1], 1.0))
    out = np.zeros(len(q), dtype=bool)
    near = dq <= rad + dmax + 1e-9
    if np.any(near):
        master = master_of(2.0 * rad + dmax + pad)
        if len(master):
            d = klein_distance(q[near][:, None, :], master[None, :, :])
            out[near] = d.min(axis=1) <= rad
    return out


def coverage_functional(point=(0.0, 0.0)):
    """Functional testing whether the repositioned packing covers ``point``.

    The averaged integrand evaluates events on the g-shifted event set,
    equivalently on the packing pulled back through g, so the observation
    point is pushed forward into the family's own frame.
    """
    pt = np.asarray(point, dtype=float)

    def f(family, g):
        local = family.local_centers(g.apply(pt), family.radius)
        return 1.0 if len(local) else 0.0

    return f


def average_functional(f, family, samples, seed, emb=None, cap=8.0):
    """Monte Carlo mean of f(family, g) over the fundamental-domain fiber.

    ``emb`` selects the fundamental domain used for sampling and
    defaults to the family's own embedding.  Returns (mean, stderr).
    """
    if emb is None:
        emb = getattr(family, "embedding", None)
    if emb is None:
        raise ValueError("family carries no embedding; pass emb explicitly")

    def batch(rng, m):
        vals = np.empty(m)
        for i in range(m):
            g = sample_group_fiber(emb, rng, cap)
            vals[i] = f(family, g)
        return vals

    mean, se, _ = chunked_mean(batch, samples, seed)
    return mean, se


def _translated_points(zs, thetas, pt):
    """Images of one point under the batch of fiber isometries.

    Computes (T_z R_theta)(pt) for arrays of translations targets zs and
    rotation angles, without building the matrices: the point is rotated,
    expressed in the frame of each boost axis, and pushed through the
    closed form of an axis boost on Klein coordinates.
    """
    if pt[0] == 0.0 and pt[1] == 0.0:
        return zs.copy()
    rho = np.hypot(zs[:, 0], zs[:, 1])
    phi = np.arctan2(zs[:, 1], zs[:, 0])
    a = thetas - phi
    u1 = pt[0] * np.cos(a) - pt[1] * np.sin(a)
    u2 = pt[0] * np.sin(a) + pt[1] * np.cos(a)
    den = 1.0 + rho * u1
    v1 = (u1 + rho) / den
    v2 = u2 * np.sqrt(np.maximum(1.0 - rho * rho, 0.0)) / den
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([c * v1 - s * v2, s * v1 + c * v2], axis=1)


def _fiber_points(domain, rng, m, cut):
    """Area-uniform domain points within Klein radius ``cut``."""
    zs = np.empty((0, 2))
    while len(zs) < m:
        draw = domain.sample(m - len(zs) + 16, rng)
        draw = draw[np.hypot(draw[:, 0], draw[:, 1]) <= cut]
        zs = draw if len(zs) == 0 else np.concatenate([zs, draw])
    return zs[:m]


def averaged_coverage(family, samples, seed, point=(0.0, 0.0), emb=None,
                      cap=8.0, chunk=20_000):
    """Batched estimate of the averaged coverage functional.

    Same estimand as ``average_functional`` of ``coverage_functional``,
    with the fiber draw, the evaluation points and the cover test all
    vectorized per chunk through the family's ``coverage_batch``.
    Returns (mean, stderr).
    """
    if emb is None:
        emb = getattr(family, "embedding", None)
    if emb is None:
        raise ValueError("family carries no embedding; pass emb explicitly")
    pt = np.asarray(point, dtype=float)
    cut = math.tanh(cap)

    def batch(rng, m):
        zs = _fiber_points(emb.domain, rng, m, cut)
        thetas = rng.uniform(0.0, 2.0 * math.pi, m)
        return family.coverage_batch(
            _translated_points(zs, thetas, pt)).astype(float)

    mean, se, _ = chunked_mean(batch, samples, seed, chunk=chunk)
    return mean, se


def mixed_coverage(emb, quotient, alpha, radius, samples, seed, cap=8.0,
                   chunk=20_000):
    """Averaged coverage of the uniform mixture of rooted colorings.

    A quotient system on N points defines one rooted periodic packing
    per point, and the measure it carries weights the roots uniformly.
    Each fiber draw therefore also draws a root, and the estimate
    targets the mixture's averaged coverage.  With valid decoded
    packings this equals the expected number of centers per site times
    the disk-to-domain area ratio, which callers can use as an exact
    check.  Returns (mean, stderr).
    """
    if quotient.N <= 0:
        raise ValueError("empty quotient")
    reach = 2.0 * radius + alpha.x + 0.1 + alpha.delta
    words, mats, _ = emb.tile_words(reach + alpha.delta)
    base = np.asarray(emb.basepoint, dtype=float)
    masters = []
    for v in range(quotient.N):
        root = PeriodicColoring(quotient, v)
        parts = []
        for w, m in zip(words, mats):
            sym = evaluate_lift(root, w)
            if not sym:
                continue
            parts.append(to_klein((m @ lift(alpha.rep(sym)).T).T))
        if parts:
            pts = np.concatenate(parts)
            masters.append(pts[klein_distance(pts, base) <= reach])
        else:
            masters.append(np.empty((0, 2)))
    cut = math.tanh(cap)
    bl = lift(base)

    def batch(rng, m):
        zs = _fiber_points(emb.domain, rng, m, cut)
        roots = rng.integers(quotient.N, size=m)
        q = emb.fold_points(zs)
        ql = lift(q)
        dq = np.arccosh(np.maximum(
            ql[:, 2] * bl[2] - ql[:, 0] * bl[0] - ql[:, 1] * bl[1], 1.0))
        out = np.zeros(m)
        near = np.flatnonzero(dq <= radius + alpha.x + 1e-9)
        for v in np.unique(roots[near]):
            mk = masters[v]
            if not len(mk):
                continue
            sel = near[roots[near] == v]
            d = klein_distance(q[sel][:, None, :], mk[None, :, :])
            out[sel] = (d.min(axis=1) <= radius).astype(float)
        return out

    mean, se, _ = chunked_mean(batch, samples, seed, chunk=chunk)
    return mean, se


def invariance_test(family, samples, seed, trials=10, max_disp=2.0,
                    emb=None):
    """Averaged coverage compared against composing with random moves.

    Each trial draws an isometry h of displacement at most ``max_disp``,
    re-estimates the averaged coverage of the h-shifted packings with an
    independent seed, and flags departures beyond four combined standard
    errors.  Returns (all_ok, base, base_stderr, rows) where each row is
    (h, estimate, stderr, ok).
    """
    rng = np.random.default_rng(seed)
    base, base_se = averaged_coverage(family, samples,
                                      int(rng.integers(2 ** 63)), emb=emb)
    rows = []
    ok = True
    for _ in range(trials):
        th = rng.uniform(0.0, 2.0 * math.pi)
        d = rng.uniform(0.2, max_disp)
        psi = rng.uniform(0.0, 2.0 * math.pi)
        h = Isometry.translation_to(
            math.tanh(d) * np.array([math.cos(th), math.sin(th)])) \
            @ Isometry.rotation(psi)
        # Shifting the event set by h composes into the evaluation point.
        est, se = averaged_coverage(family, samples,
                                    int(rng.integers(2 ** 63)),
                                    point=h.apply(np.zeros(2)), emb=emb)
        sig = math.hypot(se, base_se)
        good = abs(est - base) <= 4.0 * sig + 1e-12
        rows.append((h, est, se, good))
        ok = ok and good
    return ok, base, base_se, rows
