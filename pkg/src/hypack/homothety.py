"""Branched homothety between tilings: the contraction behind packing lifts.

The Euclidean dilation x -> kx with k = tanh(coarse circumradius) /
tanh(fine circumradius) maps the {s, 2a} base tile onto the {s, a} base
tile, vertices to vertices and edges to edges.  Extending it tile by
tile (crossing fine edge i corresponds to crossing coarse edge i) yields
a branched covering of the plane, 2-to-1 around fine vertices, that
strictly contracts distances.  Erasing packing centres near the coarse
vertices and lifting the rest through the covering produces a packing
whose centres are further apart by the reciprocal of the contraction
constant, which is how a packing's radius gets expanded without moving
its density far.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import (GeometryError, Isometry, J, PointTable, klein_distance,
                       klein_midpoint, lift, lorentz_renormalize, metric_speed,
                       sample_points, to_klein)
from .montecarlo import chunked_mean
from .packing import DensityReport, SeparationError
from .tiling import TilingFamily, build_tile, edge_flips, tiling_geometry


class BranchLocusError(ValueError):
    """The covering map was evaluated too close to a fine-tiling vertex."""


@dataclass(frozen=True)
class TileAddress:
    """A fine tile: the edge-crossing word reaching it and its placement."""

    word: tuple
    placement: Isometry


class WindowPacking:
    """Finite view of a packing: centres within ``window`` of the origin."""

    def __init__(self, centers, radius, window, validate=True):
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        self.radius = float(radius)
        self.window = float(window)
        if validate and len(self.centers) > 1:
            d = klein_distance(self.centers[:, None, :],
                               self.centers[None, :, :])
            np.fill_diagonal(d, np.inf)
            sep = float(d.min())
            if sep < 2.0 * self.radius - 1e-9:
                raise SeparationError(
                    f"window centres overlap: separation {sep:.6g}")

    def __len__(self):
        return len(self.centers)


def window_packing(packing, window, transform=None):
    """Windowed snapshot of ``transform`` applied to a periodic packing."""
    reach = window
    if transform is not None:
        reach += transform.inverse.displacement()
    pts = packing.orbit_centers(reach + 0.1)
    if transform is not None and len(pts):
        pts = transform.apply(pts)
    if len(pts):
        pts = pts[klein_distance(pts, np.zeros(2)) <= window]
    return WindowPacking(pts, packing.radius, window, validate=False)


def scale_factor(s, a):
    """k in (0,1): the dilation taking the {s,2a} tile onto the {s,a} tile."""
    fine = tiling_geometry(s, 2 * a)
    coarse = tiling_geometry(s, a)
    return math.tanh(coarse.circumradius) / math.tanh(fine.circumradius)


def pointwise_dilation(k, x, v):
    """Metric dilation of x -> kx at the point x in the direction v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return k * metric_speed(k * x, v) / metric_speed(x, v)


def _dilation_field(k, pts):
    """Max over directions of the dilation at each point (vectorized).

    The dilation quadratic form is diagonal in the radial/tangential
    frame, so the directional maximum is attained at one of the two; the
    tangential ratio dominates.
    """
    rho2 = np.sum(pts * pts, axis=-1)
    tang = k * np.sqrt((1.0 - rho2) / (1.0 - k * k * rho2))
    rad = k * (1.0 - rho2) / (1.0 - k * k * rho2)
    return np.maximum(tang, rad)


class BranchedCover:
    """Paired enumeration of {s,2a} (fine) against {s,a} (coarse) tiles.

    Tile 0 is the shared base position.  Each fine tile i carries two
    isometries: ``placement`` of the fine base tile and the paired coarse
    placement; the covering map through tile i is
    coarse_i o (x -> kx) o fine_i^{-1}.  Revisiting a tile along another
    word must produce the same chart, which is checked during the BFS
    (the fine and coarse base rotations relating two words agree because
    rotations about the origin commute with the dilation).
    """

    def __init__(self, s, a):
        self.s = int(s)
        self.a = int(a)
        self.fine = tiling_geometry(s, 2 * a)
        self.coarse = tiling_geometry(s, a)
        self.k = math.tanh(self.coarse.circumradius) / \
            math.tanh(self.fine.circumradius)
        self.fine_base = build_tile(s, 2 * a)
        self.coarse_base = build_tile(s, a)
        self._fine_flips = [f.matrix for f in edge_flips(s, 2 * a)]
        self._coarse_flips = [f.matrix for f in edge_flips(s, a)]
        self._stab_rots = [Isometry.rotation(2.0 * math.pi * j / s).matrix
                           for j in range(s)]
        self._table = PointTable()
        self._table.insert(np.zeros(2))
        self._fine_mats = [np.eye(3)]
        self._coarse_mats = [np.eye(3)]
        self._words = [()]
        self._complete = 0.0
        self._stacked = None
        self._coarse_family = None
        self._c = None

    def __len__(self):
        return len(self._fine_mats)

    @property
    def c(self):
        """Contraction constant with safety margin; computed on demand."""
        if self._c is None:
            self._c = contraction_factor(self)
        return self._c

    def ensure_radius(self, d):
        """Enumerate all fine tiles with centre within distance d."""
        if d <= self._complete:
            return
        limit = math.cosh(d + self.fine.circumradius + 0.1)
        queue = deque(range(len(self._fine_mats)))
        while queue:
            i = queue.popleft()
            fm = self._fine_mats[i]
            cm = self._coarse_mats[i]
            for e in range(self.s):
                f2 = fm @ self._fine_flips[e]
                if f2[2, 2] > limit:
                    continue
                c2 = cm @ self._coarse_flips[e]
                ctr = np.array([f2[0, 2] / f2[2, 2], f2[1, 2] / f2[2, 2]])
                idx, fresh = self._table.insert(ctr)
                if fresh:
                    self._fine_mats.append(lorentz_renormalize(f2))
                    self._coarse_mats.append(lorentz_renormalize(c2))
                    self._words.append(self._words[i] + (e,))
                    queue.append(idx)
                else:
                    # Two words reached one tile.  The element relating
                    # them stabilizes the base tile, so it is a rotation
                    # by 2 pi j / s about the origin; the fine and coarse
                    # sides must give the same j.  Distinct rotations are
                    # order one apart, far above matrix noise.
                    df = J @ self._fine_mats[idx].T @ J @ f2
                    dc = J @ self._coarse_mats[idx].T @ J @ c2
                    rf = [np.abs(df - m).max() for m in self._stab_rots]
                    rc = [np.abs(dc - m).max() for m in self._stab_rots]
                    jf = int(np.argmin(rf))
                    jc = int(np.argmin(rc))
                    if jf != jc or rf[jf] > 0.2 or rc[jc] > 0.2:
                        raise GeometryError(
                            "covering charts disagree on a revisited tile")
        self._complete = d
        self._stacked = None

    def address(self, i):
        return TileAddress(self._words[i],
                           Isometry(self._fine_mats[i], validate=False))

    def coarse_isometry(self, i):
        return Isometry(self._coarse_mats[i], validate=False)

    def stacked(self):
        """Stacked arrays over the enumerated tiles for vectorized passes."""
        if self._stacked is None:
            fm = np.array(self._fine_mats)
            cm = np.array(self._coarse_mats)
            centers = self._table.array()
            base_l = lift(self.coarse_base.vertices)
            verts = to_klein(np.einsum("nij,vj->nvi", cm, base_l))
            # Placements preserve orientation, so images stay
            # counterclockwise and these normals always point outward.
            e = np.roll(verts, -1, axis=1) - verts
            nrm = np.stack([e[..., 1], -e[..., 0]], axis=-1)
            nrm = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
            off = np.sum(nrm * verts, axis=-1)
            self._stacked = {"fine": fm, "coarse": cm, "centers": centers,
                             "coarse_normals": nrm, "coarse_offsets": off}
        return self._stacked

    def locate_fine(self, p, margin=1e-12):
        """First enumerated fine tile containing p."""
        p = np.asarray(p, dtype=float)
        d0 = float(klein_distance(np.zeros(2), p))
        self.ensure_radius(d0 + self.fine.circumradius + 1e-9)
        centers = self._table.array()
        cand = np.flatnonzero(klein_distance(centers, p)
                              <= self.fine.circumradius + 1e-6)
        for i in cand:
            iso = Isometry(self._fine_mats[int(i)], validate=False)
            if self.fine_base.contains(iso.inverse.apply(p), margin=margin):
                return int(i)
        raise GeometryError(f"no fine tile found containing {p}")

    def coarse_vertices(self, window):
        """Vertices of the coarse tiling within ``window`` of the origin."""
        if self._coarse_family is None:
            self._coarse_family = TilingFamily(self.s, self.a)
        return self._coarse_family.vertex_points(window)


def build_cover(s, a):
    return BranchedCover(s, a)


def contraction_factor(cov, levels=12, tol=1e-7):
    """Least c with d(Bp, Bq) <= c d(p, q) on the fine tile, plus margin.

    Maximizes the pointwise dilation of x -> kx over the tile by grid
    search with local refinement; fails if refinement has not settled to
    ``tol`` after ``levels`` halvings, asserts c < 1, and returns the
    maximum with a 1e-6 safety margin.
    """
    k = cov.k
    rmax = math.tanh(cov.fine.circumradius)
    best = 0.0
    center = np.zeros(2)
    half = rmax
    prev = -1.0
    for level in range(levels):
        g = np.linspace(-half, half, 17)
        gx, gy = np.meshgrid(g, g)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1) + center
        pts = pts[np.sum(pts * pts, axis=1) < 1.0 - 1e-12]
        pts = pts[cov.fine_base.contains(pts, margin=1e-12)]
        if len(pts) == 0:
            pts = np.zeros((1, 2))
        vals = _dilation_field(k, pts)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best = float(vals[i])
            center = pts[i]
        if abs(best - prev) < tol and level >= 3:
            break
        prev = best
        half *= 0.5
    else:
        raise GeometryError("contraction maximization did not converge")
    if best >= 1.0:
        raise GeometryError(f"dilation maximum {best} is not a contraction")
    return best + 1e-6


def apply_cover(cov, p):
    """Image of the point p under the covering map.

    Rejects points within 1e-8 of a fine-tiling vertex, where the map
    branches; erased packings never get near that locus.
    """
    p = np.asarray(p, dtype=float)
    i = cov.locate_fine(p)
    fine = Isometry(cov._fine_mats[i], validate=False)
    local = fine.inverse.apply(p)
    vd = klein_distance(cov.fine_base.vertices, local)
    if float(vd.min()) <= 1e-8:
        raise BranchLocusError(f"point {p} is on the branch locus")
    coarse = Isometry(cov._coarse_mats[i], validate=False)
    return coarse.apply(cov.k * local)


def fiber(cov, q, window):
    """All preimages of q under the covering map within ``window``.

    Each enumerated fine tile whose paired coarse tile contains q
    contributes one preimage; points found through two charts (q on a
    shared coarse edge) are deduplicated.
    """
    q = np.asarray(q, dtype=float)
    cov.ensure_radius(window + cov.fine.circumradius + 1e-9)
    st = cov.stacked()
    keep = np.flatnonzero(klein_distance(st["centers"], np.zeros(2))
                          <= window + cov.fine.circumradius + 1e-9)
    # Membership of q in each paired coarse tile, tested in world
    # coordinates (half-planes are chords there too).
    vals = np.einsum("nvk,k->nv", st["coarse_normals"][keep], q) \
        - st["coarse_offsets"][keep]
    inside = np.all(vals <= 1e-12, axis=1)
    ql = lift(q)
    table = PointTable()
    out = []
    for j in np.flatnonzero(inside):
        i = keep[j]
        local = to_klein(_inv_single(st["coarse"][i]) @ ql)
        pre = to_klein(st["fine"][i] @ lift(local / cov.k))
        if float(klein_distance(pre, np.zeros(2))) > window:
            continue
        _, fresh = table.insert(pre)
        if fresh:
            out.append(pre)
    return np.array(out) if out else np.empty((0, 2))


def _inverse_mats(mats):
    return np.einsum("ij,njk,kl->nil", J, np.transpose(mats, (0, 2, 1)), J)


def erase_near_vertices(pk, cov):
    """Drop centres within one radius of a coarse-tiling vertex."""
    verts = cov.coarse_vertices(pk.window + pk.radius + 0.1)
    if len(pk.centers) == 0 or len(verts) == 0:
        return WindowPacking(pk.centers, pk.radius, pk.window, validate=False)
    d = klein_distance(pk.centers[:, None, :], verts[None, :, :])
    keep = d.min(axis=1) > pk.radius
    return WindowPacking(pk.centers[keep], pk.radius, pk.window,
                         validate=False)


def lift_packing(pk, cov):
    """Union of fibers of the centres; input must be erased first.

    With the input complete out to its window W, the output is complete
    out to W as well: a preimage within W maps to a centre within c W.
    Output separation is checked against twice the expanded radius.
    """
    W = pk.window
    cov.ensure_radius(W + cov.fine.circumradius + 1e-9)
    st = cov.stacked()
    keep = klein_distance(st["centers"], np.zeros(2)) \
        <= W + cov.fine.circumradius + 1e-9
    idx = np.flatnonzero(keep)
    table = PointTable()
    out = []
    if len(pk.centers):
        ql = lift(pk.centers)
        for i in idx:
            inside = np.all(pk.centers @ st["coarse_normals"][i].T
                            - st["coarse_offsets"][i] <= 1e-12, axis=1)
            if not inside.any():
                continue
            local = to_klein(ql[inside] @ _inv_single(st["coarse"][i]).T)
            for x in local:
                pre = to_klein(st["fine"][i] @ lift(x / cov.k))
                if float(klein_distance(pre, np.zeros(2))) > W:
                    continue
                _, fresh = table.insert(pre)
                if fresh:
                    out.append(pre)
    centers = np.array(out) if out else np.empty((0, 2))
    R = pk.radius / cov.c
    if len(centers) > 1:
        d = klein_distance(centers[:, None, :], centers[None, :, :])
        np.fill_diagonal(d, np.inf)
        sep = float(d.min())
        if sep < 2.0 * R - 1e-8:
            raise SeparationError(
                f"lifted separation {sep:.6g} < {2 * R:.6g}; "
                "was the packing erased?")
    return WindowPacking(centers, pk.radius, W, validate=False)


def _inv_single(m):
    return J @ m.T @ J


def expand_radius(pk, R):
    """Same centres with radius R; requires separation at least 2R."""
    if len(pk.centers) > 1:
        d = klein_distance(pk.centers[:, None, :], pk.centers[None, :, :])
        np.fill_diagonal(d, np.inf)
        sep = float(d.min())
        if sep < 2.0 * R - 1e-8:
            raise SeparationError(
                f"cannot expand to radius {R}: separation {sep:.6g}")
    return WindowPacking(pk.centers, R, pk.window, validate=False)


def near_isometry_radius(cov, delta, grid=96, seed=0):
    """Smallest vertex-exclusion radius making the cover a near isometry.

    Estimates the least rho such that within-tile pairs staying rho away
    from every coarse vertex satisfy d(Bp, Bq) >= d(p, q) - delta.  Grid
    plus random-pair search at the stated resolution; no sharper accuracy
    is claimed.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    rng = np.random.default_rng(seed)
    pts = sample_points(cov.fine_base.vertices, grid * grid // 2, rng)
    g = np.linspace(-1.0, 1.0, grid) * math.tanh(cov.fine.circumradius)
    gx, gy = np.meshgrid(g, g)
    mesh = np.stack([gx.ravel(), gy.ravel()], axis=1)
    mesh = mesh[cov.fine_base.contains(mesh, margin=0.0)]
    pts = np.concatenate([pts, mesh])
    cverts = cov.coarse_base.vertices
    vdist = klein_distance(pts[:, None, :], cverts[None, :, :]).min(axis=1)
    perm = rng.permutation(len(pts))
    p, q = pts, pts[perm]
    deficit = klein_distance(p, q) - klein_distance(cov.k * p, cov.k * q)
    pair_excl = np.minimum(vdist, vdist[perm])
    # rho must exclude every pair whose deficit exceeds delta.
    bad = deficit > delta
    if not bad.any():
        return 0.0
    return float(pair_excl[bad].max())


def homothety_density_estimate(packing, cov, samples, seed, chunk=2000):
    """Monte Carlo density of the erased-and-lifted packing law.

    One sample: translate the packing by a uniform draw from its unit
    cell fiber, erase near coarse vertices, lift through the cover, and
    test whether a point w drawn area-uniformly from the fine tiling's
    fundamental sector is covered at the expanded radius R.  The sector
    draw realizes the final averaging; its group is the fine rotation
    group, which the whole construction respects because rotating the
    fine picture rotates the paired coarse picture.

    The test is run backwards from w: if some preimage of a centre
    covers w, that centre lies within c R = r of the covering image of
    w, and w sits in the base tile where the cover is plainly x -> kx.
    So only the few centres near the transformed k w are examined, and
    only their preimages through the charts around w are formed.
    """
    if samples <= 0:
        raise ValueError("need a positive sample count")
    r = packing.radius
    c = cov.c
    R = r / c
    rf = cov.fine.circumradius
    # Fine tiles that can hold a preimage within R of a sector point.
    addr_window = rf + R + rf + 0.2
    cov.ensure_radius(addr_window)
    st = cov.stacked()
    sub = np.flatnonzero(klein_distance(st["centers"], np.zeros(2))
                         <= addr_window)
    sub_centers = st["centers"][sub]
    sub_fine = st["fine"][sub]
    sub_cinv = _inverse_mats(st["coarse"][sub])
    sub_nrm = st["coarse_normals"][sub]
    sub_off = st["coarse_offsets"][sub]
    # Contributing centres lie within r of the image k w, which stays
    # within c * rf of the origin; the erase test reaches r further.
    q_reach = c * rf + r + 1e-6
    cell_reach = 0.0
    for v in packing.domain.vertices:
        cell_reach = max(cell_reach, float(klein_distance(np.zeros(2), v)))
    master = packing.orbit_centers(q_reach + cell_reach + 0.2)
    verts = cov.coarse_vertices(q_reach + r + 0.1)
    sector = np.array([[0.0, 0.0],
                       cov.fine_base.vertices[0],
                       cov.fine_base.vertices[1]])

    def toss(rng, m):
        zs = sample_points(packing.domain.vertices, m, rng)
        thetas = rng.uniform(0.0, 2.0 * math.pi, m)
        ws = sample_points(sector, m, rng)
        out = np.zeros(m)
        for j in range(m):
            h = Isometry.translation_to(zs[j]) @ Isometry.rotation(thetas[j])
            w = ws[j]
            bw = cov.k * w
            target = h.apply(bw)
            cand = master[klein_distance(master, target) <= r + 1e-9]
            if len(cand) == 0:
                continue
            qt = h.inverse.apply(cand)
            if len(verts):
                dv = klein_distance(qt[:, None, :], verts[None, :, :])
                qt = qt[dv.min(axis=1) > r]
            if len(qt) == 0:
                continue
            near = np.flatnonzero(klein_distance(sub_centers, w)
                                  <= R + rf + 0.1)
            qtl = lift(qt)
            covered = 0.0
            for i in near:
                inside = np.all(qt @ sub_nrm[i].T - sub_off[i] <= 1e-9,
                                axis=1)
                if not inside.any():
                    continue
                local = to_klein(qtl[inside] @ sub_cinv[i].T)
                pre = to_klein(lift(local / cov.k) @ sub_fine[i].T)
                if float(klein_distance(pre, w).min()) <= R:
                    covered = 1.0
                    break
            out[j] = covered
        return out

    value, err, total = chunked_mean(toss, samples, seed, chunk=chunk)
    return DensityReport(value, err, total)
