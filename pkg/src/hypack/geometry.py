"""Geometry of the hyperbolic plane in the Klein (projective disk) model.

Points are ordinary xy coordinates in the open unit disk.  Geodesics are
straight chords, so convex regions are ordinary convex Euclidean polygons
and half-plane clipping works verbatim.  The price is a position-dependent
metric: all lengths, angles and areas go through the formulas below rather
than their Euclidean counterparts.

Isometries are represented as 3x3 matrices acting on the hyperboloid
x^2 + y^2 - z^2 = -1, z > 0; a Klein point maps to the hyperboloid by
(x, y) -> (x, y, 1) / sqrt(1 - x^2 - y^2) and back by central projection.
"""

from __future__ import annotations

import math

import numpy as np

J = np.diag([1.0, 1.0, -1.0])

# Tolerance for the Lorentz condition M^T J M = J.
ORTHO_TOL = 1e-10
# Default tolerance under which two points count as the same point.
DEDUP_TOL = 1e-8


class GeometryError(ValueError):
    """Invalid point, matrix or polygon."""


# ---------------------------------------------------------------------------
# points and the metric


def klein_point(p):
    """Validate and return a point of the open disk as a float array."""
    p = np.asarray(p, dtype=float)
    if p.shape != (2,):
        raise GeometryError(f"expected a 2d point, got shape {p.shape}")
    if p @ p >= 1.0:
        raise GeometryError(f"point {p} lies outside the open unit disk")
    return p


def lift(p):
    """Map Klein points (..., 2) to hyperboloid points (..., 3)."""
    p = np.asarray(p, dtype=float)
    rho2 = np.sum(p * p, axis=-1, keepdims=True)
    if np.any(rho2 >= 1.0):
        raise GeometryError("cannot lift a point outside the open unit disk")
    z = 1.0 / np.sqrt(1.0 - rho2)
    return np.concatenate([p * z, z], axis=-1)


def to_klein(x):
    """Project hyperboloid points (..., 3) back to the Klein disk."""
    x = np.asarray(x, dtype=float)
    return x[..., :2] / x[..., 2:3]


def lorentz_renormalize(m):
    """Re-orthonormalize a drifting product of isometry matrices.

    Minkowski Gram-Schmidt on the columns.  Long breadth-first products
    of flip matrices wander off the isometry group fast enough to ruin
    tile positions at radius ten and beyond; renormalizing every stored
    product keeps enumerations accurate, exactly as renormalizing points
    onto the hyperboloid does for point orbits.
    """
    m = np.asarray(m, dtype=float)
    c2 = m[:, 2]
    c2 = c2 / math.sqrt(c2[2] ** 2 - c2[0] ** 2 - c2[1] ** 2)
    c0 = m[:, 0]
    c0 = c0 + (c0[0] * c2[0] + c0[1] * c2[1] - c0[2] * c2[2]) * c2
    c0 = c0 / math.sqrt(c0[0] ** 2 + c0[1] ** 2 - c0[2] ** 2)
    c1 = m[:, 1]
    c1 = c1 + (c1[0] * c2[0] + c1[1] * c2[1] - c1[2] * c2[2]) * c2
    c1 = c1 - (c1[0] * c0[0] + c1[1] * c0[1] - c1[2] * c0[2]) * c0
    c1 = c1 / math.sqrt(c1[0] ** 2 + c1[1] ** 2 - c1[2] ** 2)
    return np.stack([c0, c1, c2], axis=1)


def klein_distance(p, q):
    """Hyperbolic distance; broadcasts over leading axes of (..., 2) arrays."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pq = np.sum(p * q, axis=-1)
    pp = np.sum(p * p, axis=-1)
    qq = np.sum(q * q, axis=-1)
    c = (1.0 - pq) / np.sqrt((1.0 - pp) * (1.0 - qq))
    return np.arccosh(np.maximum(c, 1.0))


def pair_distance(pl, ql):
    """Distance between lifted points, stable for nearly equal far points.

    Uses cosh d - 1 = <P - Q, P - Q>_J / 2, which avoids the cancellation
    that makes the quotient formula useless for deciding whether two
    distant points coincide.  Broadcasts over (..., 3) arrays.
    """
    d = np.asarray(pl, dtype=float) - np.asarray(ql, dtype=float)
    c = 0.5 * (d[..., 0] ** 2 + d[..., 1] ** 2 - d[..., 2] ** 2)
    return np.arccosh(1.0 + np.maximum(c, 0.0))


def klein_midpoint(p, q):
    """Hyperbolic midpoint of the geodesic segment from p to q."""
    m = lift(p) + lift(q)
    norm2 = m[2] ** 2 - m[0] ** 2 - m[1] ** 2
    return to_klein(m / math.sqrt(norm2))


def metric_speed(x, v):
    """Length of the tangent vector v at the point x."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    s = 1.0 - x @ x
    return math.sqrt(s * (v @ v) + (x @ v) ** 2) / s


def metric_angle(x, u, v):
    """Angle at x between tangent directions u and v."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    s = 1.0 - x @ x
    guv = s * (u @ v) + (x @ u) * (x @ v)
    guu = s * (u @ u) + (x @ u) ** 2
    gvv = s * (v @ v) + (x @ v) ** 2
    c = guv / math.sqrt(guu * gvv)
    return math.acos(min(1.0, max(-1.0, c)))


# ---------------------------------------------------------------------------
# isometries


class Isometry:
    """Orientation-preserving isometry as a 3x3 hyperboloid matrix."""

    __slots__ = ("matrix",)

    def __init__(self, matrix, validate=True):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise GeometryError(f"expected a 3x3 matrix, got shape {m.shape}")
        if validate:
            err = np.abs(m.T @ J @ m - J).max()
            if err > ORTHO_TOL:
                raise GeometryError(f"matrix is not Lorentz (defect {err:.3e})")
            if m[2, 2] <= 0.0:
                raise GeometryError("matrix swaps the two hyperboloid sheets")
            if np.linalg.det(m) <= 0.0:
                raise GeometryError("matrix reverses orientation")
        self.matrix = m

    @classmethod
    def identity(cls):
        return cls(np.eye(3), validate=False)

    @classmethod
    def rotation(cls, theta, center=None):
        """Rotation by theta, about the origin or about ``center``."""
        c, s = math.cos(theta), math.sin(theta)
        rot = cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]),
                  validate=False)
        if center is None:
            return rot
        t = cls.translation_to(center)
        return t @ rot @ t.inverse

    @classmethod
    def boost_x(cls, d):
        """Translation by distance d along the positive x axis."""
        ch, sh = math.cosh(d), math.sinh(d)
        return cls(np.array([[ch, 0.0, sh], [0.0, 1.0, 0.0], [sh, 0.0, ch]]),
                   validate=False)

    @classmethod
    def translation_to(cls, p):
        """The translation along the geodesic from the origin that hits p."""
        p = klein_point(p)
        rho = math.hypot(p[0], p[1])
        if rho < 1e-300:
            return cls.identity()
        theta = math.atan2(p[1], p[0])
        return (cls.rotation(theta) @ cls.boost_x(math.atanh(rho))
                @ cls.rotation(-theta))

    @classmethod
    def from_sl2(cls, m):
        """Isometry induced by a real 2x2 matrix of determinant one.

        The action S -> m S m^T on symmetric matrices, in the coordinates
        x = (a - c)/2, y = b, z = (a + c)/2 for S = [[a, b], [b, c]],
        preserves x^2 + y^2 - z^2 and gives the hyperboloid matrix.
        """
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise GeometryError("expected a 2x2 matrix")
        basis = [np.array([[1.0, 0.0], [0.0, -1.0]]),
                 np.array([[0.0, 1.0], [1.0, 0.0]]),
                 np.array([[1.0, 0.0], [0.0, 1.0]])]
        cols = []
        for s in basis:
            t = m @ s @ m.T
            cols.append([(t[0, 0] - t[1, 1]) / 2.0, t[0, 1],
                         (t[0, 0] + t[1, 1]) / 2.0])
        return cls(np.array(cols).T)

    def apply(self, p):
        """Apply to a point (2,) or an array of points (..., 2)."""
        x = lift(p)
        y = x @ self.matrix.T
        return to_klein(y)

    def __matmul__(self, other):
        return Isometry(self.matrix @ other.matrix, validate=False)

    @property
    def inverse(self):
        return Isometry(J @ self.matrix.T @ J, validate=False)

    def is_identity(self, tol=ORTHO_TOL):
        return bool(np.abs(self.matrix - np.eye(3)).max() <= tol)

    def displacement(self, p=(0.0, 0.0)):
        """Distance by which the isometry moves the point p."""
        p = np.asarray(p, dtype=float)
        return float(klein_distance(p, self.apply(p)))

    def __repr__(self):
        o = self.apply(np.zeros(2))
        return f"Isometry(origin -> [{o[0]:.6f}, {o[1]:.6f}])"


# ---------------------------------------------------------------------------
# convex geodesic polygons


def _clip(vertices, sources, normal, offset, source):
    """Clip a convex polygon by the half-plane normal . x <= offset.

    ``sources`` labels the edge starting at each vertex; the new edge
    created by the cut is labelled ``source``.  Returns (vertices, sources)
    as plain lists; empty lists if nothing survives.
    """
    out_v, out_s = [], []
    m = len(vertices)
    vals = [float(np.dot(normal, v) - offset) for v in vertices]
    for i in range(m):
        a, b = vals[i], vals[(i + 1) % m]
        va, vb = vertices[i], vertices[(i + 1) % m]
        if a <= 0.0:
            if b <= 0.0:
                out_v.append(va)
                out_s.append(sources[i])
            else:
                out_v.append(va)
                out_s.append(sources[i])
                t = a / (a - b)
                out_v.append(va + t * (vb - va))
                out_s.append(source)
        elif b <= 0.0:
            t = a / (a - b)
            out_v.append(va + t * (vb - va))
            out_s.append(sources[i])
    # Collapse vertices merged by a cut passing through a corner.
    keep_v, keep_s = [], []
    n = len(out_v)
    for i in range(n):
        if keep_v and np.abs(out_v[i] - keep_v[-1]).max() < 1e-14:
            continue
        keep_v.append(out_v[i])
        keep_s.append(out_s[i])
    if len(keep_v) > 1 and np.abs(keep_v[0] - keep_v[-1]).max() < 1e-14:
        keep_v.pop()
        keep_s.pop()
    return keep_v, keep_s


def triangle_area(a, b, c):
    """Hyperbolic area of the geodesic triangle abc (Gauss-Bonnet)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    return (math.pi - metric_angle(a, b - a, c - a)
            - metric_angle(b, c - b, a - b)
            - metric_angle(c, a - c, b - c))


def polygon_area(vertices):
    """Hyperbolic area of a convex geodesic polygon given as chords."""
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    total = (n - 2) * math.pi
    for i in range(n):
        total -= metric_angle(v[i], v[i - 1] - v[i], v[(i + 1) % n] - v[i])
    return total


class Polygon:
    """Convex geodesic polygon: counterclockwise chord vertices.

    ``edge_sources`` optionally labels the edge from vertex i to vertex
    i+1, e.g. with the group element whose bisector carved it.
    """

    def __init__(self, vertices, edge_sources=None, validate=True):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least 3 points of shape (n, 2)")
        if np.any(np.sum(v * v, axis=1) >= 1.0):
            raise GeometryError("polygon vertex outside the open unit disk")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - \
            e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if validate:
            if np.any(cross < -1e-12):
                if np.all(cross < 1e-12):
                    # Clockwise input: reverse, remapping edge labels.
                    n = len(v)
                    v = v[::-1].copy()
                    if edge_sources is not None:
                        edge_sources = [edge_sources[(n - 2 - k) % n]
                                        for k in range(n)]
                    e = np.roll(v, -1, axis=0) - v
                else:
                    raise GeometryError("polygon is not convex")
        self.vertices = v
        self.edge_sources = list(edge_sources) if edge_sources is not None else None
        lengths = np.hypot(e[:, 0], e[:, 1])
        if np.any(lengths < 1e-300):
            raise GeometryError("polygon has a repeated vertex")
        self.normals = np.stack([e[:, 1], -e[:, 0]], axis=1) / lengths[:, None]
        self.offsets = np.sum(self.normals * v, axis=1)
        self._area = None

    def __len__(self):
        return len(self.vertices)

    def contains(self, points, margin=0.0):
        """Membership test; positive margin admits slightly outside points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = p @ self.normals.T - self.offsets
        ok = np.all(d <= margin, axis=1)
        return ok if np.asarray(points).ndim == 2 else bool(ok[0])

    @property
    def area(self):
        if self._area is None:
            self._area = polygon_area(self.vertices)
        return self._area

    def clip(self, normal, offset, source=None):
        normal = np.asarray(normal, dtype=float)
        src = self.edge_sources if self.edge_sources is not None \
            else [None] * len(self.vertices)
        v, s = _clip(list(self.vertices), src, normal, offset, source)
        if len(v) < 3:
            raise GeometryError("clip left no polygon")
        return Polygon(v, s, validate=False)

    def transform(self, iso):
        """Image polygon under an isometry (chords map to chords)."""
        return Polygon(iso.apply(self.vertices), self.edge_sources,
                       validate=False)

    def sample(self, n, rng):
        return sample_points(self.vertices, n, rng)


def regular_polygon(k, radius_e, phase=0.0):
    """Euclidean-regular k-gon vertex array at Euclidean radius radius_e."""
    ang = phase + 2.0 * math.pi * np.arange(k) / k
    return radius_e * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def halfplane_intersection(normals, offsets, sources=None,
                           rim_sides=256, rim_radius=1.0 - 1e-9):
    """Intersect half-planes normal_i . x <= offset_i inside the disk.

    Starts from a regular rim polygon just inside the unit circle, so the
    result is always bounded; edges still lying on the rim afterwards are
    labelled None and mark directions where the true region reaches the
    circle.  Returns a Polygon with ``edge_sources``.
    """
    normals = np.asarray(normals, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if sources is None:
        sources = list(range(len(normals)))
    v = list(regular_polygon(rim_sides, rim_radius, phase=math.pi / rim_sides))
    s = [None] * rim_sides
    for nrm, off, src in zip(normals, offsets, sources):
        v, s = _clip(v, s, nrm, off, src)
        if len(v) < 3:
            raise GeometryError("half-planes have empty intersection")
    return Polygon(v, s, validate=False)


def repair_ideal_vertices(poly, lines, clamp_radius=1.0 - 1e-14):
    """Replace rim arcs of a clipped polygon by true ideal corners.

    ``lines`` maps an edge source to its (normal, offset) chord.  Each
    maximal run of rim edges (source None) is replaced by the single
    intersection point of the two flanking chords, clamped to lie inside
    the disk.  The output polygon has chord edges only.
    """
    src = poly.edge_sources
    if src is None or all(x is not None for x in src):
        return poly
    n = len(poly.vertices)
    if all(x is None for x in src):
        raise GeometryError("polygon is the whole rim; nothing to repair")
    corner_at = {}   # run start index -> (corner point, following edge source)
    dropped = set()  # vertex indices swallowed by some run
    i = 0
    while i < n:
        if src[i] is not None:
            i += 1
            continue
        # Extend the run backwards across the seam, then forwards.
        start = i
        while src[(start - 1) % n] is None:
            start = (start - 1) % n
            if start == i:
                break
        if start in corner_at:
            i += 1
            continue
        end = start
        while src[(end + 1) % n] is None:
            end = (end + 1) % n
        n1, o1 = lines[src[(start - 1) % n]]
        n2, o2 = lines[src[(end + 1) % n]]
        x = np.linalg.solve(np.array([n1, n2], dtype=float),
                            np.array([o1, o2], dtype=float))
        r = math.hypot(x[0], x[1])
        if r > clamp_radius:
            x = x * (clamp_radius / r)
        corner_at[start] = (x, src[(end + 1) % n])
        k = start
        while True:
            dropped.add(k)
            if k == (end + 1) % n:
                break
            k = (k + 1) % n
        i += 1
    out_v, out_s = [], []
    for i in range(n):
        if i in corner_at:
            x, s = corner_at[i]
            out_v.append(x)
            out_s.append(s)
        elif i not in dropped:
            out_v.append(poly.vertices[i])
            out_s.append(src[i])
    return Polygon(out_v, out_s, validate=False)


# ---------------------------------------------------------------------------
# area-uniform sampling

_RATIO_CAP = 8.0
_MAX_DEPTH = 60


def _origin_in_triangle(a, b, c):
    d1 = a[0] * b[1] - a[1] * b[0]
    d2 = b[0] * c[1] - b[1] * c[0]
    d3 = c[0] * a[1] - c[1] * a[0]
    return (d1 >= 0 and d2 >= 0 and d3 >= 0) or (d1 <= 0 and d2 <= 0 and d3 <= 0)


def _segment_rho_min(a, b):
    e = b - a
    t = -(a @ e) / (e @ e)
    t = min(1.0, max(0.0, t))
    p = a + t * e
    return math.hypot(p[0], p[1])


def _tri_rho_range(a, b, c):
    rho_max = max(math.hypot(*a), math.hypot(*b), math.hypot(*c))
    if _origin_in_triangle(a, b, c):
        return 0.0, rho_max
    rho_min = min(_segment_rho_min(a, b), _segment_rho_min(b, c),
                  _segment_rho_min(c, a))
    return rho_min, rho_max


def _sample_triangle(a, b, c, m, rng, depth=0):
    if m == 0:
        return np.empty((0, 2))
    rho_min, rho_max = _tri_rho_range(a, b, c)
    ratio = ((1.0 - rho_min ** 2) / (1.0 - rho_max ** 2)) ** 1.5
    if ratio > _RATIO_CAP and depth < _MAX_DEPTH:
        # Split the longest chord; area weights keep the draw uniform.
        sides = [(b - a, a, b, c), (c - b, b, c, a), (a - c, c, a, b)]
        e, p, q, r = max(sides, key=lambda s: s[0] @ s[0])
        mid = p + 0.5 * (q - p)
        a1 = max(triangle_area(p, mid, r), 0.0)
        a2 = max(triangle_area(mid, q, r), 0.0)
        if a1 + a2 <= 0.0:
            m1 = m // 2
        else:
            m1 = rng.binomial(m, a1 / (a1 + a2))
        return np.concatenate([
            _sample_triangle(p, mid, r, int(m1), rng, depth + 1),
            _sample_triangle(mid, q, r, m - int(m1), rng, depth + 1)])
    out = []
    need = m
    # At the depth cap fall back to the Euclidean-uniform draw; the mass
    # reaching that depth is negligible against statistical tolerances.
    plain = depth >= _MAX_DEPTH and ratio > _RATIO_CAP
    scale = (1.0 - rho_max ** 2) ** 1.5
    while need > 0:
        k = max(64, int(1.5 * need * min(ratio, _RATIO_CAP)))
        u = rng.random(k)
        v = rng.random(k)
        fold = u + v > 1.0
        u[fold] = 1.0 - u[fold]
        v[fold] = 1.0 - v[fold]
        pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
        if plain:
            acc = pts
        else:
            rho2 = np.sum(pts * pts, axis=1)
            p_acc = scale / np.maximum(1.0 - rho2, 1e-300) ** 1.5
            acc = pts[rng.random(k) < p_acc]
        take = min(need, len(acc))
        out.append(acc[:take])
        need -= take
    return np.concatenate(out)


def sample_points(vertices, n, rng):
    """Draw n points from the hyperbolic-area-uniform law on the polygon.

    Works by fan triangulation and recursive bisection of triangles whose
    density swing is too large for direct rejection; handles polygons with
    vertices essentially on the circle, where global rejection would never
    terminate.
    """
    v = np.asarray(vertices, dtype=float)
    ctr = v.mean(axis=0)
    tris = [(ctr, v[i], v[(i + 1) % len(v)]) for i in range(len(v))]
    areas = np.array([max(triangle_area(*t), 0.0) for t in tris])
    total = areas.sum()
    if total <= 0.0:
        raise GeometryError("polygon has no area to sample")
    counts = rng.multinomial(n, areas / total)
    parts = [_sample_triangle(*t, int(m), rng)
             for t, m in zip(tris, counts) if m > 0]
    return np.concatenate(parts) if parts else np.empty((0, 2))


def sample_point(vertices, rng):
    return sample_points(vertices, 1, rng)[0]


# ---------------------------------------------------------------------------
# point identification across numerical noise


class PointTable:
    """Deduplicating index of points, reliable far from the origin.

    Keys are azimuthal-equidistant coordinates d * (cos t, sin t) on a
    coarse grid, so representations of one point computed along different
    group words land in neighbouring cells despite the severe radial
    ill-conditioning of Klein coordinates near the circle.  Candidates
    are confirmed with the lifted difference formula.  Copies of one
    point computed along different long words carry hyperbolic noise
    that grows rapidly with distance (observed up to ~1e-4 near radius
    ten for high-valence tilings), so the acceptance threshold ramps up
    like cosh(d)^4 and saturates at a merge radius of ~0.3.  Every table
    in this package holds points separated by at least ~1, an order of
    magnitude above the saturated merge radius, while duplicates pass
    with a margin of about a million.
    """

    __slots__ = ("tol", "cell", "points", "_lifted", "_cells")

    def __init__(self, tol=DEDUP_TOL, cell=0.01):
        self.tol = tol
        self.cell = cell
        self.points = []
        self._lifted = []
        self._cells = {}

    def __len__(self):
        return len(self.points)

    def _key(self, p):
        rho = math.hypot(p[0], p[1])
        if rho < 1e-12:
            return (0, 0)
        d = math.atanh(min(rho, 1.0 - 1e-17))
        f = d / rho
        return (math.floor(f * p[0] / self.cell), math.floor(f * p[1] / self.cell))

    def find(self, p):
        """Index of a stored copy of p, or None."""
        p = np.asarray(p, dtype=float)
        pl = lift(p)
        thresh = max(0.5 * self.tol ** 2, min(5e-2, 1e-19 * pl[2] ** 4))
        ki, kj = self._key(p)
        for i in range(ki - 1, ki + 2):
            for j in range(kj - 1, kj + 2):
                for idx in self._cells.get((i, j), ()):
                    dl = pl - self._lifted[idx]
                    c = 0.5 * (dl[0] ** 2 + dl[1] ** 2 - dl[2] ** 2)
                    if c <= thresh:
                        return idx
        return None

    def insert(self, p):
        """Return (index, inserted_now) for the point p."""
        idx = self.find(p)
        if idx is not None:
            return idx, False
        p = np.asarray(p, dtype=float)
        idx = len(self.points)
        self.points.append(p)
        self._lifted.append(lift(p))
        self._cells.setdefault(self._key(p), []).append(idx)
        return idx, True

    def array(self):
        return np.array(self.points) if self.points else np.empty((0, 2))


def orbit_points(generators, radius, basepoint=(0.0, 0.0), pad=4.0,
                 max_points=2_000_000):
    """Orbit of ``basepoint`` within distance ``radius`` of the origin.

    Breadth-first closure over the generators and their inverses, pruned
    at radius + pad.  Every orbit point reachable through the padded ball
    is found; ``pad`` must dominate the detour a word path needs relative
    to the straight geodesic, which for the groups used here it does by a
    wide margin.
    """
    mats = []
    for g in generators:
        mats.append(g.matrix)
        mats.append(g.inverse.matrix)
    mats = np.array(mats)
    table = PointTable()
    start = np.atleast_2d(np.asarray(basepoint, dtype=float))
    limit = math.cosh(radius + pad)
    frontier = []
    for row in start:
        _, fresh = table.insert(row)
        if fresh:
            frontier.append(lift(row))
    frontier = np.array(frontier)
    while len(frontier):
        imgs = np.einsum("gij,nj->gni", mats, frontier).reshape(-1, 3)
        # Renormalise onto the hyperboloid to stop drift over long words.
        nrm = np.sqrt(imgs[:, 2] ** 2 - imgs[:, 0] ** 2 - imgs[:, 1] ** 2)
        imgs = imgs / nrm[:, None]
        imgs = imgs[imgs[:, 2] <= limit]
        new = []
        for row in imgs:
            k = to_klein(row)
            _, fresh = table.insert(k)
            if fresh:
                new.append(lift(table.points[-1]))
        if len(table) > max_points:
            raise GeometryError("orbit enumeration exceeded max_points")
        frontier = np.array(new) if new else np.empty((0, 3))
    pts = table.array()
    keep = klein_distance(pts, np.zeros(2)) <= radius
    return pts[keep]


def group_ball_matrices(generators, prune=None, max_elements=100_000):
    """All group elements moving the origin at most ``prune`` away.

    Breadth-first closure with matrix deduplication; rotation powers of
    any order are picked up because pruning is by displacement, not word
    length.  When ``prune`` is omitted it is sized from the generators so
    that every translation between neighbouring orbit points fits in the
    ball.  Returns a (g, 3, 3) array including the identity.
    """
    singles = []
    for g in generators:
        singles.append(g.matrix)
        singles.append(g.inverse.matrix)
    if prune is None:
        # A rotation about a fixed point at distance t moves the origin up
        # to 2t, which is also the spacing of the orbit it generates with
        # its conjugates; a 30% margin keeps all such moves in the ball.
        top = max(math.acosh(max(float(s[2, 2]), 1.0)) for s in singles)
        prune = max(2.6, 1.3 * top)
    limit = math.cosh(prune)

    # Dedup by comparing matrices within displacement buckets.  Rounding
    # to a fixed decimal grid is not safe: the same element reached along
    # two word paths differs by accumulated roundoff and may straddle a
    # grid boundary, duplicating without bound.
    out = [np.eye(3)]
    buckets = {1000: [0]}

    def _register(cand):
        base = int(round(cand[2, 2] * 1e3))
        for b in (base - 1, base, base + 1):
            for idx in buckets.get(b, ()):
                if np.abs(cand - out[idx]).max() < 1e-6:
                    return False
        out.append(cand)
        buckets.setdefault(base, []).append(len(out) - 1)
        return True

    frontier = [np.eye(3)]
    while frontier:
        new = []
        for m in frontier:
            for s in singles:
                cand = lorentz_renormalize(s @ m)
                if cand[2, 2] > limit:
                    continue
                if _register(cand):
                    new.append(cand)
        if len(out) > max_elements:
            raise GeometryError("group ball enumeration exceeded "
                                "max_elements")
        frontier = new
    return np.array(out)


def fold_with(ball_mats, p, stop=1.0, max_iter=None):
    """Greedy fold of p toward the origin using precomputed elements.

    Repeatedly applies the ball element that most reduces the distance
    to the origin.  The ball reaches every neighbouring copy of the base
    cell, so the descent can only stall once p is inside the ball's own
    radius; stalling further out means the elements do not generate a
    discrete group of the expected kind.  Returns (gamma, gamma(p)).
    """
    x = lift(np.asarray(p, dtype=float))
    gamma = np.eye(3)
    best = x[2]
    radius = math.acosh(float(np.max(ball_mats[:, 2, 2]))) + 1e-9
    if max_iter is None:
        max_iter = 40 + int(4.0 * math.acosh(max(best, 1.0)))
    for _ in range(max_iter):
        if best <= math.cosh(stop):
            break
        cand = ball_mats @ x
        nrm = np.sqrt(cand[:, 2] ** 2 - cand[:, 0] ** 2 - cand[:, 1] ** 2)
        cand = cand / nrm[:, None]
        k = int(np.argmin(cand[:, 2]))
        if cand[k, 2] >= best * (1.0 - 1e-12):
            break
        x = cand[k]
        best = x[2]
        gamma = ball_mats[k] @ gamma
    if best > math.cosh(max(stop, radius)):
        raise GeometryError("folding descent stalled far from the origin")
    # Do not re-orthonormalise gamma here: Gram-Schmidt on a matrix with
    # entries ~cosh(d) loses ~cosh(d)^2 ulps to cancellation, far worse
    # than the tiny drift of this short product of clean factors.
    return Isometry(gamma, validate=False), to_klein(x)


def fold_to_base(generators, p, stop=1.0, prune=None):
    """One-shot fold; enumerate the element ball, then descend."""
    return fold_with(group_ball_matrices(generators, prune), p, stop=stop)
