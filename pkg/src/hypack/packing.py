"""Periodic circle packings and their densities.

A periodic packing is an orbit of disk centres under a discrete group of
isometries, described by a unit cell: a convex fundamental polygon (or,
for packings whose centres are fixed points of the group, a centred
Voronoi cell, which works in every formula because cell area and centre
multiplicity scale together).  Density is the covered fraction of the
plane, which for a unit cell is exact:

    density = n_centres * disk_area(r) / cell_area.

The closed-form tight family places centres at the vertices of {3, k}
with touching disks; its density meets the triangle bound exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (Isometry, PointTable, Polygon, klein_distance,
                       orbit_points, regular_polygon, sample_points)
from .montecarlo import chunked_mean
from .tiling import build_tile, edge_midpoints, tiling_geometry


class SeparationError(ValueError):
    """Disks of a claimed packing overlap, or the unit cell is wrong."""


def disk_area(r):
    """Area of a hyperbolic disk of radius r."""
    return 2.0 * math.pi * (math.cosh(r) - 1.0)


class PeriodicPacking:
    """Unit-cell description of a periodic packing.

    generators : isometries generating the symmetry group
    centers    : (n, 2) disk centres inside the cell
    radius     : common disk radius
    domain     : the unit cell polygon
    pad        : breadth-first search slack for orbit enumeration; must
                 dominate the word-path detour, so roughly two generator
                 displacements
    """

    def __init__(self, generators, centers, radius, domain, pad=2.5):
        self.generators = list(generators)
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radius = float(radius)
        self.domain = domain
        self.pad = float(pad)
        if self.radius <= 0.0:
            raise SeparationError("disk radius must be positive")

    @property
    def density(self):
        return len(self.centers) * disk_area(self.radius) / self.domain.area

    def orbit_centers(self, window, pad=None):
        """All orbit centres within distance ``window`` of the origin."""
        return orbit_points(self.generators, window, basepoint=self.centers,
                            pad=self.pad if pad is None else pad)

    def shrunk(self, s):
        """Same centres and group, radius s instead."""
        if not 0.0 < s <= self.radius:
            raise SeparationError("shrunk radius must be in (0, radius]")
        return PeriodicPacking(self.generators, self.centers, s, self.domain,
                               pad=self.pad)


def periodic_density(packing):
    return packing.density


def shrink_factor(r, s):
    """Exact density ratio when disks of radius r shrink to radius s."""
    return (math.cosh(s) - 1.0) / (math.cosh(r) - 1.0)


@dataclass(frozen=True)
class DensityReport:
    value: float
    stderr: float
    samples: int


def mc_density(packing, n, seed, chunk=20_000):
    """Monte Carlo coverage fraction of the unit cell, with its error.

    Agrees with the exact density in expectation; provided as the
    independent estimate the exact formula is checked against.
    """
    window = 0.0
    origin = np.zeros(2)
    for v in packing.domain.vertices:
        window = max(window, float(klein_distance(origin, v)))
    centers = packing.orbit_centers(window + packing.radius + 0.5)
    r = packing.radius

    def toss(rng, m):
        z = sample_points(packing.domain.vertices, m, rng)
        d = klein_distance(z[:, None, :], centers[None, :, :])
        return (d.min(axis=1) <= r).astype(float)

    value, err, total = chunked_mean(toss, n, seed, chunk=chunk)
    return DensityReport(value, err, total)


# ---------------------------------------------------------------------------
# the triangle bound and the tight family


def ft_bound(r):
    """Upper bound for the density of any packing by disks of radius r.

    Three mutually tangent disks span an equilateral triangle of side 2r
    with vertex angle alpha; no packing beats the covered fraction of
    that triangle.
    """
    if r <= 0.0:
        raise ValueError("radius must be positive")
    # alpha = arccos(cosh 2r / (1 + cosh 2r)), written through the half
    # angle so it survives large r.
    alpha = 2.0 * math.asin(1.0 / math.sqrt(2.0 * (1.0 + math.cosh(2.0 * r))))
    return 3.0 * alpha * (math.cosh(r) - 1.0) / (math.pi - 3.0 * alpha)


def tight_radius(k):
    """Disk radius for which the {3, k} vertex packing has touching disks."""
    k = int(k)
    if k < 7:
        raise ValueError("need k >= 7 for a hyperbolic vertex packing")
    return math.acosh(0.5 / math.sin(math.pi / k))


def build_tight_packing(k):
    """Touching-disk packing on the vertices of {3, k}, k >= 7.

    Centres sit at the {k, 3} tile centres, so the natural unit cell is
    the centred {k, 3} tile (the Voronoi cell of the origin centre) and
    the group is generated by the cell's own rotations: 2 pi / k about
    the centre, 2 pi / 3 about a vertex, pi about an edge midpoint.
    """
    r = tight_radius(k)
    geom = tiling_geometry(k, 3)
    cell = build_tile(k, 3)
    vertex = np.array([math.tanh(geom.circumradius), 0.0])
    mid = edge_midpoints(k, 3)[0]
    gens = [Isometry.rotation(2.0 * math.pi / k),
            Isometry.rotation(2.0 * math.pi / 3.0, center=vertex),
            Isometry.rotation(math.pi, center=mid)]
    return PeriodicPacking(gens, [np.zeros(2)], r, cell)


def tight_density(k):
    """Density of the tight {3, k} packing, in closed form."""
    return 6.0 * (math.cosh(tight_radius(k)) - 1.0) / (k - 6.0)


# ---------------------------------------------------------------------------
# one orbit, two unit cells: the genus-2 octagon


def octagon_translations():
    """Opposite-edge gluing translations of the {8, 8} octagon.

    The four translations along the axes through the edge midpoints by
    twice the inradius close up the octagon into a genus-2 surface (the
    eight corners of angle pi/4 meet in one vertex of total angle 2 pi),
    so the octagon is a strict fundamental domain for the group.
    """
    geom = tiling_geometry(8, 8)
    out = []
    for i in range(4):
        theta = (2 * i + 1) * math.pi / 8.0
        rot = Isometry.rotation(theta)
        out.append(rot @ Isometry.boost_x(2.0 * geom.inradius) @ rot.inverse)
    return out


def octagon_packing(offset=0.3, r=0.25):
    """Two-centre packing with the full octagon as unit cell."""
    centers = [[math.tanh(offset), 0.0], [-math.tanh(offset), 0.0]]
    return PeriodicPacking(octagon_translations(), centers, r,
                           build_tile(8, 8), pad=7.0)


def halved_octagon_packing(offset=0.3, r=0.25):
    """The same packing described over the half cell.

    Adjoining the half-turn about the origin doubles the group (the
    half-turn conjugates each gluing translation to its inverse) and the
    right half of the octagon, cut along the chord through the two
    vertices on the y axis, becomes a unit cell with a single centre.
    """
    geom = tiling_geometry(8, 8)
    re = math.tanh(geom.circumradius)
    oct_v = regular_polygon(8, re)
    half = Polygon([oct_v[6], oct_v[7], oct_v[0], oct_v[1], oct_v[2]])
    gens = octagon_translations() + [Isometry.rotation(math.pi)]
    return PeriodicPacking(gens, [[math.tanh(offset), 0.0]], r, half,
                           pad=7.0)


# ---------------------------------------------------------------------------
# validation


def _group_ball(generators, word_len):
    """All isometries expressible as words of length <= word_len."""
    mats = {np.round(np.eye(3), 9).tobytes(): np.eye(3)}
    frontier = [np.eye(3)]
    step = []
    for g in generators:
        step.append(g.matrix)
        step.append(g.inverse.matrix)
    for _ in range(word_len):
        new = []
        for m in frontier:
            for s in step:
                t = m @ s
                key = np.round(t, 9).tobytes()
                if key not in mats:
                    mats[key] = t
                    new.append(t)
        frontier = new
    return [Isometry(m, validate=False) for m in mats.values()]


def validate(packing, tol=1e-8, word_len=4):
    """Check the unit-cell description; raise SeparationError if broken.

    Verifies that the centres lie in the cell, that orbit disks out to
    word length ``word_len`` never overlap, and that the orbit meets the
    cell interior in exactly the listed centres.
    """
    dom = packing.domain
    for c in packing.centers:
        if not dom.contains(c, margin=tol):
            raise SeparationError(f"centre {c} lies outside the unit cell")
    # Deduplicate orbit points reached along different words before
    # measuring separation; the raw distance formula cannot tell a
    # duplicate from a 1e-8 separation.
    table = PointTable(tol=tol)
    for w in _group_ball(packing.generators, word_len):
        for p in w.apply(packing.centers):
            table.insert(p)
    pts = table.array()
    d = klein_distance(pts[:, None, :], pts[None, :, :])
    np.fill_diagonal(d, np.inf)
    sep = float(d.min()) if len(pts) > 1 else math.inf
    if sep < 2.0 * packing.radius - tol:
        raise SeparationError(
            f"disks overlap: separation {sep:.6f} < {2 * packing.radius:.6f}")
    inside = pts[dom.contains(pts, margin=-1e-6)]
    matched = np.zeros(len(packing.centers), dtype=bool)
    for p in inside:
        dc = klein_distance(packing.centers, p)
        j = int(np.argmin(dc))
        if dc[j] > 1e-6:
            raise SeparationError(
                f"orbit point {p} inside the cell is not a listed centre")
        matched[j] = True
    if not matched.all():
        raise SeparationError("some centres were not seen in their own orbit")
    return {"separation": sep, "orbit_points": len(pts)}
