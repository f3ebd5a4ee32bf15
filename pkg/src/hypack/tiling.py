"""Regular tilings {s, a}: s-gons meeting a around each vertex.

A tiling is hyperbolic when (s - 2)(a - 2) > 4.  Tiles are enumerated
breadth first from a base tile centred at the origin; the neighbour of a
tile across edge i is the image of the tile under the half-turn about
that edge's midpoint, so the whole family is generated by the s
half-turns about the base tile's edge midpoints.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import (GeometryError, Isometry, PointTable, Polygon,
                       klein_distance, lorentz_renormalize, regular_polygon)


@dataclass(frozen=True)
class TilingGeometry:
    """Closed-form dimensions of the {s, a} tile."""

    s: int
    a: int
    circumradius: float   # centre to vertex
    inradius: float       # centre to edge midpoint
    edge_length: float
    area: float

    @property
    def vertex_angle(self):
        return 2.0 * math.pi / self.a


def tiling_geometry(s, a):
    s = int(s)
    a = int(a)
    if (s - 2) * (a - 2) <= 4:
        raise GeometryError(f"{{{s}, {a}}} is not a hyperbolic tiling")
    circ = math.acosh(1.0 / (math.tan(math.pi / s) * math.tan(math.pi / a)))
    inr = math.acosh(math.cos(math.pi / a) / math.sin(math.pi / s))
    edge = 2.0 * math.acosh(math.cos(math.pi / s) / math.sin(math.pi / a))
    area = (s - 2 - 2.0 * s / a) * math.pi
    return TilingGeometry(s, a, circ, inr, edge, area)


def build_tile(s, a):
    """Base tile: vertex j at angle 2 pi j / s from the positive x axis."""
    geom = tiling_geometry(s, a)
    return Polygon(regular_polygon(s, math.tanh(geom.circumradius)))


def edge_midpoints(s, a):
    """Midpoints of the base tile's edges, edge i at angle (2i+1) pi / s."""
    geom = tiling_geometry(s, a)
    ang = (2.0 * np.arange(s) + 1.0) * math.pi / s
    return math.tanh(geom.inradius) * np.stack([np.cos(ang), np.sin(ang)],
                                               axis=1)


def edge_flips(s, a):
    """Half-turns about the base tile's edge midpoints, as isometries."""
    return [Isometry.rotation(math.pi, center=m) for m in edge_midpoints(s, a)]


class TilingFamily:
    """Breadth-first enumeration of {s, a} tiles around the origin.

    Tile 0 is the base tile.  ``ensure_radius(d)`` guarantees that every
    tile whose centre lies within distance d of the origin is present;
    ``locate`` assigns any point to the first enumerated tile containing
    it, which makes the assignment deterministic on shared edges.
    """

    def __init__(self, s, a):
        self.geom = tiling_geometry(s, a)
        self.base = build_tile(s, a)
        self.flips = [f.matrix for f in edge_flips(s, a)]
        self._table = PointTable()
        self._table.insert(np.zeros(2))
        self.mats = [np.eye(3)]
        self._complete = 0.0

    def __len__(self):
        return len(self.mats)

    @property
    def centers(self):
        return self._table.array()

    def center(self, i):
        return self._table.points[i]

    def isometry(self, i):
        return Isometry(self.mats[i], validate=False)

    def polygon(self, i):
        return self.base.transform(self.isometry(i))

    def ensure_radius(self, d):
        """Enumerate every tile whose centre is within distance d."""
        if d <= self._complete:
            return
        # A tile with centre within d is reached through tiles whose
        # centres stay within d + circumradius of the origin.
        limit = math.cosh(d + self.geom.circumradius + 0.1)
        queue = deque(range(len(self.mats)))
        while queue:
            i = queue.popleft()
            base = self.mats[i]
            for f in self.flips:
                m = base @ f
                z = m[2, 2]
                if z > limit:
                    continue
                c = np.array([m[0, 2] / z, m[1, 2] / z])
                idx, fresh = self._table.insert(c)
                if fresh:
                    self.mats.append(lorentz_renormalize(m))
                    queue.append(idx)
        self._complete = d

    def locate(self, p, margin=1e-12):
        """Index of the first enumerated tile containing p."""
        p = np.asarray(p, dtype=float)
        d0 = float(klein_distance(np.zeros(2), p))
        self.ensure_radius(d0 + self.geom.circumradius + 1e-9)
        dist = klein_distance(self.centers, p)
        cand = np.flatnonzero(dist <= self.geom.circumradius + 1e-6)
        for i in sorted(cand):
            if self.polygon(int(i)).contains(p, margin=margin):
                return int(i)
        raise GeometryError(f"no tile contains {p}")

    def vertex_points(self, d):
        """All tile vertices within distance d of the origin, deduplicated."""
        self.ensure_radius(d + self.geom.circumradius)
        table = PointTable()
        origin = np.zeros(2)
        near = np.flatnonzero(klein_distance(self.centers, origin)
                              <= d + self.geom.circumradius)
        for i in near:
            verts = self.isometry(int(i)).apply(self.base.vertices)
            for v in verts:
                if klein_distance(v, origin) <= d:
                    table.insert(v)
        return table.array()


def tiling_vertices_within(s, a, d):
    return TilingFamily(s, a).vertex_points(d)
