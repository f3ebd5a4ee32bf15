"""Plain-text readers and writers for packings, weights, quotients, colorings.

Every file opens with a one-line version tag such as ``hypack packing 1``.
Floats are written with 17 significant digits so reloading reproduces the
doubles bit for bit; exact rationals are written as ``p/q`` and survive a
round trip unchanged.  Matrices are written row-major, nine numbers per
line.
"""

from fractions import Fraction

import numpy as np

from .geometry import Isometry, Polygon
from .homothety import WindowPacking
from .packing import PeriodicPacking
from .shifts import CylinderWeights, QuotientSystem
from .transport import PackingColoring, default_free_group

_FMT = "%.17g"


def _num(x):
    return _FMT % float(x)


def _row(values):
    return " ".join(_num(v) for v in values)


def _weight_str(v):
    if isinstance(v, (int, Fraction)):
        f = Fraction(v)
        return f"{f.numerator}/{f.denominator}"
    return _num(v)


def _weight_val(tok):
    if "/" in tok:
        p, q = tok.split("/")
        return Fraction(int(p), int(q))
    return float(tok)


def _check_tag(line, kind):
    parts = line.split()
    if parts[:2] != ["hypack", kind] or parts[2:] != ["1"]:
        raise ValueError(f"not a hypack {kind} file: {line!r}")


def _expect(tokens, name):
    if not tokens or tokens[0] != name:
        raise ValueError(f"expected a {name!r} line")
    return tokens[1:]


class _Lines:
    def __init__(self, text):
        self.rows = [ln.strip() for ln in text.splitlines()
                     if ln.strip() and not ln.startswith("#")]
        self.at = 0

    def next(self):
        if self.at >= len(self.rows):
            raise ValueError("file ended early")
        self.at += 1
        return self.rows[self.at - 1]


def save_packing(path, pk):
    """Write a periodic or windowed packing."""
    gens = getattr(pk, "generators", [])
    dom = getattr(pk, "domain", None)
    out = ["hypack packing 1", f"radius {_num(pk.radius)}",
           f"generators {len(gens)}"]
    for g in gens:
        out.append(_row(g.matrix.reshape(-1)))
    verts = dom.vertices if dom is not None else np.empty((0, 2))
    out.append(f"domain {len(verts)}")
    for v in verts:
        out.append(_row(v))
    out.append(f"centers {len(pk.centers)}")
    for c in pk.centers:
        out.append(_row(c))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def load_packing(path):
    with open(path) as fh:
        ls = _Lines(fh.read())
    _check_tag(ls.next(), "packing")
    radius = float(_expect(ls.next().split(), "radius")[0])
    ng = int(_expect(ls.next().split(), "generators")[0])
    gens = [Isometry(np.array([float(t) for t in ls.next().split()])
                     .reshape(3, 3)) for _ in range(ng)]
    nv = int(_expect(ls.next().split(), "domain")[0])
    verts = np.array([[float(t) for t in ls.next().split()]
                      for _ in range(nv)]).reshape(nv, 2)
    nc = int(_expect(ls.next().split(), "centers")[0])
    centers = np.array([[float(t) for t in ls.next().split()]
                        for _ in range(nc)]).reshape(nc, 2)
    if ng == 0:
        window = 0.0
        if nc:
            rho = np.hypot(centers[:, 0], centers[:, 1])
            window = float(np.arctanh(np.minimum(rho, 1 - 1e-15)).max()) + 1e-6
        return WindowPacking(centers, radius, window)
    return PeriodicPacking(gens, centers, radius, Polygon(verts))


def save_weights(path, w):
    """Write cylinder weights over an integer alphabet."""
    out = ["hypack weights 1", f"n {w.n}", f"r {w.r}",
           f"K {len(w.alphabet)}", f"vertex {len(w.vertex)}"]
    for pat in sorted(w.vertex):
        out.append(" ".join(str(s) for s in pat) + " "
                   + _weight_str(w.vertex[pat]))
    out.append(f"edge {len(w.edge)}")
    for i, vals in sorted(w.edge):
        out.append(f"{i} " + " ".join(str(s) for s in vals) + " "
                   + _weight_str(w.edge[(i, vals)]))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def load_weights(path):
    with open(path) as fh:
        ls = _Lines(fh.read())
    _check_tag(ls.next(), "weights")
    n = int(_expect(ls.next().split(), "n")[0])
    r = int(_expect(ls.next().split(), "r")[0])
    K = int(_expect(ls.next().split(), "K")[0])
    nv = int(_expect(ls.next().split(), "vertex")[0])
    vertex = {}
    for _ in range(nv):
        toks = ls.next().split()
        vertex[tuple(int(t) for t in toks[:-1])] = _weight_val(toks[-1])
    ne = int(_expect(ls.next().split(), "edge")[0])
    edge = {}
    for _ in range(ne):
        toks = ls.next().split()
        key = (int(toks[0]), tuple(int(t) for t in toks[1:-1]))
        edge[key] = _weight_val(toks[-1])
    return CylinderWeights(n, r, tuple(range(K)), vertex, edge)


def save_quotient(path, Q):
    """Write a finite quotient system over an integer alphabet."""
    out = ["hypack quotient 1", f"n {Q.n}", f"r {Q.r}",
           f"K {len(Q.alphabet)}", f"N {Q.N}"]
    for pat in Q.labels:
        out.append(" ".join(str(s) for s in pat))
    for i, p in enumerate(Q.perms, start=1):
        out.append(f"perm {i}")
        out.append(" ".join(str(int(v)) for v in p))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def load_quotient(path):
    with open(path) as fh:
        ls = _Lines(fh.read())
    _check_tag(ls.next(), "quotient")
    n = int(_expect(ls.next().split(), "n")[0])
    r = int(_expect(ls.next().split(), "r")[0])
    K = int(_expect(ls.next().split(), "K")[0])
    N = int(_expect(ls.next().split(), "N")[0])
    labels = tuple(tuple(int(t) for t in ls.next().split())
                   for _ in range(N))
    perms = []
    for i in range(1, n + 1):
        _expect(ls.next().split(), "perm")
        perms.append(np.array([int(t) for t in ls.next().split()]))
        if len(perms[-1]) != N:
            raise ValueError(f"permutation {i} has the wrong length")
    return QuotientSystem(n, r, tuple(range(K)), labels, tuple(perms))


def save_coloring(path, col):
    """Write a packing coloring over the default embedded group."""
    out = ["hypack coloring 1", "embedding default",
           f"radius {_num(col.radius)}", f"window {col.window_words}",
           f"values {len(col.values)}"]
    for w in sorted(col.values):
        arr = col.values[w]
        out.append(f"value {len(arr)} " + " ".join(str(l) for l in w))
        for c in arr:
            out.append(_row(c))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def load_coloring(path, emb=None):
    with open(path) as fh:
        ls = _Lines(fh.read())
    _check_tag(ls.next(), "coloring")
    ref = _expect(ls.next().split(), "embedding")[0]
    if ref != "default":
        raise ValueError(f"unknown embedding reference {ref!r}")
    if emb is None:
        emb = default_free_group()
    radius = float(_expect(ls.next().split(), "radius")[0])
    window = int(_expect(ls.next().split(), "window")[0])
    nw = int(_expect(ls.next().split(), "values")[0])
    values = {}
    for _ in range(nw):
        toks = _expect(ls.next().split(), "value")
        m = int(toks[0])
        word = tuple(int(t) for t in toks[1:])
        arr = np.array([[float(t) for t in ls.next().split()]
                        for _ in range(m)]).reshape(m, 2)
        values[word] = arr
    return PackingColoring(emb, radius, window, values)
