"""Invariant measures on colorings of a free group, approximated periodically.

A coloring assigns an alphabet element to every vertex of the Cayley tree
of the free group F_n.  An invariant measure is summarized by its
cylinder weights: one weight per radius-r ball pattern (vertex weights)
and one per pattern on the union of two adjacent balls (edge weights,
one family per generator).  Invariance forces two linear laws: vertex
weights sum to one, and for every pattern and generator the edge weights
out of it and into it each sum to the vertex weight.

Any flow-valid rational weight system is realized exactly by a finite
quotient: N points, one permutation per generator, labels whose
frequencies reproduce the weights.  Lifting a quotient component through
the tree gives a periodic coloring, and label frequencies give back the
weights exactly, which is the identity the whole module is built around.
Float weights are first repaired onto a rational grid by a per-generator
transportation step that preserves zero edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow


class InfeasibleError(ValueError):
    """No exact rational repair exists on the given support."""


# ---------------------------------------------------------------------------
# reduced words and balls in the free group

def _letters(n):
    """Generator letters in canonical order: 1, -1, 2, -2, ..."""
    out = []
    for j in range(1, n + 1):
        out.append(j)
        out.append(-j)
    return out


def reduce_word(a, b=()):
    """Reduced product of two reduced words (letters are nonzero ints)."""
    out = list(a)
    for letter in b:
        if out and out[-1] == -letter:
            out.pop()
        else:
            out.append(letter)
    return tuple(out)


@lru_cache(maxsize=None)
def ball(n, r):
    """All reduced words of length <= r, by length then letter order.

    Shorter words come first, so ball(n, r) is a prefix of ball(n, R)
    for r <= R; pattern restriction is tuple truncation.
    """
    words = [()]
    frontier = [()]
    for _ in range(r):
        new = []
        for w in frontier:
            for letter in _letters(n):
                if w and w[-1] == -letter:
                    continue
                new.append(w + (letter,))
        frontier = new
        words.extend(new)
    return tuple(words)


@lru_cache(maxsize=None)
def edge_domain(n, r, i):
    """Words of B_r(id) followed by the extra words of B_r(g_i)."""
    base = ball(n, r)
    seen = set(base)
    extra = []
    for h in base:
        w = reduce_word((i,), h)
        if w not in seen:
            seen.add(w)
            extra.append(w)
    return base + tuple(extra)


@lru_cache(maxsize=None)
def _target_index(n, r, i):
    """Positions of g_i * B_r(id) inside edge_domain(n, r, i)."""
    dom = {w: k for k, w in enumerate(edge_domain(n, r, i))}
    return tuple(dom[reduce_word((i,), h)] for h in ball(n, r))


def edge_source(e_vals, n, r):
    """Vertex pattern at the identity end of an edge pattern."""
    return tuple(e_vals[:len(ball(n, r))])


def edge_target(e_vals, n, r, i):
    """Vertex pattern at the g_i end of an edge pattern."""
    return tuple(e_vals[t] for t in _target_index(n, r, i))


# ---------------------------------------------------------------------------
# cylinder weights

class CylinderWeights:
    """Vertex and edge cylinder weights of an invariant coloring measure.

    alphabet : canonical tuple of alphabet elements; patterns are tuples
               of indices into it (over ball(n, r) in canonical order)
    vertex   : {pattern: weight}, nonzero entries only
    edge     : {(i, values over edge_domain(n, r, i)): weight}, nonzero
    exact    : all weights are Fractions; float weights are flagged
               inexact and only claim the flow laws to tolerance
    """

    def __init__(self, n, r, alphabet, vertex, edge):
        self.n = int(n)
        self.r = int(r)
        self.alphabet = tuple(alphabet)
        self.vertex = {k: v for k, v in vertex.items() if v != 0}
        self.edge = {k: v for k, v in edge.items() if v != 0}
        self.exact = all(isinstance(v, Fraction)
                         for v in self.vertex.values()) and \
            all(isinstance(v, Fraction) for v in self.edge.values())

    def vertex_weight(self, pattern):
        zero = Fraction(0) if self.exact else 0.0
        return self.vertex.get(tuple(pattern), zero)

    def restricted(self, r):
        """Marginal weights at a smaller radius (vertex map only)."""
        if r > self.r:
            raise ValueError(f"cannot restrict radius {self.r} weights "
                             f"to larger radius {r}")
        if r == self.r:
            return dict(self.vertex)
        keep = len(ball(self.n, r))
        out = {}
        for pat, w in self.vertex.items():
            key = pat[:keep]
            out[key] = out.get(key, 0) + w
        return out


def weights_from_bernoulli(p, r, n):
    """Product weights: every tree vertex colored independently with law p.

    Rational probabilities give exact weights; float probabilities give
    float weights (flagged), which is the input the rational repair is
    exercised on.
    """
    probs = []
    for v in p:
        probs.append(v if isinstance(v, (Fraction, int)) else float(v))
    total = sum(probs)
    if total != 1 or any(v < 0 for v in probs):
        if not (isinstance(total, float) and abs(total - 1.0) < 1e-12
                and all(v >= 0 for v in probs)):
            raise ValueError("p must be a probability distribution")
    alphabet = tuple(range(len(probs)))
    one = Fraction(1) if all(isinstance(v, (Fraction, int)) for v in probs) \
        else 1.0

    def product(values):
        w = one
        for v in values:
            w = w * probs[v]
        return w

    import itertools
    nb = len(ball(n, r))
    vertex = {}
    for vals in itertools.product(alphabet, repeat=nb):
        w = product(vals)
        if w != 0:
            vertex[vals] = w
    edge = {}
    for i in range(1, n + 1):
        ne = len(edge_domain(n, r, i))
        for vals in itertools.product(alphabet, repeat=ne):
            w = product(vals)
            if w != 0:
                edge[(i, vals)] = w
    return CylinderWeights(n, r, alphabet, vertex, edge)


def validate_weights(w):
    """None if the two flow laws and normalization hold, else a message.

    Exact equality for rational weights, 1e-12 otherwise.
    """
    tol = 0 if w.exact else 1e-12

    def bad(x, y):
        return abs(x - y) > tol

    total = sum(w.vertex.values())
    if bad(total, 1):
        return f"normalization: vertex weights sum to {total}"
    for v in list(w.vertex.values()) + list(w.edge.values()):
        if v < 0:
            return f"negative weight {v}"
    out_sum = {}
    in_sum = {}
    for (i, vals), wt in w.edge.items():
        src = edge_source(vals, w.n, w.r)
        tgt = edge_target(vals, w.n, w.r, i)
        out_sum[(src, i)] = out_sum.get((src, i), 0) + wt
        in_sum[(tgt, i)] = in_sum.get((tgt, i), 0) + wt
    keys = set(out_sum) | set(in_sum) | {(pat, i) for pat in w.vertex
                                         for i in range(1, w.n + 1)}
    for pat, i in sorted(keys):
        want = w.vertex.get(pat, 0)
        have = out_sum.get((pat, i), 0)
        if bad(have, want):
            return (f"out-flow law at pattern {pat}, generator {i}: "
                    f"edges sum to {have}, vertex weight {want}")
        have = in_sum.get((pat, i), 0)
        if bad(have, want):
            return (f"in-flow law at pattern {pat}, generator {i}: "
                    f"edges sum to {have}, vertex weight {want}")
    return None


# ---------------------------------------------------------------------------
# exact rational repair

def _circulation_repair(w, M):
    """Integer edge flows conserving at every pattern, near M * w (n = 1).

    Edge weights are rounded to integers and the divergence at each
    pattern is cancelled by one max-flow.  Every support edge gets its
    own midpoint node, so parallel and antiparallel edges stay separate
    and a correction path can raise any edge or lower it by at most its
    rounded value.  The vertex counts are then the shared marginals,
    normalized by the realized total, so no grid balancing step is
    needed and rigid supports cannot be broken by rounding.
    """
    keys = sorted(w.edge)
    g = {k: int(round(float(w.edge[k]) * M)) for k in keys}
    ends = {}
    for k in keys:
        i, vals = k
        ends[k] = (edge_source(vals, w.n, w.r),
                   edge_target(vals, w.n, w.r, i))
    pats = sorted({p for uv in ends.values() for p in uv})
    idx = {p: k for k, p in enumerate(pats)}
    div = {p: 0 for p in pats}
    for k in keys:
        u, v = ends[k]
        div[u] += g[k]
        div[v] -= g[k]
    V = len(pats)
    E = len(keys)
    # Nodes: 0 source, 1..V patterns, V+1..V+E midpoints, V+E+1 sink.
    rows, cols, caps = [], [], []
    need = 0
    for p in pats:
        if div[p] < 0:
            rows.append(0)
            cols.append(1 + idx[p])
            caps.append(-div[p])
            need += -div[p]
        elif div[p] > 0:
            rows.append(1 + idx[p])
            cols.append(V + E + 1)
            caps.append(div[p])
    big = M + sum(g.values()) + 1
    for m, k in enumerate(keys):
        u, v = ends[k]
        rows.append(1 + idx[u])
        cols.append(1 + V + m)
        caps.append(big)
        rows.append(1 + V + m)
        cols.append(1 + idx[v])
        caps.append(big)
        if g[k] > 0:
            # lowering edge k moves a unit from its target back to its
            # source, bounded by the rounded value
            rows.append(1 + idx[v])
            cols.append(1 + V + m)
            caps.append(g[k])
            rows.append(1 + V + m)
            cols.append(1 + idx[u])
            caps.append(g[k])
    graph = csr_matrix((np.array(caps, dtype=np.int64),
                        (np.array(rows), np.array(cols))),
                       shape=(V + E + 2, V + E + 2))
    res = maximum_flow(graph, 0, V + E + 1)
    if res.flow_value != need:
        raise InfeasibleError(
            "edge support cannot conserve the rounded weights; the input "
            "violates the flow laws beyond repair on its support")
    f = dict(g)
    flow = res.flow
    for m, k in enumerate(keys):
        u, v = ends[k]
        raised = int(flow[1 + idx[u], 1 + V + m])
        lowered = int(flow[1 + idx[v], 1 + V + m])
        f[k] += max(raised, 0) - max(lowered, 0)
        if f[k] < 0:
            raise InfeasibleError("edge correction went negative")
    t = {}
    for k, val in f.items():
        u, _ = ends[k]
        t[u] = t.get(u, 0) + val
    total = sum(t.values())
    if total <= 0:
        raise InfeasibleError("all weights rounded to zero")
    vertex = {p: Fraction(v, total) for p, v in t.items() if v > 0}
    edge = {k: Fraction(v, total) for k, v in f.items() if v > 0}
    return vertex, edge


def _transport_repair(w, M):
    """Per-generator transportation of rounded vertex counts (n >= 2).

    Patterns lacking support arcs in some direction are pruned first;
    the surviving counts are transported independently along each
    generator's edges.  Rich supports (products, empirical laws with
    recurring patterns) carry this; a rigid support that cannot is
    reported as infeasible.
    """
    t = {}
    for pat in sorted(w.vertex):
        v = int(round(float(w.vertex[pat]) * M))
        if v > 0:
            t[pat] = v
    ends = {}
    for (i, vals) in sorted(w.edge):
        ends[(i, vals)] = (edge_source(vals, w.n, w.r),
                           edge_target(vals, w.n, w.r, i))
    while True:
        dropped = False
        for i in range(1, w.n + 1):
            has_out = {u for (j, _), (u, v) in ends.items()
                       if j == i and u in t and v in t}
            has_in = {v for (j, _), (u, v) in ends.items()
                      if j == i and u in t and v in t}
            for pat in list(t):
                if pat not in has_out or pat not in has_in:
                    del t[pat]
                    dropped = True
        if not dropped:
            break
    if not t:
        raise InfeasibleError("no pattern keeps edge support in every "
                              "direction after pruning")
    total = sum(t.values())
    pats = sorted(t)
    pos = {p: k for k, p in enumerate(pats)}
    V = len(pats)
    edge = {}
    for i in range(1, w.n + 1):
        arcs = {}
        for k, (u, v) in ends.items():
            if k[0] == i and u in pos and v in pos:
                arcs.setdefault((pos[u], pos[v]), []).append(k)
        # Nodes: 0 source, 1..V supplies, V+1..2V demands, 2V+1 sink.
        rows, cols, caps = [], [], []
        for p in pats:
            rows.append(0)
            cols.append(1 + pos[p])
            caps.append(t[p])
            rows.append(1 + V + pos[p])
            cols.append(2 * V + 1)
            caps.append(t[p])
        for (a, b) in arcs:
            rows.append(1 + a)
            cols.append(1 + V + b)
            caps.append(total)
        graph = csr_matrix((np.array(caps, dtype=np.int64),
                            (np.array(rows), np.array(cols))),
                           shape=(2 * V + 2, 2 * V + 2))
        res = maximum_flow(graph, 0, 2 * V + 1)
        if res.flow_value != total:
            raise InfeasibleError(
                f"edge support for generator {i} cannot carry the vertex "
                f"weights (flow {res.flow_value} of {total}); the input "
                "violates the flow laws beyond repair on its support")
        flow = res.flow.tocoo()
        for a, b, fl in zip(flow.row, flow.col, flow.data):
            if fl <= 0 or a == 0 or b == 2 * V + 1:
                continue
            keys = arcs[(a - 1, b - 1 - V)]
            # Split the merged arc flow across parallel edge patterns in
            # canonical order; any split satisfies the laws.
            remaining = int(fl)
            for key in keys:
                take = remaining if key == keys[-1] else \
                    min(remaining, int(round(float(w.edge[key]) * M)))
                remaining -= take
                if take > 0:
                    edge[key] = edge.get(key, Fraction(0)) + \
                        Fraction(take, total)
    vertex = {p: Fraction(v, total) for p, v in t.items()}
    return vertex, edge


def rationalize_weights(w, eps):
    """Exact rational weights near w: flow laws exact, zero edges kept.

    Already-valid exact input is returned unchanged.  Otherwise the
    weights are rounded onto a grid finer than eps and repaired into an
    exact integer flow over the support of the input edges, which keeps
    every zero edge at zero and meets both flow laws exactly.  One
    generator gets a conservation-restoring circulation; more get
    per-generator transportation of the rounded vertex counts.  If the
    result drifts past eps the grid is refined and the repair rerun
    before giving up.
    """
    eps = Fraction(eps).limit_denominator(10 ** 12) if not \
        isinstance(eps, (Fraction, int)) else Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if w.exact and validate_weights(w) is None:
        return w
    M = 2 ** max(4, math.ceil(math.log2(float(4 / eps))))
    last = None
    for _ in range(3):
        try:
            if w.n == 1:
                vertex, edge = _circulation_repair(w, M)
            else:
                vertex, edge = _transport_repair(w, M)
            out = CylinderWeights(w.n, w.r, w.alphabet, vertex, edge)
            msg = validate_weights(out)
            if msg is not None:
                raise InfeasibleError(
                    f"repair produced invalid weights: {msg}")
            worst = max(abs(float(v) - float(w.vertex.get(pat, 0)))
                        for pat, v in vertex.items())
            if worst >= float(eps):
                raise InfeasibleError(
                    f"vertex deviation {worst} exceeded eps")
            return out
        except InfeasibleError as exc:
            last = exc
            M *= 2
    raise last
# quotient systems

@dataclass(frozen=True)
class QuotientSystem:
    """N points, one permutation per generator, a label pattern per point."""

    n: int
    r: int
    alphabet: tuple
    labels: tuple          # length N, each a vertex pattern (index tuple)
    perms: tuple           # n arrays of length N

    @property
    def N(self):
        return len(self.labels)

    def inverse_perms(self):
        out = []
        for p in self.perms:
            inv = np.empty_like(p)
            inv[p] = np.arange(len(p))
            out.append(inv)
        return tuple(out)


def build_quotient(wp):
    """Finite system whose label frequencies are exactly wp.

    N is the least common denominator; each pattern gets N * weight
    points; for every generator the points are matched along the edge
    patterns in canonical order, block by block, which the flow laws
    make a bijection.
    """
    if not wp.exact:
        raise ValueError("build_quotient needs exact rational weights")
    msg = validate_weights(wp)
    if msg is not None:
        raise ValueError(f"invalid weights: {msg}")
    dens = [v.denominator for v in wp.vertex.values()]
    dens += [v.denominator for v in wp.edge.values()]
    N = math.lcm(*dens) if dens else 1
    pats = sorted(wp.vertex)
    start = {}
    labels = []
    for pat in pats:
        start[pat] = len(labels)
        labels.extend([pat] * int(N * wp.vertex[pat]))
    if len(labels) != N:
        raise ValueError("vertex weights do not fill N points")
    perms = []
    for i in range(1, wp.n + 1):
        src_cursor = dict(start)
        tgt_cursor = dict(start)
        sigma = -np.ones(N, dtype=int)
        for (j, vals) in sorted(k for k in wp.edge if k[0] == i):
            m = int(N * wp.edge[(j, vals)])
            src = edge_source(vals, wp.n, wp.r)
            tgt = edge_target(vals, wp.n, wp.r, i)
            a = src_cursor[src]
            b = tgt_cursor[tgt]
            sigma[a:a + m] = np.arange(b, b + m)
            src_cursor[src] = a + m
            tgt_cursor[tgt] = b + m
        if (sigma < 0).any() or len(np.unique(sigma)) != N:
            raise ValueError(f"generator {i} blocks do not assemble a "
                             "bijection")
        perms.append(sigma)
    return QuotientSystem(wp.n, wp.r, wp.alphabet, tuple(labels),
                          tuple(perms))


def components(Q):
    """Connected components under all permutations, re-indexed."""
    N = Q.N
    seen = -np.ones(N, dtype=int)
    invs = Q.inverse_perms()
    comps = []
    for s in range(N):
        if seen[s] >= 0:
            continue
        comp = []
        stack = [s]
        seen[s] = len(comps)
        while stack:
            v = stack.pop()
            comp.append(v)
            for p in list(Q.perms) + list(invs):
                u = int(p[v])
                if seen[u] < 0:
                    seen[u] = len(comps)
                    stack.append(u)
        comp.sort()
        remap = {v: k for k, v in enumerate(comp)}
        perms = tuple(np.array([remap[int(p[v])] for v in comp])
                      for p in Q.perms)
        comps.append(QuotientSystem(Q.n, Q.r, Q.alphabet,
                                    tuple(Q.labels[v] for v in comp), perms))
    return comps


@dataclass(frozen=True)
class PeriodicColoring:
    """A quotient component with a basepoint: a coloring of the tree."""

    quotient: QuotientSystem
    basepoint: int = 0


def _walk(Q, invs, v, word):
    for letter in word:
        v = int(Q.perms[letter - 1][v]) if letter > 0 else \
            int(invs[-letter - 1][v])
    return v


def evaluate_lift(c, g):
    """Color of the lifted coloring at the reduced word g."""
    Q = c.quotient
    v = _walk(Q, Q.inverse_perms(), c.basepoint, tuple(g))
    return Q.alphabet[Q.labels[v][0]]


def periodic_measure(Q, r):
    """Exact cylinder weights of the quotient's coloring law at radius r.

    Patterns are read off by walking the permutations, so the headline
    identity (these weights equal the weights the quotient was built
    from) is a verified consequence, not an assumption.  Radii above the
    native one are allowed; below it the labels carry too little data.
    """
    if r < Q.r:
        raise ValueError(f"radius {r} below the quotient's native {Q.r}")
    invs = Q.inverse_perms()
    nb = ball(Q.n, r)
    one = Fraction(1, Q.N)
    vertex = {}
    edge = {}
    for v in range(Q.N):
        pat = tuple(Q.labels[_walk(Q, invs, v, w)][0] for w in nb)
        vertex[pat] = vertex.get(pat, 0) + one
        for i in range(1, Q.n + 1):
            dom = edge_domain(Q.n, r, i)
            vals = tuple(Q.labels[_walk(Q, invs, v, w)][0] for w in dom)
            key = (i, vals)
            edge[key] = edge.get(key, 0) + one
    return CylinderWeights(Q.n, r, Q.alphabet, vertex, edge)


def approximation_error(lam, mu, r):
    """Largest radius-r cylinder discrepancy between two weight systems."""
    if lam.n != mu.n or lam.alphabet != mu.alphabet:
        raise ValueError("weight systems live on different alphabets")
    if lam.r < r or mu.r < r:
        raise ValueError(f"both weight systems must have radius >= {r}")
    a = lam.restricted(r)
    b = mu.restricted(r)
    worst = Fraction(0) if (lam.exact and mu.exact) else 0.0
    for pat in set(a) | set(b):
        d = abs(a.get(pat, 0) - b.get(pat, 0))
        if d > worst:
            worst = d
    return worst


def approximate(mu, eps):
    """Periodic approximation of a measure: colorings, weights, and law.

    Returns ([(weight_i, coloring_i)], lam) with the convex weights
    |component| / N; lam equals the rationalized input exactly, so its
    distance to mu is below eps and zero patterns of mu stay zero.
    """
    wp = rationalize_weights(mu, eps)
    Q = build_quotient(wp)
    comps = components(Q)
    pieces = [(Fraction(c.N, Q.N), PeriodicColoring(c, 0)) for c in comps]
    lam = periodic_measure(Q, Q.r)
    return pieces, lam
