"""Cylinder weights, rational repair, and periodic quotients."""

import itertools
from fractions import Fraction

import numpy as np
import pytest

from hypack.shifts import (InfeasibleError, ball, edge_domain, reduce_word,
                           CylinderWeights, weights_from_bernoulli,
                           validate_weights, rationalize_weights,
                           build_quotient, components, PeriodicColoring,
                           evaluate_lift, periodic_measure,
                           approximation_error, approximate, edge_source,
                           edge_target)


def markov_weights(P, pi):
    """Radius-1 weights of a two-state Markov chain on the line (n = 1).

    P is the 2x2 rational transition matrix, pi its stationary law.  The
    time-reversed chain colors the negative direction.
    """
    Pb = [[pi[a] * P[a][b] / pi[b] for a in range(2)] for b in range(2)]
    vertex = {}
    for x0, x1, xm in itertools.product((0, 1), repeat=3):
        w = pi[x0] * P[x0][x1] * Pb[x0][xm]
        if w != 0:
            vertex[(x0, x1, xm)] = w
    edge = {}
    # edge_domain(1, 1, 1) is (), (1,), (-1,), (1, 1)
    for x0, x1, xm, x2 in itertools.product((0, 1), repeat=4):
        w = pi[x0] * P[x0][x1] * Pb[x0][xm] * P[x1][x2]
        if w != 0:
            edge[(1, (x0, x1, xm, x2))] = w
    return CylinderWeights(1, 1, (0, 1), vertex, edge)


def test_ball_ordering_and_prefix():
    b1 = ball(2, 1)
    assert b1 == ((), (1,), (-1,), (2,), (-2,))
    b2 = ball(2, 2)
    assert b2[:5] == b1
    assert all(len(w) == 2 for w in b2[5:])
    # reduced: no cancelling adjacent letters
    assert all(w[k] != -w[k + 1] for w in b2 for k in range(len(w) - 1))
    assert len(b2) == 1 + 4 + 4 * 3


def test_edge_domain_layout():
    dom = edge_domain(2, 1, 1)
    assert dom[:5] == ball(2, 1)
    assert set(dom[5:]) == {(1, 1), (1, 2), (1, -2)}
    vals = tuple(range(8))
    assert edge_source(vals, 2, 1) == (0, 1, 2, 3, 4)
    # pattern seen from g_1: word h maps to reduced g_1 h
    tgt = edge_target(vals, 2, 1, 1)
    assert tgt[0] == vals[dom.index((1,))]
    assert tgt[1] == vals[dom.index((1, 1))]
    assert tgt[2] == vals[dom.index(())]


def test_reduce_word():
    assert reduce_word((1, 2), (-2, -1)) == ()
    assert reduce_word((1,), (1,)) == (1, 1)
    assert reduce_word((1, -2), (2, 2)) == (1, 2)


def test_bernoulli_exact_flow_laws():
    w = weights_from_bernoulli((Fraction(1, 3), Fraction(2, 3)), 1, 2)
    assert w.exact
    assert validate_weights(w) is None
    assert len(w.vertex) == 2 ** 5
    assert sum(w.vertex.values()) == 1


def test_bernoulli_float_is_flagged():
    w = weights_from_bernoulli((0.3, 0.7), 0, 1)
    assert not w.exact
    assert validate_weights(w) is None


def test_validate_reports_first_violation():
    w = weights_from_bernoulli((Fraction(1, 2), Fraction(1, 2)), 0, 1)
    bad = CylinderWeights(1, 0, (0, 1), w.vertex,
                          {k: v for k, v in w.edge.items()
                           if k[1] != (0, 1)})
    msg = validate_weights(bad)
    assert msg is not None and "flow law" in msg


def test_rationalize_passthrough_when_exact_and_valid():
    w = weights_from_bernoulli((Fraction(1, 2), Fraction(1, 2)), 1, 1)
    assert rationalize_weights(w, Fraction(1, 1000)) is w


def test_rationalize_float_bernoulli():
    w = weights_from_bernoulli((0.3, 0.7), 0, 1)
    for eps in (Fraction(1, 10), Fraction(1, 100)):
        wp = rationalize_weights(w, eps)
        assert wp.exact
        assert validate_weights(wp) is None
        for pat, v in wp.vertex.items():
            assert abs(float(v) - w.vertex[pat]) < eps


def test_rationalize_keeps_zero_edges():
    P = [[Fraction(1, 2), Fraction(1, 2)], [Fraction(1), Fraction(0)]]
    pi = (Fraction(2, 3), Fraction(1, 3))
    w = markov_weights(P, pi)
    assert validate_weights(w) is None
    noisy = CylinderWeights(1, 1, (0, 1),
                            {k: float(v) * (1 + 1e-10) for k, v in
                             w.vertex.items()},
                            {k: float(v) for k, v in w.edge.items()})
    wp = rationalize_weights(noisy, Fraction(1, 100))
    assert validate_weights(wp) is None
    zero = set(itertools.product((0, 1), repeat=4)) - \
        {k[1] for k in w.edge}
    for vals in zero:
        assert (1, vals) not in wp.edge


def test_rationalize_infeasible_support():
    w = weights_from_bernoulli((Fraction(1, 2), Fraction(1, 2)), 0, 1)
    # drop every edge leaving pattern (1,): its weight cannot flow
    crippled = CylinderWeights(1, 0, (0, 1),
                               {k: float(v) for k, v in w.vertex.items()},
                               {k: float(v) for k, v in w.edge.items()
                                if k[1][0] != 1})
    with pytest.raises(InfeasibleError):
        rationalize_weights(crippled, Fraction(1, 100))


def test_quotient_bernoulli_half_has_four_points():
    w = weights_from_bernoulli((Fraction(1, 2), Fraction(1, 2)), 0, 1)
    Q = build_quotient(w)
    assert Q.N == 4
    assert sorted(Q.labels) == [(0,), (0,), (1,), (1,)]
    sigma = Q.perms[0]
    assert sorted(sigma) == [0, 1, 2, 3]


def test_quotient_realizes_weights_exactly():
    for p, r, n in [((Fraction(1, 2), Fraction(1, 2)), 0, 1),
                    ((Fraction(1, 3), Fraction(2, 3)), 1, 1),
                    ((Fraction(1, 4), Fraction(3, 4)), 0, 2),
                    ((Fraction(1, 3), Fraction(2, 3)), 1, 2)]:
        w = weights_from_bernoulli(p, r, n)
        Q = build_quotient(w)
        lam = periodic_measure(Q, r)
        assert lam.vertex == w.vertex
        assert lam.edge == w.edge


def test_quotient_realizes_markov_exactly():
    P = [[Fraction(1, 2), Fraction(1, 2)], [Fraction(1), Fraction(0)]]
    pi = (Fraction(2, 3), Fraction(1, 3))
    w = markov_weights(P, pi)
    Q = build_quotient(w)
    lam = periodic_measure(Q, 1)
    assert lam.vertex == w.vertex
    assert lam.edge == w.edge
    # the adjacent-ones patterns carry weight exactly zero
    for pat in itertools.product((0, 1), repeat=3):
        if (pat[0] == 1 and pat[1] == 1) or (pat[0] == 1 and pat[2] == 1):
            assert lam.vertex_weight(pat) == 0


def test_components_partition_and_lift():
    w = weights_from_bernoulli((Fraction(1, 2), Fraction(1, 2)), 0, 1)
    Q = build_quotient(w)
    comps = components(Q)
    assert sum(c.N for c in comps) == Q.N
    for c in comps:
        for p in c.perms:
            assert sorted(p) == list(range(c.N))
    col = PeriodicColoring(comps[0], 0)
    assert evaluate_lift(col, ()) == comps[0].alphabet[comps[0].labels[0][0]]


def test_evaluate_lift_walks_the_permutations():
    P = [[Fraction(1, 2), Fraction(1, 2)], [Fraction(1), Fraction(0)]]
    pi = (Fraction(2, 3), Fraction(1, 3))
    Q = build_quotient(markov_weights(P, pi))
    comp = components(Q)[0]
    col = PeriodicColoring(comp, 0)
    sigma = comp.perms[0]
    v = 0
    for k in range(1, 8):
        v = int(sigma[v])
        assert evaluate_lift(col, (1,) * k) == comp.alphabet[
            comp.labels[v][0]]
    # no adjacent ones anywhere along the lift
    colors = [evaluate_lift(col, (1,) * k) for k in range(20)]
    assert all(not (a == 1 and b == 1) for a, b in zip(colors, colors[1:]))


def test_periodic_measure_rejects_small_radius():
    P = [[Fraction(1, 2), Fraction(1, 2)], [Fraction(1), Fraction(0)]]
    pi = (Fraction(2, 3), Fraction(1, 3))
    Q = build_quotient(markov_weights(P, pi))
    with pytest.raises(ValueError):
        periodic_measure(Q, 0)


def test_periodic_measure_above_native_radius():
    w = weights_from_bernoulli((Fraction(1, 2), Fraction(1, 2)), 0, 1)
    Q = build_quotient(w)
    lam2 = periodic_measure(Q, 2)
    assert validate_weights(lam2) is None
    assert approximation_error(lam2, w, 0) == 0


def test_brute_force_cycle_oracle():
    """Radius-2 weights of a line quotient against direct cycle counting."""
    P = [[Fraction(1, 2), Fraction(1, 2)], [Fraction(1), Fraction(0)]]
    pi = (Fraction(2, 3), Fraction(1, 3))
    Q = build_quotient(markov_weights(P, pi))
    assert Q.N <= 12
    lam = periodic_measure(Q, 2)
    col = {v: Q.alphabet[Q.labels[v][0]] for v in range(Q.N)}
    sigma = Q.perms[0]
    inv = Q.inverse_perms()[0]
    counts = {}
    for v in range(Q.N):
        # ball(1, 2) order: (), (1,), (-1,), (1,1), (-1,-1)
        f = int(sigma[v]); ff = int(sigma[f])
        b = int(inv[v]); bb = int(inv[b])
        pat = (col[v], col[f], col[b], col[ff], col[bb])
        counts[pat] = counts.get(pat, 0) + Fraction(1, Q.N)
    assert counts == lam.vertex


def test_approximate_bundles_everything():
    w = weights_from_bernoulli((0.3, 0.7), 1, 1)
    pieces, lam = approximate(w, Fraction(1, 100))
    assert sum(a for a, _ in pieces) == 1
    assert validate_weights(lam) is None
    assert approximation_error(lam, w, 1) < Fraction(1, 100)
    for _, col in pieces:
        assert 0 <= col.basepoint < col.quotient.N


def test_approximation_error_alphabet_mismatch():
    a = weights_from_bernoulli((Fraction(1, 2), Fraction(1, 2)), 0, 1)
    b = weights_from_bernoulli([Fraction(1, 3)] * 3, 0, 1)
    with pytest.raises(ValueError):
        approximation_error(a, b, 0)
