"""Command-line drivers: tiling constants, bounds tables, the density pipeline.

Every command writes a metadata block (version, command, seed, params)
ahead of its report or CSV, prints to stdout unless an explicit output
path is given, and exits 0 on success, 2 on validation failures, 3 on
infeasibility or numeric non-convergence.
"""

import argparse
import math
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from .fileio import load_weights, save_coloring, save_packing, save_quotient, \
    save_weights
from .geometry import GeometryError, klein_distance
from .homothety import (build_cover, erase_near_vertices, expand_radius,
                        homothety_density_estimate, lift_packing,
                        near_isometry_radius, scale_factor, window_packing)
from .packing import (SeparationError, build_tight_packing, disk_area,
                      ft_bound, mc_density, periodic_density, tight_density,
                      tight_radius)
from .shifts import (InfeasibleError, PeriodicColoring, approximation_error,
                     ball, build_quotient, components, evaluate_lift,
                     periodic_measure, rationalize_weights, validate_weights)
from .tiling import build_tile, tiling_geometry
from .transport import (EncodingError, PackingColoring, PeriodicFamily,
                        decode, default_free_group, discretize,
                        empirical_weights, encode, invariance_test,
                        mixed_coverage)

_NUM = "%.17g"


class Report:
    """Accumulates output lines under a metadata block."""

    def __init__(self, command, seed=None, **params):
        self.lines = [f"# hypack {__version__}", f"# command {command}"]
        if seed is not None:
            self.lines.append(f"# seed {seed}")
        if params:
            self.lines.append("# params " + " ".join(
                f"{k}={v}" for k, v in sorted(params.items())))

    def add(self, line=""):
        self.lines.append(line)

    def emit(self, path=None):
        text = "\n".join(self.lines) + "\n"
        if path:
            with open(path, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)


def _frac_str(v):
    if isinstance(v, (int, Fraction)):
        f = Fraction(v)
        return f"{f.numerator}/{f.denominator}"
    return _NUM % v


def cmd_tiling(args):
    geo = tiling_geometry(args.s, args.a)
    tile = build_tile(args.s, args.a)
    resid = abs(tile.area - geo.area)
    rep = Report("tiling", s=args.s, a=args.a)
    rep.add(f"circumradius {_NUM % geo.circumradius}")
    rep.add(f"inradius {_NUM % geo.inradius}")
    rep.add(f"edge_length {_NUM % geo.edge_length}")
    rep.add(f"vertex_angle {_NUM % geo.vertex_angle}")
    rep.add(f"area {_NUM % geo.area}")
    rep.add(f"area_residual {resid:.3e}")
    if resid >= 1e-8:
        raise GeometryError("tile area disagrees with the closed form; "
                            "polygon integration did not terminate cleanly")
    rep.emit(args.output)
    return 0


def cmd_contraction(args):
    cov = build_cover(args.s, args.a)
    rep = Report("contraction", s=args.s, a=args.a)
    rep.add(f"scale {_NUM % cov.k}")
    rep.add(f"scale_identity {_NUM % scale_factor(args.s, args.a)}")
    rep.add(f"contraction {_NUM % cov.c}")
    rep.add(f"fine_circumradius {_NUM % cov.fine.circumradius}")
    rep.add(f"coarse_circumradius {_NUM % cov.coarse.circumradius}")
    if args.delta is not None:
        rep.add(f"near_isometry_radius "
                f"{_NUM % near_isometry_radius(cov, args.delta)}")
    rep.emit(args.output)
    return 0


def cmd_homothety(args):
    pk = build_tight_packing(args.k)
    cov = build_cover(args.s, args.a)
    wp = window_packing(pk, args.window)
    erased = erase_near_vertices(wp, cov)
    lifted = lift_packing(erased, cov)
    R = pk.radius / cov.c
    grown = expand_radius(lifted, R)
    rep = Report("homothety", k=args.k, s=args.s, a=args.a,
                 window=args.window)
    rep.add(f"window_centers {len(wp)}")
    rep.add(f"erased_centers {len(erased)}")
    rep.add(f"lifted_centers {len(lifted)}")
    rep.add(f"radius {_NUM % pk.radius}")
    rep.add(f"expanded_radius {_NUM % R}")
    if len(grown) > 1:
        d = klein_distance(grown.centers[:, None, :],
                           grown.centers[None, :, :])
        np.fill_diagonal(d, np.inf)
        rep.add(f"separation {_NUM % float(d.min())}")
    if args.packing_out:
        save_packing(args.packing_out, grown)
        rep.add(f"wrote {args.packing_out}")
    rep.emit(args.output)
    return 0


def cmd_density(args):
    pk = build_tight_packing(args.k)
    exact = periodic_density(pk)
    est = mc_density(pk, args.samples, args.seed)
    rep = Report("density", seed=args.seed, k=args.k, samples=args.samples)
    rep.add(f"exact {_NUM % exact}")
    rep.add(f"estimate {_NUM % est.value}")
    rep.add(f"stderr {_NUM % est.stderr}")
    z = abs(est.value - exact) / est.stderr if est.stderr > 0 else 0.0
    rep.add(f"zscore {z:.3f}")
    rep.emit(args.output)
    return 0


def cmd_bounds(args):
    if args.tight is not None:
        if args.tight < 7:
            raise ValueError("the tight table starts at k = 7")
        rep = Report("bounds", mode="tight", k_max=args.tight)
        rep.add("k,r,density,residual,gap")
        for k in range(7, args.tight + 1):
            r = tight_radius(k)
            dens = tight_density(k)
            resid = abs(dens - ft_bound(r))
            gap = 3.0 / math.pi - dens
            rep.add(f"{k},{_NUM % r},{_NUM % dens},{resid:.3e},{_NUM % gap}")
            if resid >= 1e-9:
                raise GeometryError(
                    f"tight density misses the bound at k={k}; the tight "
                    "radius solve did not terminate at tolerance")
        rep.emit(args.output)
        return 0
    if not (0.0 < args.r_min <= args.r_max and args.step > 0.0):
        raise ValueError("need 0 < r-min <= r-max and a positive step")
    rep = Report("bounds", mode="sweep", r_min=args.r_min, r_max=args.r_max,
                 step=args.step)
    rep.add("r,ft_bound")
    last = -math.inf
    r = args.r_min
    while r <= args.r_max + 1e-12:
        b = ft_bound(r)
        rep.add(f"{_NUM % r},{_NUM % b}")
        if b < last:
            raise GeometryError(f"bound decreased at r={r:.6f}; the sector "
                                "integration did not terminate cleanly")
        last = b
        r += args.step
    rep.emit(args.output)
    return 0


def cmd_approx(args):
    w = load_weights(args.weights)
    msg = validate_weights(w)
    if msg is not None:
        print(f"invalid weights: {msg}", file=sys.stderr)
        return 2
    eps = Fraction(args.epsilon)
    rw = rationalize_weights(w, eps)
    Q = build_quotient(rw)
    lam = periodic_measure(Q, w.r)
    err = approximation_error(lam, w, w.r)
    rep = Report("approx", weights=args.weights, epsilon=args.epsilon)
    rep.add(f"patterns {len(w.vertex)}")
    rep.add(f"quotient_points {Q.N}")
    rep.add(f"components {len(components(Q))}")
    rep.add(f"error {_frac_str(err)}")
    if not err < eps:
        raise InfeasibleError(f"approximation error {_frac_str(err)} is not "
                              f"below {eps}")
    if args.quotient_out:
        save_quotient(args.quotient_out, Q)
        rep.add(f"wrote {args.quotient_out}")
    if args.lambda_out:
        save_weights(args.lambda_out, lam)
        rep.add(f"wrote {args.lambda_out}")
    rep.emit(args.output)
    return 0


def cmd_encode(args):
    pk = build_tight_packing(args.k)
    emb = default_free_group()
    col = encode(pk, emb, args.window_words)
    dec = decode(col)
    col2 = encode(dec, emb, args.window_words)
    worst = 0.0
    for wd in col.values:
        a, b = col.values[wd], col2.values[wd]
        if a.shape != b.shape:
            raise EncodingError(f"round trip changed the center count at "
                                f"word {wd}")
        if len(a):
            aa = np.array(sorted(map(tuple, a)))
            bb = np.array(sorted(map(tuple, b)))
            worst = max(worst, float(np.max(np.abs(aa - bb))))
    rep = Report("encode", k=args.k, window_words=args.window_words)
    rep.add(f"centers {col.total()}")
    rep.add(f"words {len(col.values)}")
    rep.add(f"roundtrip_error {worst:.3e}")
    if worst >= 1e-9:
        raise EncodingError("decode-encode round trip moved a center")
    if args.coloring_out:
        save_coloring(args.coloring_out, col)
        rep.add(f"wrote {args.coloring_out}")
    rep.emit(args.output)
    return 0


def cmd_average(args):
    fam = PeriodicFamily(build_tight_packing(args.k))
    exact = periodic_density(fam.packing)
    ok, base, base_se, rows = invariance_test(fam, args.samples, args.seed,
                                              trials=args.trials)
    rep = Report("average", seed=args.seed, k=args.k, samples=args.samples,
                 trials=args.trials)
    rep.add(f"exact_density {_NUM % exact}")
    rep.add(f"averaged_coverage {_NUM % base}")
    rep.add(f"stderr {_NUM % base_se}")
    for i, (h, est, se, good) in enumerate(rows, start=1):
        z = h.apply(np.zeros(2))
        rep.add(f"shift {i} point {z[0]:.6f} {z[1]:.6f} "
                f"estimate {_NUM % est} stderr {_NUM % se} "
                f"{'ok' if good else 'FAIL'}")
    rep.emit(args.output)
    if not ok:
        print("invariance shifted the averaged coverage beyond 4 sigma",
              file=sys.stderr)
        return 3
    return 0


def cmd_pipeline(args):
    rep = Report("pipeline", seed=args.seed, k=args.k, s=args.s, a=args.a,
                 samples=args.samples, x=args.x, delta=args.delta,
                 epsilon=args.epsilon, window_words=args.window_words)
    stage = "setup"
    try:
        stage = "tight-packing"
        pk = build_tight_packing(args.k)
        exact = periodic_density(pk)
        rep.add(f"stage {stage}: radius {pk.radius:.9f} "
                f"density {exact:.9f} ok")

        stage = "branched-cover"
        cov = build_cover(args.s, args.a)
        rep.add(f"stage {stage}: contraction {cov.c:.9f} ok")

        stage = "encode"
        emb = default_free_group()
        col = encode(pk, emb, args.window_words)
        decode(col)
        rep.add(f"stage {stage}: {col.total()} centers in "
                f"{len(col.values)} words, decoded separation ok")

        stage = "discretize-weights-repair"
        eps = Fraction(args.epsilon)
        delta = args.delta
        for attempt in range(4):
            dcol, disc = discretize(col, args.x, delta)
            decode(dcol)
            w, alpha = empirical_weights(pk, emb, disc, args.samples,
                                         args.seed)
            try:
                rw = rationalize_weights(w, eps)
                break
            except InfeasibleError:
                if attempt == 3 or delta * 1.25 >= col.radius:
                    raise
                # coarser cells recur more often, giving the repair the
                # support it needs
                delta *= 1.25
        dev = max(abs(rw.vertex.get(p, Fraction(0)) - w.vertex[p])
                  for p in w.vertex)
        if not dev < eps:
            raise InfeasibleError(f"repair moved a vertex weight by "
                                  f"{_frac_str(dev)}, not below {eps}")
        rep.add(f"stage discretize: x {args.x} delta {delta} "
                f"radius {pk.radius - delta:.9f} decoded separation ok")
        rep.add(f"stage weights: {len(alpha.cells)} cells "
                f"{len(w.vertex)} site patterns ok")
        rep.add(f"stage repair: deviation {_frac_str(dev)} < "
                f"{_frac_str(eps)} ok")

        stage = "quotient"
        Q = build_quotient(rw)
        lam = periodic_measure(Q, 0)
        if lam.vertex != rw.vertex or lam.edge != rw.edge:
            raise InfeasibleError("quotient measure does not reproduce the "
                                  "repaired weights")
        comps = components(Q)
        rep.add(f"stage {stage}: {Q.N} points {len(comps)} components, "
                f"measure reproduced exactly ok")

        stage = "decode-pieces"
        radius = pk.radius - delta
        words = ball(2, 2)
        for c in sorted(comps, key=lambda q: -q.N)[:3]:
            root = PeriodicColoring(c, 0)
            vals = {wd: alpha.rep(evaluate_lift(root, wd)) for wd in words}
            decode(PackingColoring(emb, radius, 2, vals))
        rep.add(f"stage {stage}: {min(3, len(comps))} largest pieces "
                f"validate at radius {radius:.9f} ok")

        stage = "average"
        est, se = mixed_coverage(emb, Q, alpha, radius, args.samples,
                                 args.seed + 1)
        mbar = float(sum(v * len(alpha.cells[p[0]])
                         for p, v in lam.vertex.items()))
        oracle = mbar * disk_area(radius) / (2.0 * math.pi)
        z = abs(est - oracle) / se if se > 0 else 0.0
        if z > 4.0:
            raise InfeasibleError(
                f"averaged coverage {est:.6f} sits {z:.1f} sigma from the "
                f"exact mixture value {oracle:.6f}")
        rep.add(f"stage {stage}: coverage {est:.6f} stderr {se:.6f} "
                f"exact {oracle:.6f} ok")

        stage = "homothety"
        hest = homothety_density_estimate(pk, cov, args.samples,
                                          args.seed + 2)
        rep.add(f"stage {stage}: ok")

        rep.add("")
        rep.add(f"density exact {_NUM % exact}")
        rep.add(f"density mixture {_NUM % est} stderr {_NUM % se}")
        rep.add(f"density homothety {_NUM % hest.value} "
                f"stderr {_NUM % hest.stderr}")
    except Exception as e:
        rep.add(f"stage {stage} failed: {e}")
        rep.emit(args.output)
        print(f"stage {stage} failed: {e}", file=sys.stderr)
        return _exit_code(e)
    rep.emit(args.output)
    return 0


def _exit_code(exc):
    if isinstance(exc, InfeasibleError):
        return 3
    if isinstance(exc, GeometryError):
        return 3 if "terminate" in str(exc) else 2
    return 2


def build_parser():
    top = argparse.ArgumentParser(
        prog="hypack",
        description="periodic circle packings of the hyperbolic plane")
    top.add_argument("--version", action="version",
                     version=f"hypack {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=fn)
        p.add_argument("--output", default=None,
                       help="write the report here instead of stdout")
        return p

    p = add("tiling", cmd_tiling, "regular tiling constants and area check")
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--a", type=int, required=True)

    p = add("contraction", cmd_contraction,
            "contraction constant of the branched cover")
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--delta", type=float, default=None,
                   help="also report the near-isometry radius at this slack")

    p = add("homothety", cmd_homothety,
            "erase, lift and expand a tight packing through the cover")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--window", type=float, default=4.5)
    p.add_argument("--packing-out", default=None,
                   help="write the expanded packing here")

    p = add("density", cmd_density,
            "Monte Carlo density of a tight packing against the exact value")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)

    p = add("bounds", cmd_bounds,
            "CSV tables of the triangle bound and the tight family")
    p.add_argument("--r-min", type=float, default=0.01)
    p.add_argument("--r-max", type=float, default=10.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--tight", type=int, default=None, metavar="K_MAX",
                   help="emit the tight-packing table for k = 7..K_MAX "
                        "instead of the radius sweep")

    p = add("approx", cmd_approx,
            "approximate cylinder weights by an exact periodic measure")
    p.add_argument("--weights", required=True)
    p.add_argument("--epsilon", default="1/100")
    p.add_argument("--quotient-out", default=None)
    p.add_argument("--lambda-out", default=None)

    p = add("encode", cmd_encode,
            "encode a tight packing as a coloring and check the round trip")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--window-words", type=int, default=2)
    p.add_argument("--coloring-out", default=None)

    p = add("average", cmd_average,
            "averaged coverage of a tight packing with invariance trials")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10)

    p = add("pipeline", cmd_pipeline,
            "encode, discretize, approximate, decode, average, estimate")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--epsilon", default="1/100")
    p.add_argument("--window-words", type=int, default=2)

    return top


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GeometryError, SeparationError, EncodingError, ValueError,
            OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
