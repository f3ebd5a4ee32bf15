"""Command-line drivers: exit codes, CSV determinism, report contents."""

import math
from fractions import Fraction

import numpy as np
import pytest

from hypack.cli import main
from hypack.fileio import (load_coloring, load_packing, load_weights,
                           save_weights)
from hypack.shifts import CylinderWeights, weights_from_bernoulli
from hypack.transport import decode


def run(tmp_path, name, *argv):
    """Run a command with --output into tmp_path; return (code, text)."""
    out = tmp_path / name
    code = main(list(argv) + ["--output", str(out)])
    return code, out.read_text() if out.exists() else ""


def field(text, key):
    for line in text.splitlines():
        if line.startswith(key + " "):
            return line.split()[1]
    raise KeyError(key)


def test_tiling_report(tmp_path):
    code, text = run(tmp_path, "t37", "tiling", "--s", "3", "--a", "7")
    assert code == 0
    assert abs(float(field(text, "area")) - math.pi / 7.0) < 1e-12
    assert float(field(text, "area_residual")) < 1e-8
    assert "# seed" not in text  # deterministic command carries no seed


def test_tiling_rejects_euclidean(tmp_path, capsys):
    code, _ = run(tmp_path, "t36", "tiling", "--s", "3", "--a", "6")
    assert code == 2
    assert "not a hyperbolic tiling" in capsys.readouterr().err


def test_contraction_report(tmp_path):
    code, text = run(tmp_path, "c", "contraction", "--s", "3", "--a", "7")
    assert code == 0
    c = float(field(text, "contraction"))
    k = float(field(text, "scale"))
    assert 0.0 < k < c < 1.0


def test_homothety_report_and_packing(tmp_path):
    out = tmp_path / "lifted.packing"
    code, text = run(tmp_path, "h", "homothety", "--k", "7", "--s", "3",
                     "--a", "7", "--packing-out", str(out))
    assert code == 0
    assert field(text, "window_centers") == "246"
    assert field(text, "lifted_centers") == "4"
    R = float(field(text, "expanded_radius"))
    assert float(field(text, "separation")) >= 2.0 * R - 1e-8
    back = load_packing(out)
    assert len(back) == 4 and abs(back.radius - R) < 1e-15


def test_density_report_is_deterministic(tmp_path):
    code, text = run(tmp_path, "d1", "density", "--k", "7", "--samples",
                     "20000", "--seed", "3")
    assert code == 0
    z = float(field(text, "zscore"))
    assert z <= 4.0
    code2, text2 = run(tmp_path, "d2", "density", "--k", "7", "--samples",
                       "20000", "--seed", "3")
    assert code2 == 0 and text2 == text


def test_bounds_sweep_monotone_and_bit_identical(tmp_path):
    args = ("bounds", "--r-min", "0.2", "--r-max", "2.0", "--step", "0.1")
    code, text = run(tmp_path, "b1", *args)
    assert code == 0
    rows = [ln.split(",") for ln in text.splitlines()
            if ln and not ln.startswith("#") and not ln.startswith("r,")]
    vals = [float(b) for _, b in rows]
    assert all(x < y for x, y in zip(vals, vals[1:]))
    code2, text2 = run(tmp_path, "b2", *args)
    assert text2 == text


def test_bounds_tight_table(tmp_path):
    code, text = run(tmp_path, "bt", "bounds", "--tight", "1000")
    assert code == 0
    rows = [ln.split(",") for ln in text.splitlines()
            if ln and not ln.startswith("#") and not ln.startswith("k,")]
    assert len(rows) == 994
    for _, _, _, resid, _ in rows:
        assert float(resid) < 1e-9
    gaps = [float(r[4]) for r in rows]
    assert all(x > y for x, y in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.01  # k = 1000 sits within 0.01 of the 3/pi limit


def test_bounds_bad_range(tmp_path):
    code, _ = run(tmp_path, "bb", "bounds", "--r-min", "-1.0")
    assert code == 2


def test_approx_exact_fixture(tmp_path):
    wfile = tmp_path / "bern.weights"
    save_weights(wfile, weights_from_bernoulli(
        (Fraction(1, 2), Fraction(1, 2)), 1, 2))
    qfile = tmp_path / "bern.quotient"
    lfile = tmp_path / "bern.lam"
    code, text = run(tmp_path, "a1", "approx", "--weights", str(wfile),
                     "--epsilon", "1/100", "--quotient-out", str(qfile),
                     "--lambda-out", str(lfile))
    assert code == 0
    assert field(text, "error") == "0/1"
    lam = load_weights(lfile)
    assert sum(lam.vertex.values()) == 1


def test_approx_float_fixture(tmp_path):
    wfile = tmp_path / "bernf.weights"
    save_weights(wfile, weights_from_bernoulli((0.3, 0.7), 1, 2))
    code, text = run(tmp_path, "a2", "approx", "--weights", str(wfile),
                     "--epsilon", "1/10")
    assert code == 0
    assert float(Fraction(field(text, "error"))) < 0.1


def test_approx_rejects_broken_weights(tmp_path, capsys):
    w = weights_from_bernoulli((Fraction(1, 2), Fraction(1, 2)), 0, 1)
    vertex = dict(w.vertex)
    pat = sorted(vertex)[0]
    vertex[pat] = vertex[pat] + Fraction(1, 7)  # breaks normalization
    wfile = tmp_path / "bad.weights"
    save_weights(wfile, CylinderWeights(w.n, w.r, w.alphabet, vertex,
                                        dict(w.edge)))
    code, _ = run(tmp_path, "a3", "approx", "--weights", str(wfile))
    assert code == 2
    err = capsys.readouterr().err
    assert "invalid weights" in err and "=" in err


def test_encode_roundtrip_command(tmp_path):
    cfile = tmp_path / "t7.coloring"
    code, text = run(tmp_path, "e", "encode", "--k", "7", "--window-words",
                     "1", "--coloring-out", str(cfile))
    assert code == 0
    assert float(field(text, "roundtrip_error")) < 1e-9
    col = load_coloring(cfile)
    assert col.total() == int(field(text, "centers"))
    decode(col)


def test_average_command(tmp_path):
    code, text = run(tmp_path, "avg", "average", "--k", "7", "--samples",
                     "6000", "--seed", "4", "--trials", "2")
    assert code == 0
    est = float(field(text, "averaged_coverage"))
    se = float(field(text, "stderr"))
    assert abs(est - float(field(text, "exact_density"))) <= 4.0 * se
    assert text.count(" ok") == 2


def test_pipeline_smoke(tmp_path):
    code, text = run(tmp_path, "pipe", "pipeline", "--k", "7", "--s", "3",
                     "--a", "7", "--samples", "800", "--seed", "2")
    assert code == 0
    stages = [ln for ln in text.splitlines() if ln.startswith("stage ")]
    assert len(stages) >= 9
    assert all(ln.endswith(" ok") for ln in stages)
    assert "failed" not in text
    dens = {ln.split()[1]: float(ln.split()[2]) for ln in text.splitlines()
            if ln.startswith("density ")}
    assert set(dens) == {"exact", "mixture", "homothety"}
    assert 0.0 < dens["mixture"] < dens["homothety"] < dens["exact"]
