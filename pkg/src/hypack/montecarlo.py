"""Deterministic chunked Monte Carlo driver.

Estimates are reproducible for a fixed seed independently of thread
count: chunks draw from generators spawned off one seed sequence and the
results are merged in chunk order.  Set HYPACK_THREADS to run chunks on
a thread pool (the integrands release the GIL inside numpy).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def chunked_mean(fn, n, seed, chunk=20_000):
    """Mean, standard error and count of fn(rng, m) over n total draws."""
    if n <= 0:
        raise ValueError("need a positive sample count")
    counts = [chunk] * (n // chunk)
    if n % chunk:
        counts.append(n % chunk)
    seqs = np.random.SeedSequence(seed).spawn(len(counts))

    def run(args):
        seq, m = args
        return np.asarray(fn(np.random.default_rng(seq), m), dtype=float)

    workers = int(os.environ.get("HYPACK_THREADS", "1"))
    jobs = list(zip(seqs, counts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    vals = np.concatenate(parts)
    mean = float(vals.mean())
    var = float(vals.var(ddof=1)) if len(vals) > 1 else 0.0
    return mean, math.sqrt(var / len(vals)), len(vals)
