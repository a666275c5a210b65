"""Seeded latin hypercube designs.

One shared helper so every stochastic design in the package (replay
selection, step-test schedules, offline oracle datasets) flows from the
run-level numpy Generator and stays reproducible.
"""

import numpy as np


def latin_hypercube(rng, n, dims):
    """n points in [0, 1)^dims, one per axis stratum per dimension."""
    if n < 1:
        raise ValueError("need at least one sample")
    out = np.empty((n, dims))
    for d in range(dims):
        out[:, d] = (rng.permutation(n) + rng.uniform(0.0, 1.0, n)) / n
    return out


def scale_design(design, lo, hi):
    """Map a unit design onto the box [lo, hi] per dimension."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return lo + design * (hi - lo)
