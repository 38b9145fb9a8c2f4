"""Slow reference implementations used as independent test oracles."""
import itertools
import math

import numpy as np

EPS = 1e-10


def guard(H):
    return H if H >= EPS else H + EPS


def direct_gain(g, h, left_mask):
    """Split gain from sums taken row by row with math.fsum."""
    GL = math.fsum(g[left_mask])
    HL = math.fsum(h[left_mask])
    GR = math.fsum(g[~left_mask])
    HR = math.fsum(h[~left_mask])
    GP, HP = math.fsum(g), math.fsum(h)
    return 0.5 * (GL * GL / guard(HL) + GR * GR / guard(HR) - GP * GP / guard(HP))


def brute_force_split(bins, n_finite, missing_bins, g, h, min_data=0, min_gain=0.0):
    """Enumerate every boundary of every feature.

    ``bins`` is (n_rows, n_features); ``missing_bins[f]`` is the missing bin
    index or None. Returns (feature, bin, gain) or None; ties within 1e-12
    relative go to the lowest (feature, bin).
    """
    cands = []
    for f in range(bins.shape[1]):
        col = bins[:, f]
        for j in range(n_finite[f] - 1):
            left = col <= j
            if missing_bins[f] is not None:
                left = left | (col == missing_bins[f])
            nl, nr = int(left.sum()), int((~left).sum())
            if nl < min_data or nr < min_data:
                continue
            gain = direct_gain(g, h, left)
            if gain > min_gain:
                cands.append((f, j, gain))
    if not cands:
        return None
    best = max(c[2] for c in cands)
    cutoff = best - 1e-12 * max(1.0, abs(best))
    return min((c for c in cands if c[2] >= cutoff), key=lambda c: (c[0], c[1]))


def pairwise_auc(labels, scores):
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y != 1]
    wins = 0.0
    for p, n in itertools.product(pos, neg):
        wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def linear_scan_bin(value, boundaries):
    """First i with value <= boundaries[i], else len(boundaries)."""
    for i, b in enumerate(boundaries):
        if value <= b:
            return i
    return len(boundaries)


def reference_tree_loss(g, h, groups):
    """Second-order objective -1/2 sum G_j^2/H_j over row groups."""
    return -0.5 * sum(math.fsum(g[r]) ** 2 / guard(math.fsum(h[r])) for r in groups)


def random_split_instance(rng, max_rows=64, max_features=4, max_bins=8):
    n = int(rng.integers(2, max_rows + 1))
    m = int(rng.integers(1, max_features + 1))
    n_finite, missing = [], []
    bins = np.empty((n, m), dtype=np.int64)
    for f in range(m):
        k = int(rng.integers(2, max_bins + 1))
        has_missing = bool(rng.random() < 0.3) and k >= 3
        nf = k - 1 if has_missing else k
        col = rng.integers(0, k, size=n)
        n_finite.append(nf)
        missing.append(nf if has_missing else None)
        bins[:, f] = col
    g = rng.normal(size=n)
    h = rng.uniform(0.05, 2.0, size=n)
    return bins, n_finite, missing, g, h
