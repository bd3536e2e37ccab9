"""Independent reference computations used by the tests."""

import itertools
import math

import numpy as np


def unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def kmeans_objective(points, labels, k):
    """Mean cosine of each point to its cluster's normalized mean; None if a cluster is empty."""
    x = unit_rows(points)
    total = 0.0
    for j in range(k):
        m = x[labels == j]
        if len(m) == 0:
            return None
        c = m.mean(axis=0)
        total += float((m @ (c / np.linalg.norm(c))).sum())
    return total / len(x)


def exhaustive_best_objective(points, k):
    """Global optimum over every labeling with no empty cluster (k**n labelings)."""
    x = unit_rows(points)
    n = len(x)
    labels = np.array(list(itertools.product(range(k), repeat=n)))  # (k**n, n)
    onehot = labels[:, :, None] == np.arange(k)[None, None, :]  # (M, n, k)
    sums = np.einsum("mnk,nd->mkd", onehot, x)
    counts = onehot.sum(axis=1)
    ok = (counts > 0).all(axis=1)
    # sum_j |sum of members_j| equals the total cosine to normalized means
    obj = np.linalg.norm(sums, axis=2).sum(axis=1) / n
    return float(obj[ok].max())


def brute_rank(query, reps_by_id):
    """Ids ordered by descending cosine, ties to the lower id, via a plain Python sort."""
    q = np.asarray(query, dtype=np.float64)
    qn = q / np.linalg.norm(q)
    scored = []
    for cid, r in reps_by_id.items():
        r = np.asarray(r, dtype=np.float64)
        scored.append((-float(qn @ (r / np.linalg.norm(r))), cid))
    return [cid for _, cid in sorted(scored)]


def replay_variance(keys):
    """Streaming centroid and variance recursion in plain Python floats."""
    rep = [float(v) for v in keys[0]]
    var = 0.0
    for n, key in enumerate(keys[1:], start=1):
        k = [float(v) for v in key]
        rep = [(n * r + ki) / (n + 1) for r, ki in zip(rep, k)]
        diff = [ki - r for ki, r in zip(k, rep)]
        var = (n * var + math.fsum(x * x for x in diff)) / (n + 1)
    return rep, var


def batch_variance(keys):
    k = np.asarray(keys, dtype=np.float64)
    r = k.mean(axis=0)
    return float(((k - r) ** 2).sum(axis=1).mean())
