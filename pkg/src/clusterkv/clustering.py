"""Spherical (cosine) k-means and the two-way split used for refinement.

Points are normalized once, centroids are kept as plain arithmetic means of
the normalized members, and all comparisons are by cosine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import EmptyInput, TooFewPoints
from .vecmath import normalize_rows

DEGENERATE_COS = 1.0 - 1e-12


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 50
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class KMeansResult:
    assignments: np.ndarray  # int64, one cluster id per point
    centroids: np.ndarray  # (k, d) float64 arithmetic means
    objective: float
    iterations_run: int
    history: List[float] = field(default_factory=list)
    degenerate: bool = False

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == j)


def k_for_size(n: int, target_size: int) -> int:
    """Cluster count that keeps clusters near ``target_size`` members."""
    return max(1, math.ceil(n / max(1, target_size)))


def _unit_rows(c: np.ndarray) -> np.ndarray:
    n = np.sqrt(np.einsum("ij,ij->i", c, c))
    n[n == 0] = 1.0
    return c / n[:, None]


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # k-means++ with (1 - cos) as the distance weight
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    dist = np.clip(1.0 - x @ x[chosen[0]], 0.0, None)
    while len(chosen) < k:
        total = float(dist.sum())
        if total <= 0.0:
            remaining = [i for i in range(n) if i not in set(chosen)]
            nxt = remaining[0]
        else:
            nxt = int(rng.choice(n, p=dist / total))
        chosen.append(nxt)
        dist = np.minimum(dist, np.clip(1.0 - x @ x[nxt], 0.0, None))
    return x[chosen].copy()


def _centroids_of(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    counts[counts == 0] = 1.0
    return sums / counts[:, None]


def _objective(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    cos = np.einsum("ij,ij->i", x, _unit_rows(centroids)[labels])
    return float(np.clip(cos, -1.0, 1.0).mean())


def _reseed_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int) -> None:
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j] > 0:
            continue
        cos = np.einsum("ij,ij->i", x, _unit_rows(centroids)[labels])
        movable = counts[labels] > 1
        cos = np.where(movable, cos, np.inf)
        p = int(np.argmin(cos))
        labels[p] = j
        centroids[j] = x[p]


def spherical_kmeans(points: Sequence, cfg: KMeansConfig) -> KMeansResult:
    """Lloyd-style spherical k-means.

    Each iteration assigns points to the centroid of maximal cosine (ties go
    to the lowest cluster id), moves the farthest point into any cluster left
    empty, and recomputes centroids as member means. The objective is the mean
    cosine of each point to its assigned centroid; iteration stops when the
    labeling is stable, the objective gains less than ``cfg.tol``, or after
    ``cfg.max_iters`` rounds.
    """
    if len(points) == 0:
        raise EmptyInput("spherical_kmeans needs at least one point")
    x = normalize_rows(points)
    n = x.shape[0]
    k = min(cfg.k, n)
    rng = np.random.default_rng(cfg.seed)

    centroids = _seed_centroids(x, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    history: List[float] = []
    iters = 0
    for _ in range(cfg.max_iters):
        iters += 1
        sims = x @ _unit_rows(centroids).T
        new_labels = np.argmax(sims, axis=1).astype(np.int64)
        _reseed_empty(x, new_labels, centroids, k)
        changed = not np.array_equal(new_labels, labels)
        labels = new_labels
        centroids = _centroids_of(x, labels, k)
        obj = _objective(x, labels, centroids)
        gain = obj - history[-1] if history else math.inf
        history.append(obj)
        if not changed or gain < cfg.tol:
            break

    return KMeansResult(
        assignments=labels,
        centroids=centroids,
        objective=history[-1],
        iterations_run=iters,
        history=history,
    )


def split_two(points: Sequence, seed: int = 0, max_iters: int = 50) -> KMeansResult:
    """Split a point set in two.

    A directionally identical set cannot be separated by cosine, so it is
    split deterministically: the last point becomes a singleton and the
    result is flagged ``degenerate``.
    """
    if len(points) < 2:
        raise TooFewPoints("split_two needs at least two points")
    x = normalize_rows(points)
    if float((x @ x[0]).min()) >= DEGENERATE_COS:
        labels = np.zeros(x.shape[0], dtype=np.int64)
        labels[-1] = 1
        centroids = _centroids_of(x, labels, 2)
        return KMeansResult(
            assignments=labels,
            centroids=centroids,
            objective=_objective(x, labels, centroids),
            iterations_run=0,
            degenerate=True,
        )
    return spherical_kmeans(points, KMeansConfig(k=2, max_iters=max_iters, tol=0.0, seed=seed))
