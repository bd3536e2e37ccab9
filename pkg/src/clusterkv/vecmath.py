"""Fixed-dimension vector primitives.

Stored embeddings are float32; every reduction here accumulates in float64.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DegenerateVector, DimMismatch, EmptyCluster

ZERO_NORM = 1e-12

STORE_DTYPE = np.float32
ACC_DTYPE = np.float64


def as_vec(v) -> np.ndarray:
    return np.asarray(v, dtype=ACC_DTYPE).reshape(-1)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def norm(v) -> float:
    return float(np.sqrt(np.dot(as_vec(v), as_vec(v))))


def normalize(v) -> np.ndarray:
    """Return ``v / ||v||`` in float64; raises DegenerateVector for a zero vector."""
    x = as_vec(v)
    n = float(np.sqrt(np.dot(x, x)))
    if n < ZERO_NORM:
        raise DegenerateVector("cannot normalize a zero vector")
    return x / n


def normalize_rows(m) -> np.ndarray:
    x = np.asarray(m, dtype=ACC_DTYPE)
    if x.ndim == 1:
        x = x[None, :]
    n = np.sqrt(np.einsum("ij,ij->i", x, x))
    if x.shape[0] and float(n.min()) < ZERO_NORM:
        raise DegenerateVector("cannot normalize a zero vector")
    return x / n[:, None]


def cosine_sim(a, b) -> float:
    x, y = as_vec(a), as_vec(b)
    _check_dims(x, y)
    nx = float(np.sqrt(np.dot(x, x)))
    ny = float(np.sqrt(np.dot(y, y)))
    if nx < ZERO_NORM or ny < ZERO_NORM:
        raise DegenerateVector("cosine of a zero vector is undefined")
    c = float(np.dot(x, y)) / (nx * ny)
    return min(1.0, max(-1.0, c))


def cosine_many(query, matrix) -> np.ndarray:
    """Cosine of ``query`` against every row of ``matrix``, clamped to [-1, 1]."""
    q = normalize(query)
    m = np.asarray(matrix, dtype=ACC_DTYPE)
    if m.ndim != 2 or m.shape[1] != q.shape[0]:
        raise DimMismatch(f"dimension mismatch: {q.shape[0]} vs {m.shape[-1]}")
    if m.shape[0] == 0:
        return np.zeros(0, dtype=ACC_DTYPE)
    return np.clip(normalize_rows(m) @ q, -1.0, 1.0)


def mean(points: Sequence) -> np.ndarray:
    """Component-wise arithmetic mean; deliberately not renormalized."""
    if len(points) == 0:
        raise EmptyCluster("mean of an empty set")
    m = np.asarray(points, dtype=ACC_DTYPE)
    if m.ndim != 2:
        raise DimMismatch("points must share one dimension")
    return m.sum(axis=0) / m.shape[0]


def sq_dist(a, b) -> float:
    x, y = as_vec(a), as_vec(b)
    _check_dims(x, y)
    diff = x - y
    return float(np.dot(diff, diff))


def rank_desc(scores: np.ndarray, ids: Sequence[int]) -> list[int]:
    """Order ``ids`` by descending score, ties broken by ascending id."""
    ids_arr = np.asarray(ids, dtype=np.int64)
    order = np.lexsort((ids_arr, -np.asarray(scores, dtype=ACC_DTYPE)))
    return [int(i) for i in ids_arr[order]]
