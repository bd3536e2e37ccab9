"""Online cluster maintenance under streaming inserts.

Each new key is greedily assigned to the most similar cluster of its frame's
visual partition. The cluster's centroid and variance are updated with the
streaming recursions

    r'  = (n r + k) / (n + 1)
    s2' = (n s2 + |k - r'|^2) / (n + 1)

and the insert is absorbed when ``s2'`` stays under a size-adaptive threshold.
Otherwise the cluster is split at once if its payload is entirely on the
device, or (in deferred mode) flagged and the key parked in a device-side
buffer until retrieval brings the cluster back. Eager mode fetches the
cluster for maintenance instead; it exists as the ablation baseline.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import vecmath
from .clustering import split_two
from .errors import EmptyCluster
from .index import ClusterRecord, Frame, HierIndex, compute_representative, compute_variance, derive_seed
from .store import TieredStore

MODES = ("deferred", "eager")


@dataclass(frozen=True)
class ThresholdConfig:
    tau_min: float = 0.05
    tau_max: float = 0.3
    N0: float = 32.0

    def __post_init__(self):
        if not (0 < self.tau_min < self.tau_max) or self.N0 <= 0:
            raise ValueError("need 0 < tau_min < tau_max and N0 > 0")


def tau(N: int, cfg: ThresholdConfig = ThresholdConfig()) -> float:
    """Split threshold for a cluster of size ``N``; strict for small clusters, looser as they grow."""
    if N < 0:
        raise ValueError("cluster size must be nonnegative")
    return cfg.tau_min + (cfg.tau_max - cfg.tau_min) * math.exp(-N / cfg.N0)


def online_update(n: int, rep: np.ndarray, variance: float, key: np.ndarray) -> Tuple[np.ndarray, float]:
    """One streaming step of the centroid and variance recursions, in float64.

    The squared distance is summed with ``math.fsum`` (correctly rounded),
    so the result does not depend on the summation order of the BLAS build.
    """
    k = np.asarray(key, dtype=np.float64)
    rep_new = (n * rep + k) / (n + 1)
    diff = k - rep_new
    var_new = (n * variance + math.fsum(diff * diff)) / (n + 1)
    return rep_new, var_new


@dataclass
class MaintainerStats:
    inserts: int = 0
    absorbs: int = 0
    immediate_splits: int = 0
    deferred_marks: int = 0
    materialized_splits: int = 0
    maintenance_fetches: int = 0
    bootstraps: int = 0
    new_partitions: int = 0

    @property
    def total_splits(self) -> int:
        return self.immediate_splits + self.materialized_splits

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_splits"] = self.total_splits
        return d


@dataclass
class Assignment:
    cluster_id: int
    rep_new: np.ndarray
    var_new: float
    via_buffer: bool = False


@dataclass
class MaintainerEvent:
    kind: str  # absorb | split | defer | eager_split | bootstrap
    cluster_id: int
    new_clusters: Tuple[int, ...] = ()


@dataclass(frozen=True)
class MaintainerConfig:
    thresholds: ThresholdConfig = ThresholdConfig()
    mode: str = "deferred"
    split_depth_cap: int = 4
    visual_floor: float = 0.7
    window_frames: int = 4
    offload_horizon: int = 16
    kmeans_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.split_depth_cap < 1 or self.offload_horizon < 1 or self.window_frames < 0:
            raise ValueError("split_depth_cap and offload_horizon must be >= 1, window_frames >= 0")


class Maintainer:
    """Streaming assignment, split handling, and payload offload cadence."""

    def __init__(self, index: HierIndex, store: TieredStore, cfg: MaintainerConfig = MaintainerConfig()):
        self.index = index
        self.store = store
        self.cfg = cfg
        self.stats = MaintainerStats()
        self.update_log: Optional[List[Tuple[int, int]]] = None  # (cluster_id, entry_id) when enabled
        self._split_counter = 0

    def tau(self, n: int) -> float:
        return tau(n, self.cfg.thresholds)

    # -------------------------------------------------------------- assignment

    def assign_and_update(self, key, layer: int, partition_id: int) -> Optional[Assignment]:
        """Pick the most similar cluster and compute its would-be statistics.

        A best match on a registered buffer is attributed to the buffer's
        parent cluster. Nothing is committed here. Returns None when the
        partition has no cluster at this layer yet.
        """
        cands = self.index.candidates(layer, [partition_id])
        if not cands:
            return None
        best = cands[0] if len(cands) == 1 else self.index.rank_ids(key, layer, cands)[0]
        via_buffer = self.index.is_buffer_id(best)
        cid = self.index.buffer_owner[best] if via_buffer else best
        rec = self.index.cluster(cid)
        rep_new, var_new = online_update(rec.size, rec.rep, rec.variance, key)
        return Assignment(cid, rep_new, var_new, via_buffer)

    def on_insert(self, entry_id: int, a: Assignment) -> MaintainerEvent:
        idx = self.index
        rec = idx.cluster(a.cluster_id)
        self.stats.inserts += 1
        if a.var_new <= self.tau(rec.size):
            idx.add_member(rec.cluster_id, entry_id)
            idx.set_stats(rec.cluster_id, a.rep_new, a.var_new)
            self._log(rec.cluster_id, entry_id)
            self.stats.absorbs += 1
            return MaintainerEvent("absorb", rec.cluster_id)
        if self.store.is_device_resident(rec.cluster_id):
            new = self._split_with(rec, [entry_id])
            self.stats.immediate_splits += 1
            return MaintainerEvent("split", rec.cluster_id, tuple(new))
        if self.cfg.mode == "eager":
            self.store.fetch([rec.cluster_id], cause="maintenance")
            self.stats.maintenance_fetches += 1
            new = self._split_with(rec, [entry_id])
            self.stats.immediate_splits += 1
            return MaintainerEvent("eager_split", rec.cluster_id, tuple(new))
        idx.add_to_buffer(rec.cluster_id, entry_id)
        self.stats.deferred_marks += 1
        return MaintainerEvent("defer", rec.cluster_id)

    def insert(self, entry_id: int, partition_id: int) -> MaintainerEvent:
        e = self.index.entries[entry_id]
        a = self.assign_and_update(e.key, e.layer_id, partition_id)
        if a is None:
            rec = self.index.new_cluster(e.layer_id, partition_id, [entry_id])
            self.stats.inserts += 1
            self.stats.bootstraps += 1
            self._log(rec.cluster_id, entry_id)
            return MaintainerEvent("bootstrap", rec.cluster_id)
        return self.on_insert(entry_id, a)

    def _log(self, cid: int, eid: int) -> None:
        if self.update_log is not None:
            self.update_log.append((cid, eid))

    # ----------------------------------------------------------------- splits

    def _next_seed(self, cid: int) -> int:
        self._split_counter += 1
        return derive_seed(self.cfg.seed, cid, self._split_counter)

    def _split_with(self, rec: ClusterRecord, extra: Sequence[int]) -> List[int]:
        pool = list(rec.members) + list(extra)
        if rec.lazy_split:
            pool += self.index.unregister_buffer(rec.cluster_id)
        layer, pid, cid = rec.layer_id, rec.visual_parent, rec.cluster_id
        self.index.remove_cluster(cid)
        res = split_two(self.index.keys_of(pool), seed=self._next_seed(cid), max_iters=self.cfg.kmeans_iters)
        out = []
        for j in range(2):
            out.append(self.index.new_cluster(layer, pid, [pool[p] for p in res.members(j)]).cluster_id)
        return out

    def materialize_on_retrieval(self, cluster_id: int) -> List[int]:
        """Fold a flagged cluster's buffer back in and split, recursing while over threshold.

        The cluster's payload must already be on the device. Returns the ids
        that replace it (just ``[cluster_id]`` when it was not flagged).
        """
        rec = self.index.cluster(cluster_id)
        if not rec.lazy_split:
            return [cluster_id]
        pool = list(rec.members) + self.index.unregister_buffer(cluster_id)
        layer, pid = rec.layer_id, rec.visual_parent
        self.index.remove_cluster(cluster_id)
        return self._split_recursive(layer, pid, pool, depth=1, seed_key=cluster_id)

    def _split_recursive(self, layer: int, pid: int, pool: List[int], depth: int, seed_key: int) -> List[int]:
        res = split_two(self.index.keys_of(pool), seed=self._next_seed(seed_key), max_iters=self.cfg.kmeans_iters)
        self.stats.materialized_splits += 1
        out: List[int] = []
        for j in range(2):
            part = [pool[p] for p in res.members(j)]
            keys = self.index.keys_of(part)
            var = compute_variance(keys) if len(part) > 1 else 0.0
            if not res.degenerate and depth < self.cfg.split_depth_cap and len(part) >= 2 and var > self.tau(len(part)):
                out.extend(self._split_recursive(layer, pid, part, depth + 1, seed_key))
            else:
                out.append(self.index.new_cluster(layer, pid, part).cluster_id)
        return out

    # -------------------------------------------------------------- diagnostics

    def recompute_exact_stats(self, cluster_id: int) -> Tuple[np.ndarray, float]:
        rec = self.index.cluster(cluster_id)
        if rec.size == 0:
            raise EmptyCluster(cluster_id)
        keys = self.index.keys_of(rec.members)
        rep = compute_representative(keys)
        return rep, (compute_variance(keys, rep) if rec.size > 1 else 0.0)

    def variance_drift(self) -> dict:
        """|online - exact| variance gap over all live clusters."""
        gaps = []
        for cid in sorted(self.index.clusters):
            _, exact = self.recompute_exact_stats(cid)
            gaps.append(abs(self.index.clusters[cid].variance - exact))
        if not gaps:
            return {"clusters": 0, "mean_abs": 0.0, "max_abs": 0.0}
        return {"clusters": len(gaps), "mean_abs": float(np.mean(gaps)), "max_abs": float(np.max(gaps))}

    # --------------------------------------------------------------- ingestion

    def place_frame(self, frame: Frame) -> int:
        """Visual partition for an incoming frame; opens a new one below the similarity floor."""
        parts = self.index.partitions
        if any(p.frame_ids for p in parts.values()):
            best = self.index.visual_topk(frame.visual, 1)[0]
            sim = vecmath.cosine_sim(frame.visual, parts[best].visual_rep)
            if sim >= self.cfg.visual_floor:
                return best
        empty = [pid for pid in sorted(parts) if not parts[pid].frame_ids]
        if empty:
            return empty[0]
        self.stats.new_partitions += 1
        return self.index.new_partition().partition_id

    def ingest_frame(self, frame: Frame) -> List[MaintainerEvent]:
        pid = self.place_frame(frame)
        ids = self.index.add_frame(frame, pid)
        self.store.sync()
        events = []
        for row in ids:
            for eid in row:
                events.append(self.insert(eid, pid))
        self.after_frame(pid)
        return events

    def window_entries(self) -> List[int]:
        w = self.cfg.window_frames
        frames = self.index.frame_order[-w:] if w else []
        return [e for f in frames for row in self.index.frame_entries[f] for e in row]

    def after_frame(self, current_partition: int) -> None:
        """Refresh the pinned window and offload payloads that left the working set.

        A cluster's unpinned device payload is offloaded once its partition
        stops receiving frames or its oldest such entry is older than
        ``offload_horizon`` frames.
        """
        idx, store = self.index, self.store
        store.set_window(self.window_entries())
        now = idx.n_frames - 1
        oldest: Dict[int, int] = {}
        for eid in store.device_set - store.pinned - idx.buffered:
            cid = idx.owner[eid]
            pos = idx.arrival[idx.entries[eid].frame_id]
            if cid not in oldest or pos < oldest[cid]:
                oldest[cid] = pos
        for cid in sorted(oldest):
            rec = idx.clusters[cid]
            if rec.visual_parent != current_partition or now - oldest[cid] >= self.cfg.offload_horizon:
                store.offload(cid)
