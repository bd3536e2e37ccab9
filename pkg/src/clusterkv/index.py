"""Nested visual -> semantic cluster hierarchy and its representative index.

Frames are grouped into visual partitions by their visual embeddings. Inside
each partition, the keys of every layer are grouped into semantic clusters,
and each cluster is summarized by the arithmetic mean of its member keys.
Those representatives (plus any pending split buffers) form ``rep_set``, the
device-resident lookup table used for retrieval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import vecmath
from .clustering import KMeansConfig, k_for_size, spherical_kmeans
from .errors import (
    BadLayer,
    EmptyCluster,
    EmptyIndex,
    EmptyInput,
    InvariantViolation,
    ParseError,
    UnknownCluster,
)

SNAPSHOT_VERSION = 1


def derive_seed(base: int, *keys: int) -> int:
    """Deterministic 63-bit seed from a base seed and integer keys."""
    ss = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(eq=False)
class Frame:
    """One ingested frame: a visual embedding plus per-layer token keys/values.

    ``keys`` and ``values`` have shape ``(L, tokens, d)``.
    """

    frame_id: int
    visual: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    scene: int = -1

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=vecmath.STORE_DTYPE)
        self.keys = np.asarray(self.keys, dtype=vecmath.STORE_DTYPE)
        self.values = np.asarray(self.values, dtype=vecmath.STORE_DTYPE)

    @property
    def n_layers(self) -> int:
        return int(self.keys.shape[0])

    @property
    def n_tokens(self) -> int:
        return int(self.keys.shape[1])

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.scene == other.scene
            and np.array_equal(self.visual, other.visual)
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.values, other.values)
        )


@dataclass(eq=False)
class KVEntry:
    key: np.ndarray
    value: np.ndarray
    frame_id: int
    layer_id: int
    token_id: int


@dataclass
class ClusterRecord:
    cluster_id: int
    layer_id: int
    visual_parent: int
    members: List[int]
    rep: np.ndarray
    variance: float
    first_frame: int
    lazy_split: bool = False
    buffer: List[int] = field(default_factory=list)
    buffer_id: Optional[int] = None
    buffer_sum: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def buffer_rep(self) -> Optional[np.ndarray]:
        if not self.buffer:
            return None
        return self.buffer_sum / len(self.buffer)


@dataclass
class VisualPartition:
    partition_id: int
    frame_ids: List[int]
    visual_sum: np.ndarray
    per_layer_clusters: Dict[int, List[int]]
    key_sums: List[np.ndarray]
    key_counts: List[int]

    @property
    def visual_rep(self) -> np.ndarray:
        return self.visual_sum / len(self.frame_ids)

    def key_rep(self, layer: int) -> np.ndarray:
        if self.key_counts[layer] == 0:
            return self.visual_rep
        return self.key_sums[layer] / self.key_counts[layer]


@dataclass(frozen=True)
class BuildConfig:
    visual_target: int = 8
    semantic_target: int = 32
    max_iters: int = 50
    tol: float = 1e-6
    seed: int = 0


def compute_representative(keys: Sequence) -> np.ndarray:
    """Arithmetic mean of member keys (float64)."""
    if len(keys) == 0:
        raise EmptyCluster("representative of an empty cluster")
    return vecmath.mean(keys)


def compute_variance(keys: Sequence, rep=None) -> float:
    """Mean squared Euclidean distance of member keys to ``rep``."""
    if len(keys) == 0:
        raise EmptyCluster("variance of an empty cluster")
    m = np.asarray(keys, dtype=vecmath.ACC_DTYPE)
    r = compute_representative(m) if rep is None else vecmath.as_vec(rep)
    if m.shape[0] == 1 and rep is None:
        return 0.0
    diff = m - r
    return float(np.einsum("ij,ij->i", diff, diff).sum() / m.shape[0])


class HierIndex:
    """Visual partitions, per-layer semantic clusters, and the representative set."""

    def __init__(self, d: int, n_layers: int):
        if d < 1 or n_layers < 1:
            raise ValueError("d and n_layers must be positive")
        self.d = d
        self.n_layers = n_layers
        self.entries: List[KVEntry] = []
        self.owner: List[int] = []  # entry id -> cluster id (parent cluster for buffered entries)
        self.buffered: set = set()
        self.frame_order: List[int] = []
        self.arrival: Dict[int, int] = {}  # frame id -> arrival position
        self.frame_partition: Dict[int, int] = {}
        self.frame_visual: Dict[int, np.ndarray] = {}
        self.frame_entries: Dict[int, List[List[int]]] = {}
        self.partitions: Dict[int, VisualPartition] = {}
        self.clusters: Dict[int, ClusterRecord] = {}
        self.rep_set: List[Dict[int, np.ndarray]] = [dict() for _ in range(n_layers)]
        self.buffer_owner: Dict[int, int] = {}
        self._layer_entries: List[List[int]] = [[] for _ in range(n_layers)]
        self._layer_keys_cache: List[Optional[np.ndarray]] = [None] * n_layers
        self._next_cluster = 0
        self._next_partition = 0

    # ------------------------------------------------------------------ entries

    @property
    def n_frames(self) -> int:
        return len(self.frame_order)

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer < self.n_layers:
            raise BadLayer(f"layer {layer} out of range [0, {self.n_layers})")

    def add_frame(self, frame: Frame, partition_id: int) -> List[List[int]]:
        """Register a frame's entries under ``partition_id``; returns entry ids per layer."""
        if frame.keys.shape[0] != self.n_layers or frame.keys.shape[2] != self.d:
            raise ValueError(
                f"frame shape {frame.keys.shape} does not match index (L={self.n_layers}, d={self.d})"
            )
        part = self.partitions[partition_id]
        ids: List[List[int]] = []
        for layer in range(self.n_layers):
            row = []
            for t in range(frame.n_tokens):
                eid = len(self.entries)
                self.entries.append(
                    KVEntry(frame.keys[layer, t], frame.values[layer, t], frame.frame_id, layer, t)
                )
                self.owner.append(-1)
                self._layer_entries[layer].append(eid)
                row.append(eid)
            part.key_sums[layer] += frame.keys[layer].astype(vecmath.ACC_DTYPE).sum(axis=0)
            part.key_counts[layer] += frame.n_tokens
            self._layer_keys_cache[layer] = None
            ids.append(row)
        part.frame_ids.append(frame.frame_id)
        part.visual_sum += frame.visual.astype(vecmath.ACC_DTYPE)
        self.arrival[frame.frame_id] = len(self.frame_order)
        self.frame_order.append(frame.frame_id)
        self.frame_partition[frame.frame_id] = partition_id
        self.frame_visual[frame.frame_id] = frame.visual
        self.frame_entries[frame.frame_id] = ids
        return ids

    def keys_of(self, entry_ids: Iterable[int]) -> np.ndarray:
        ids = list(entry_ids)
        if not ids:
            return np.zeros((0, self.d), dtype=vecmath.ACC_DTYPE)
        return np.stack([self.entries[i].key for i in ids]).astype(vecmath.ACC_DTYPE)

    def layer_entries(self, layer: int) -> List[int]:
        self._check_layer(layer)
        return self._layer_entries[layer]

    def layer_keys(self, layer: int) -> np.ndarray:
        self._check_layer(layer)
        cached = self._layer_keys_cache[layer]
        if cached is None:
            cached = self.keys_of(self._layer_entries[layer])
            self._layer_keys_cache[layer] = cached
        return cached

    # --------------------------------------------------------------- partitions

    def new_partition(self) -> VisualPartition:
        pid = self._next_partition
        self._next_partition += 1
        part = self._empty_partition(pid)
        self.partitions[pid] = part
        return part

    def _empty_partition(self, pid: int) -> VisualPartition:
        return VisualPartition(
            partition_id=pid,
            frame_ids=[],
            visual_sum=np.zeros(self.d, dtype=vecmath.ACC_DTYPE),
            per_layer_clusters={layer: [] for layer in range(self.n_layers)},
            key_sums=[np.zeros(self.d, dtype=vecmath.ACC_DTYPE) for _ in range(self.n_layers)],
            key_counts=[0] * self.n_layers,
        )

    def partition_ids(self) -> List[int]:
        return sorted(self.partitions)

    # ----------------------------------------------------------------- clusters

    def allocate_id(self) -> int:
        cid = self._next_cluster
        self._next_cluster += 1
        return cid

    def new_cluster(self, layer: int, partition_id: int, member_ids: Sequence[int]) -> ClusterRecord:
        """Create a live cluster with exact statistics over ``member_ids``."""
        if not member_ids:
            raise EmptyCluster("cannot create an empty cluster")
        members = sorted(member_ids)
        keys = self.keys_of(members)
        rep = compute_representative(keys)
        rec = ClusterRecord(
            cluster_id=self.allocate_id(),
            layer_id=layer,
            visual_parent=partition_id,
            members=members,
            rep=rep,
            variance=compute_variance(keys, rep) if len(members) > 1 else 0.0,
            first_frame=min(self._arrival(self.entries[i].frame_id) for i in members),
        )
        for eid in members:
            self.owner[eid] = rec.cluster_id
        self.clusters[rec.cluster_id] = rec
        self.partitions[partition_id].per_layer_clusters[layer].append(rec.cluster_id)
        self.rep_set[layer][rec.cluster_id] = rec.rep
        return rec

    def remove_cluster(self, cluster_id: int) -> ClusterRecord:
        rec = self.cluster(cluster_id)
        if rec.buffer_id is not None:
            self.unregister_buffer(cluster_id)
        del self.clusters[cluster_id]
        self.partitions[rec.visual_parent].per_layer_clusters[rec.layer_id].remove(cluster_id)
        del self.rep_set[rec.layer_id][cluster_id]
        return rec

    def cluster(self, cluster_id: int) -> ClusterRecord:
        try:
            return self.clusters[cluster_id]
        except KeyError:
            raise UnknownCluster(cluster_id) from None

    def set_stats(self, cluster_id: int, rep: np.ndarray, variance: float) -> None:
        rec = self.cluster(cluster_id)
        rec.rep = rep
        rec.variance = variance
        self.rep_set[rec.layer_id][cluster_id] = rep

    def add_member(self, cluster_id: int, entry_id: int) -> None:
        rec = self.cluster(cluster_id)
        rec.members.append(entry_id)
        self.owner[entry_id] = cluster_id

    def add_to_buffer(self, cluster_id: int, entry_id: int) -> None:
        """Append a pending entry to the cluster's split buffer and (re)register it."""
        rec = self.cluster(cluster_id)
        key = self.entries[entry_id].key.astype(vecmath.ACC_DTYPE)
        if rec.buffer_id is None:
            rec.buffer_id = self.allocate_id()
            rec.buffer_sum = np.zeros(self.d, dtype=vecmath.ACC_DTYPE)
            self.buffer_owner[rec.buffer_id] = cluster_id
        rec.buffer.append(entry_id)
        rec.buffer_sum = rec.buffer_sum + key
        rec.lazy_split = True
        self.owner[entry_id] = cluster_id
        self.buffered.add(entry_id)
        self.rep_set[rec.layer_id][rec.buffer_id] = rec.buffer_rep

    def unregister_buffer(self, cluster_id: int) -> List[int]:
        """Drop the cluster's buffer registration; returns the buffered entry ids."""
        rec = self.cluster(cluster_id)
        drained = list(rec.buffer)
        if rec.buffer_id is not None:
            self.rep_set[rec.layer_id].pop(rec.buffer_id, None)
            self.buffer_owner.pop(rec.buffer_id, None)
        for eid in drained:
            self.buffered.discard(eid)
        rec.buffer = []
        rec.buffer_id = None
        rec.buffer_sum = None
        rec.lazy_split = False
        return drained

    def is_buffer_id(self, rid: int) -> bool:
        return rid in self.buffer_owner

    def entries_of(self, rid: int) -> List[int]:
        """Entry ids behind a rep-set id (cluster members or buffer contents)."""
        if rid in self.buffer_owner:
            return list(self.clusters[self.buffer_owner[rid]].buffer)
        return list(self.cluster(rid).members)

    def layer_clusters(self, layer: int) -> List[int]:
        self._check_layer(layer)
        return sorted(cid for cid in self.rep_set[layer] if cid not in self.buffer_owner)

    def _arrival(self, frame_id: int) -> int:
        return self.arrival[frame_id]

    def timeline(self, layer: int) -> List[Tuple[int, np.ndarray]]:
        """Live cluster representatives of ``layer`` ordered by first-member arrival."""
        self._check_layer(layer)
        recs = [self.clusters[c] for c in self.layer_clusters(layer)]
        recs.sort(key=lambda r: (r.first_frame, r.cluster_id))
        return [(r.cluster_id, r.rep) for r in recs]

    # ------------------------------------------------------------------- lookup

    def _require_nonempty(self) -> None:
        if not self.partitions:
            raise EmptyIndex("index has no partitions")

    def visual_topk(self, query, k_v: Optional[int], layer: Optional[int] = None) -> List[int]:
        """Top partitions by cosine to ``query``.

        With ``layer=None`` partitions are compared through their visual
        representatives; with a layer, through the mean of their layer keys.
        ``k_v=None`` returns every partition. Partitions without frames are
        skipped.
        """
        self._require_nonempty()
        pids = [p for p in self.partition_ids() if self.partitions[p].frame_ids]
        if not pids:
            raise EmptyIndex("index has no frames")
        if layer is None:
            reps = np.stack([self.partitions[p].visual_rep for p in pids])
        else:
            self._check_layer(layer)
            reps = np.stack([self.partitions[p].key_rep(layer) for p in pids])
        ranked = vecmath.rank_desc(vecmath.cosine_many(query, reps), pids)
        return ranked if k_v is None else ranked[:k_v]

    def candidates(self, layer: int, partition_ids: Iterable[int]) -> List[int]:
        """Rep-set ids of ``layer`` inside the given partitions, buffers included."""
        self._check_layer(layer)
        out = []
        for pid in partition_ids:
            for cid in self.partitions[pid].per_layer_clusters[layer]:
                out.append(cid)
                bid = self.clusters[cid].buffer_id
                if bid is not None:
                    out.append(bid)
        return out

    def rank_ids(self, query, layer: int, ids: Sequence[int]) -> List[int]:
        if not ids:
            return []
        ids = sorted(ids)
        reps = np.stack([self.rep_set[layer][i] for i in ids])
        return vecmath.rank_desc(vecmath.cosine_many(query, reps), ids)

    def semantic_topk(self, query, layer: int, partitions: Sequence[int], k_s: Optional[int]) -> List[int]:
        self._check_layer(layer)
        ranked = self.rank_ids(query, layer, self.candidates(layer, partitions))
        return ranked if k_s is None else ranked[:k_s]

    def flat_topk(self, query, layer: int, k: Optional[int]) -> List[int]:
        self._check_layer(layer)
        ranked = self.rank_ids(query, layer, list(self.rep_set[layer]))
        return ranked if k is None else ranked[:k]

    # --------------------------------------------------------------- invariants

    def check_invariants(self) -> None:
        """Raise InvariantViolation if the hierarchy is inconsistent."""
        seen_frames = set()
        for part in self.partitions.values():
            for f in part.frame_ids:
                if f in seen_frames:
                    raise InvariantViolation(f"frame {f} in more than one partition")
                seen_frames.add(f)
        if seen_frames != set(self.frame_order):
            raise InvariantViolation("partition frame sets do not cover all frames")

        for layer in range(self.n_layers):
            counted = 0
            expected_ids = set()
            for pid, part in self.partitions.items():
                for cid in part.per_layer_clusters[layer]:
                    rec = self.clusters.get(cid)
                    if rec is None or rec.layer_id != layer or rec.visual_parent != pid:
                        raise InvariantViolation(f"partition {pid} lists bad cluster {cid}")
                    if rec.size == 0:
                        raise InvariantViolation(f"cluster {cid} is empty")
                    if rec.variance < 0 or (rec.size == 1 and rec.variance != 0.0):
                        raise InvariantViolation(f"cluster {cid} variance {rec.variance}")
                    if rec.lazy_split != (rec.buffer_id is not None and len(rec.buffer) > 0):
                        raise InvariantViolation(f"cluster {cid} flag/buffer mismatch")
                    for eid in rec.members + rec.buffer:
                        if self.owner[eid] != cid:
                            raise InvariantViolation(f"entry {eid} owner mismatch")
                        e = self.entries[eid]
                        if e.layer_id != layer or self.frame_partition[e.frame_id] != pid:
                            raise InvariantViolation(f"entry {eid} outside its partition/layer")
                    counted += rec.size + len(rec.buffer)
                    expected_ids.add(cid)
                    if rec.buffer_id is not None:
                        expected_ids.add(rec.buffer_id)
            if counted != len(self._layer_entries[layer]):
                raise InvariantViolation(
                    f"layer {layer}: clusters hold {counted} entries, expected {len(self._layer_entries[layer])}"
                )
            if set(self.rep_set[layer]) != expected_ids:
                raise InvariantViolation(f"layer {layer}: rep set does not mirror live clusters")

    # ------------------------------------------------------------ serialization

    def to_dict(self) -> dict:
        return {
            "header": {
                "version": SNAPSHOT_VERSION,
                "d": self.d,
                "L": self.n_layers,
                "counts": {
                    "frames": self.n_frames,
                    "entries": len(self.entries),
                    "partitions": len(self.partitions),
                    "clusters": len(self.clusters),
                },
                "next_cluster": self._next_cluster,
                "next_partition": self._next_partition,
            },
            "frames": [
                {
                    "frame_id": f,
                    "partition": self.frame_partition[f],
                    "visual": self.frame_visual[f].astype(np.float64).tolist(),
                }
                for f in self.frame_order
            ],
            "entries": [
                [e.frame_id, e.layer_id, e.token_id, e.key.astype(np.float64).tolist(), e.value.astype(np.float64).tolist()]
                for e in self.entries
            ],
            "partitions": [
                {"partition_id": p.partition_id, "frame_ids": list(p.frame_ids),
                 "per_layer_clusters": [list(p.per_layer_clusters[layer]) for layer in range(self.n_layers)]}
                for p in (self.partitions[i] for i in self.partition_ids())
            ],
            "clusters": [
                {
                    "cluster_id": r.cluster_id,
                    "layer": r.layer_id,
                    "partition": r.visual_parent,
                    "members": list(r.members),
                    "rep": r.rep.tolist(),
                    "variance": r.variance,
                    "first_frame": r.first_frame,
                    "lazy_split": r.lazy_split,
                    "buffer": list(r.buffer),
                    "buffer_id": r.buffer_id,
                }
                for r in (self.clusters[c] for c in sorted(self.clusters))
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HierIndex":
        try:
            hdr = data["header"]
            if hdr["version"] != SNAPSHOT_VERSION:
                raise ParseError(f"unsupported snapshot version {hdr['version']}")
            idx = cls(int(hdr["d"]), int(hdr["L"]))
            for row in data["entries"]:
                f, layer, t, key, value = row
                idx.entries.append(KVEntry(np.asarray(key, np.float32), np.asarray(value, np.float32), f, layer, t))
                idx.owner.append(-1)
                idx._layer_entries[layer].append(len(idx.entries) - 1)
            for fr in data["frames"]:
                fid = fr["frame_id"]
                idx.arrival[fid] = len(idx.frame_order)
                idx.frame_order.append(fid)
                idx.frame_partition[fid] = fr["partition"]
                idx.frame_visual[fid] = np.asarray(fr["visual"], np.float32)
                idx.frame_entries[fid] = [[] for _ in range(idx.n_layers)]
            for eid, e in enumerate(idx.entries):
                idx.frame_entries[e.frame_id][e.layer_id].append(eid)
            for p in data["partitions"]:
                part = idx._empty_partition(int(p["partition_id"]))
                idx.partitions[part.partition_id] = part
                for fid in p["frame_ids"]:
                    part.frame_ids.append(fid)
                    part.visual_sum += idx.frame_visual[fid].astype(np.float64)
                    for layer in range(idx.n_layers):
                        k = idx.keys_of(idx.frame_entries[fid][layer])
                        part.key_sums[layer] += k.sum(axis=0)
                        part.key_counts[layer] += k.shape[0]
                part.per_layer_clusters = {layer: list(c) for layer, c in enumerate(p["per_layer_clusters"])}
            for c in data["clusters"]:
                rec = ClusterRecord(
                    cluster_id=c["cluster_id"],
                    layer_id=c["layer"],
                    visual_parent=c["partition"],
                    members=list(c["members"]),
                    rep=np.asarray(c["rep"], np.float64),
                    variance=float(c["variance"]),
                    first_frame=int(c["first_frame"]),
                    lazy_split=bool(c["lazy_split"]),
                    buffer=list(c["buffer"]),
                    buffer_id=c["buffer_id"],
                )
                idx.clusters[rec.cluster_id] = rec
                idx.rep_set[rec.layer_id][rec.cluster_id] = rec.rep
                for eid in rec.members:
                    idx.owner[eid] = rec.cluster_id
                for eid in rec.buffer:
                    idx.owner[eid] = rec.cluster_id
                    idx.buffered.add(eid)
                if rec.buffer:
                    rec.buffer_sum = idx.keys_of(rec.buffer).sum(axis=0)
                    idx.buffer_owner[rec.buffer_id] = rec.cluster_id
                    idx.rep_set[rec.layer_id][rec.buffer_id] = rec.buffer_rep
            idx._next_cluster = int(hdr["next_cluster"])
            idx._next_partition = int(hdr["next_partition"])
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"malformed index snapshot: {exc!r}") from exc
        return idx

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "HierIndex":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
        return cls.from_dict(data)


def _ordered_labels(labels: np.ndarray, order_key: Sequence[int]) -> List[List[int]]:
    """Group point positions by label, groups ordered by their earliest ``order_key``."""
    groups: Dict[int, List[int]] = {}
    for pos, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(pos)
    return sorted(groups.values(), key=lambda g: min(order_key[p] for p in g))


def build_index(frames: Sequence[Frame], cfg: BuildConfig = BuildConfig(), index: Optional[HierIndex] = None) -> HierIndex:
    """Construct the hierarchy over a temporally ordered batch of frames.

    Visual partitions come from spherical k-means over the frames' visual
    embeddings; each partition's keys are then clustered per layer. When
    ``index`` is given it must be empty and is filled in place.
    """
    if not frames:
        raise EmptyInput("build_index needs at least one frame")
    d = frames[0].keys.shape[2]
    n_layers = frames[0].keys.shape[0]
    idx = HierIndex(d, n_layers) if index is None else index
    if idx.n_frames:
        raise ValueError("build_index requires an empty index")

    visual = np.stack([f.visual for f in frames])
    kv = spherical_kmeans(
        visual,
        KMeansConfig(k=k_for_size(len(frames), cfg.visual_target), max_iters=cfg.max_iters, tol=cfg.tol, seed=cfg.seed),
    )
    frame_pid = [0] * len(frames)
    for group in _ordered_labels(kv.assignments, list(range(len(frames)))):
        part = idx.new_partition()
        for pos in group:
            frame_pid[pos] = part.partition_id
    for pos, frame in enumerate(frames):
        idx.add_frame(frame, frame_pid[pos])

    for pid in idx.partition_ids():
        part = idx.partitions[pid]
        for layer in range(n_layers):
            eids = [e for fid in part.frame_ids for e in idx.frame_entries[fid][layer]]
            keys = idx.keys_of(eids)
            res = spherical_kmeans(
                keys,
                KMeansConfig(
                    k=k_for_size(len(eids), cfg.semantic_target),
                    max_iters=cfg.max_iters,
                    tol=cfg.tol,
                    seed=derive_seed(cfg.seed, pid, layer),
                ),
            )
            for group in _ordered_labels(res.assignments, eids):
                idx.new_cluster(layer, pid, [eids[p] for p in group])
    return idx
