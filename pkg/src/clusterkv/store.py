"""Two-tier (device/host) placement of KV payloads with an analytic cost ledger.

Every transfer costs ``alpha + beta * bytes``. Placement is tracked per
entry; transfers are issued per cluster (one op per cluster payload) unless a
caller explicitly asks for entry-granular movement. Representatives and split
buffers are index metadata: always device-resident and never counted against
``device_capacity``.

Payloads fetched from the host leave a host copy behind, so dropping them
again (eviction, end-of-query release) is free. Only payloads that have never
been written to the host cost a transfer when offloaded.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set

from .errors import InvariantViolation, UnknownCluster
from .index import HierIndex

CAUSES = ("retrieval", "maintenance", "prefetch", "completion", "offload")


class Tier(str, Enum):
    DEVICE = "device"
    HOST = "host"


@dataclass(frozen=True)
class CostModel:
    alpha: float = 10.0  # µs per transfer op
    beta: float = 0.001  # µs per byte
    bytes_per_entry: int = 512
    device_capacity: int = 4096  # entries

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.bytes_per_entry < 1 or self.device_capacity < 0:
            raise ValueError("bytes_per_entry must be positive and device_capacity nonnegative")

    @classmethod
    def for_dim(cls, d: int, precision_bytes: int = 4, **kw) -> "CostModel":
        # key + value per entry
        return cls(bytes_per_entry=2 * d * precision_bytes, **kw)

    def cost(self, n_ops: int, total_bytes: int) -> float:
        return transfer_cost(n_ops, total_bytes, self)


def transfer_cost(n_ops: int, total_bytes: int, model: CostModel) -> float:
    if n_ops < 0 or total_bytes < 0:
        raise ValueError("n_ops and total_bytes must be nonnegative")
    return n_ops * model.alpha + total_bytes * model.beta


@dataclass(frozen=True)
class TransferRecord:
    cause: str
    ops: int
    bytes: int
    time_us: float


@dataclass
class LedgerDelta:
    ops: int = 0
    bytes: int = 0
    time_us: float = 0.0

    def add(self, rec: TransferRecord) -> None:
        self.ops += rec.ops
        self.bytes += rec.bytes
        self.time_us += rec.time_us

    def __iadd__(self, other: "LedgerDelta") -> "LedgerDelta":
        self.ops += other.ops
        self.bytes += other.bytes
        self.time_us += other.time_us
        return self


@dataclass
class TransferLedger:
    model: CostModel
    ops_count: int = 0
    bytes_moved: int = 0
    simulated_io_time: float = 0.0
    by_cause: Dict[str, LedgerDelta] = field(default_factory=lambda: {c: LedgerDelta() for c in CAUSES})
    log: List[TransferRecord] = field(default_factory=list)

    def charge(self, cause: str, ops: int, nbytes: int) -> TransferRecord:
        if cause not in self.by_cause:
            raise ValueError(f"unknown transfer cause {cause!r}")
        rec = TransferRecord(cause, ops, nbytes, self.model.cost(ops, nbytes))
        self.log.append(rec)
        self.ops_count += ops
        self.bytes_moved += nbytes
        self.simulated_io_time += rec.time_us
        self.by_cause[cause].add(rec)
        return rec

    def replay_io_time(self) -> float:
        total = 0.0
        for rec in self.log:
            total += rec.ops * self.model.alpha + rec.bytes * self.model.beta
        return total

    def to_dict(self) -> dict:
        return {
            "ops": self.ops_count,
            "bytes": self.bytes_moved,
            "io_time_us": self.simulated_io_time,
            "by_cause": {
                c: {"ops": d.ops, "bytes": d.bytes, "io_time_us": d.time_us} for c, d in self.by_cause.items()
            },
        }


class TieredStore:
    """Per-entry residency over an index, plus the transfer ledger."""

    def __init__(self, index: HierIndex, model: CostModel = CostModel()):
        self.index = index
        self.model = model
        self.ledger = TransferLedger(model)
        self.on_device: List[bool] = []
        self.host_copy: List[bool] = []
        self.device_set: Set[int] = set()
        self.pinned: Set[int] = set()
        self._lru: "OrderedDict[int, Set[int]]" = OrderedDict()
        self._query_moved: Optional[Set[int]] = None
        self._entry_groups = 0  # entry-granular fetches are LRU groups keyed -1, -2, ...
        self.evictions = 0

    # ------------------------------------------------------------ bookkeeping

    def sync(self) -> None:
        """Register entries the index gained since the last call as fresh device payloads."""
        for eid in range(len(self.on_device), len(self.index.entries)):
            self.on_device.append(True)
            self.host_copy.append(False)
            self.device_set.add(eid)

    def tier(self, entry_id: int) -> Tier:
        return Tier.DEVICE if self.on_device[entry_id] else Tier.HOST

    def set_window(self, entry_ids: Iterable[int]) -> None:
        self.pinned = set(entry_ids)
        for eid in self.pinned:
            if not self.on_device[eid]:
                raise InvariantViolation(f"window entry {eid} is not device-resident")

    def device_member_count(self) -> int:
        return len(self.device_set) - len(self.index.buffered & self.device_set)

    def _members(self, cluster_id: int) -> List[int]:
        try:
            return self.index.entries_of(cluster_id)
        except UnknownCluster:
            raise UnknownCluster(cluster_id) from None

    def is_device_resident(self, cluster_id: int) -> bool:
        return all(self.on_device[e] for e in self.index.cluster(cluster_id).members)

    def _to_host(self, eid: int) -> None:
        self.on_device[eid] = False
        self.host_copy[eid] = True
        self.device_set.discard(eid)

    def _to_device(self, eid: int) -> None:
        self.on_device[eid] = True
        self.device_set.add(eid)
        if self._query_moved is not None:
            self._query_moved.add(eid)

    # ---------------------------------------------------------------- movement

    @staticmethod
    def _check_cause(cause: str) -> None:
        if cause not in CAUSES:
            raise ValueError(f"unknown transfer cause {cause!r}")

    def offload(self, cluster_id: int, cause: str = "offload") -> LedgerDelta:
        """Move the cluster's unpinned device members to the host.

        Members that already have a host copy are dropped for free; the rest
        are written back as one transfer op.
        """
        self._check_cause(cause)
        delta = LedgerDelta()
        dirty = 0
        for eid in self.index.cluster(cluster_id).members:
            if self.on_device[eid] and eid not in self.pinned:
                if not self.host_copy[eid]:
                    dirty += 1
                self._to_host(eid)
        if dirty:
            delta.add(self.ledger.charge(cause, 1, dirty * self.model.bytes_per_entry))
        return delta

    def fetch(self, cluster_ids: Sequence[int], cause: str) -> LedgerDelta:
        """Bring host-resident members of each cluster to the device, one op per cluster."""
        self._check_cause(cause)
        delta = LedgerDelta()
        touched = []
        for cid in cluster_ids:
            moved = [e for e in self._members(cid) if not self.on_device[e]]
            touched.append(cid)
            if not moved:
                if cid in self._lru:
                    self._lru.move_to_end(cid)
                continue
            for e in moved:
                self._to_device(e)
            group = self._lru.pop(cid, set())
            group.update(moved)
            self._lru[cid] = group
            delta.add(self.ledger.charge(cause, 1, len(moved) * self.model.bytes_per_entry))
        self._evict(protect=set(touched))
        return delta

    def fetch_entries(self, entry_ids: Iterable[int], cause: str, coalesce: bool = False) -> LedgerDelta:
        """Entry-granular fetch.

        Without ``coalesce`` every host-resident entry is its own op. With it,
        entries of the same frame and layer with consecutive token ids share
        one op.
        """
        self._check_cause(cause)
        delta = LedgerDelta()
        host = sorted(
            (e for e in set(entry_ids) if not self.on_device[e]),
            key=lambda e: (self.index.entries[e].frame_id, self.index.entries[e].layer_id, self.index.entries[e].token_id),
        )
        runs: List[List[int]] = []
        for e in host:
            ent = self.index.entries[e]
            if coalesce and runs:
                prev = self.index.entries[runs[-1][-1]]
                if (prev.frame_id, prev.layer_id, prev.token_id + 1) == (ent.frame_id, ent.layer_id, ent.token_id):
                    runs[-1].append(e)
                    continue
            runs.append([e])
        for run in runs:
            for e in run:
                self._to_device(e)
            delta.add(self.ledger.charge(cause, 1, len(run) * self.model.bytes_per_entry))
        if host:
            self._entry_groups += 1
            self._lru[-self._entry_groups] = set(host)
        self._evict(protect=set())
        return delta

    def _evict(self, protect: Set[int]) -> None:
        # least-recently-retrieved groups go first; window entries stay pinned
        while self.device_member_count() > self.model.device_capacity:
            victim = next((k for k in self._lru if k not in protect), None)
            if victim is None:
                return
            for eid in self._lru.pop(victim):
                if self.on_device[eid] and eid not in self.pinned and self.host_copy[eid]:
                    self._to_host(eid)
            self.evictions += 1

    def begin_query(self) -> None:
        self._query_moved = set()

    def end_query(self) -> int:
        """Drop every payload copy brought to the device during the query; returns the count."""
        moved = self._query_moved or set()
        self._query_moved = None
        n = 0
        for eid in moved:
            if self.on_device[eid] and eid not in self.pinned and self.host_copy[eid]:
                self._to_host(eid)
                n += 1
        self._lru.clear()
        return n

    # ------------------------------------------------------------------- audit

    def audit(self) -> dict:
        """Placement report; raises InvariantViolation on any accounting defect."""
        n = len(self.index.entries)
        if len(self.on_device) != n:
            raise InvariantViolation(f"store tracks {len(self.on_device)} entries, index has {n}")
        device = sum(self.on_device)
        if device != len(self.device_set):
            raise InvariantViolation("device set out of sync with residency flags")
        for eid in self.index.buffered:
            if not self.on_device[eid]:
                raise InvariantViolation(f"buffered entry {eid} is not device-resident")
        for eid in self.pinned:
            if not self.on_device[eid]:
                raise InvariantViolation(f"window entry {eid} is not device-resident")
        if self.ledger.replay_io_time() != self.ledger.simulated_io_time:
            raise InvariantViolation("ledger replay does not match running io time")
        for rec in self.index.clusters.values():
            if rec.lazy_split and self.is_device_resident(rec.cluster_id) and not self._query_moved:
                raise InvariantViolation(f"flagged cluster {rec.cluster_id} is fully device-resident")
        members_on_device = self.device_member_count()
        return {
            "device_entries": device,
            "host_entries": n - device,
            "device_member_entries": members_on_device,
            "buffered_entries": len(self.index.buffered),
            "window_entries": len(self.pinned),
            "device_capacity": self.model.device_capacity,
            "headroom": self.model.device_capacity - members_on_device,
            "evictions": self.evictions,
            "ledger": self.ledger.to_dict(),
        }
