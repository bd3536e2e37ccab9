"""Query-time retrieval over the cluster hierarchy.

Per layer, a query is matched against partition summaries (stage one) and
then against the semantic representatives inside the selected partitions
(stage two). The chosen clusters are fetched, any flagged ones are split now
that their payload is on the device, and the attended context is assembled
from the fetched entries, the global representative timeline, and the local
window.

Simulated latency per layer is ``lookup + transfer + completion + compute``.
With prefetch on, layer ``l`` predicts layer ``l+1``'s clusters from its
own query and moves them while computing, so only the part of that transfer
that outlasts layer ``l``'s compute is exposed. The attended set never depends
on prefetch; only the timing does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from . import vecmath
from .errors import EmptyIndex
from .index import HierIndex
from .maintainer import Maintainer
from .store import LedgerDelta, TieredStore

MODES = ("cluster", "token")


@dataclass(eq=False)
class QueryBundle:
    query_id: int
    vectors: np.ndarray  # (L, d)
    ground_truth_frames: Optional[FrozenSet[int]] = None
    scene: int = -1

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=vecmath.STORE_DTYPE)
        if self.ground_truth_frames is not None:
            self.ground_truth_frames = frozenset(int(f) for f in self.ground_truth_frames)

    @property
    def n_layers(self) -> int:
        return int(self.vectors.shape[0])

    def __eq__(self, other):
        if not isinstance(other, QueryBundle):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and self.scene == other.scene
            and self.ground_truth_frames == other.ground_truth_frames
            and np.array_equal(self.vectors, other.vectors)
        )


@dataclass(frozen=True)
class RetrievalConfig:
    k_v: Optional[int] = 4  # None selects every partition
    k_s: Optional[int] = 4  # None selects every candidate cluster
    window_frames: int = 4
    prefetch_K: Optional[int] = 4  # None uses k_s
    prefetch_enabled: bool = True
    mode: str = "cluster"
    token_budget: int = 128
    lookup_cost_per_candidate: float = 0.02  # µs per representative compared
    compute_cost_per_token: float = 0.5  # µs per attended token

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("k_v", "k_s", "prefetch_K"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be positive")
        if self.token_budget < 1 or self.window_frames < 0:
            raise ValueError("token_budget must be positive and window_frames nonnegative")

    @property
    def prefetch_k(self) -> Optional[int]:
        return self.k_s if self.prefetch_K is None else self.prefetch_K


@dataclass
class LayerTrace:
    layer: int
    selected: List[int]
    oracle: List[int]
    candidates: int
    lookup_us: float = 0.0
    transfer_us: float = 0.0
    completion_us: float = 0.0
    compute_us: float = 0.0
    overlap_us: float = 0.0
    prefetched: List[int] = field(default_factory=list)
    prefetch_hits: int = 0
    ops: int = 0
    bytes: int = 0
    retrieved_frames: FrozenSet[int] = frozenset()
    oracle_frames: FrozenSet[int] = frozenset()
    attended: FrozenSet[int] = frozenset()
    n_reps: int = 0
    window: int = 0

    @property
    def total_us(self) -> float:
        return self.lookup_us + self.transfer_us + self.completion_us + self.compute_us


@dataclass
class RetrievalResult:
    query_id: int
    layers: List[LayerTrace]
    recall: Optional[float]
    oracle_recall: Optional[float]
    transfer_io_us: float = 0.0

    @property
    def ttft_us(self) -> float:
        return sum(t.total_us for t in self.layers)

    @property
    def ops(self) -> int:
        return sum(t.ops for t in self.layers)

    @property
    def bytes(self) -> int:
        return sum(t.bytes for t in self.layers)

    def attended_sets(self) -> List[Tuple[FrozenSet[int], int]]:
        return [(t.attended, t.n_reps) for t in self.layers]

    def row(self) -> dict:
        return {
            "query_id": self.query_id,
            "recall": self.recall,
            "oracle_recall": self.oracle_recall,
            "latency_us": {
                "lookup": sum(t.lookup_us for t in self.layers),
                "transfer": sum(t.transfer_us for t in self.layers),
                "completion": sum(t.completion_us for t in self.layers),
                "compute": sum(t.compute_us for t in self.layers),
                "total": self.ttft_us,
            },
            "io_time_us": self.transfer_io_us,
            "ops": self.ops,
            "bytes": self.bytes,
            "frames_retrieved": len(frozenset().union(*(t.retrieved_frames for t in self.layers))),
            "prefetch_hits": sum(t.prefetch_hits for t in self.layers[1:]),
            "prefetch_needed": sum(len(t.selected) for t in self.layers[1:]) if any(t.prefetched for t in self.layers) else 0,
            "selected": [list(t.selected) for t in self.layers],
        }


def recall_of(frames: FrozenSet[int], truth: Optional[FrozenSet[int]]) -> Optional[float]:
    if not truth:
        return None
    return len(frames & truth) / len(truth)


class Retriever:
    def __init__(self, index: HierIndex, store: TieredStore, maintainer: Maintainer, cfg: RetrievalConfig = RetrievalConfig()):
        self.index = index
        self.store = store
        self.maintainer = maintainer
        self.cfg = cfg

    # ------------------------------------------------------------------ lookup

    def two_stage(self, q, layer: int, k: Optional[int]) -> Tuple[List[int], int]:
        """Cluster ids chosen for ``layer`` and the number of representatives compared."""
        pids = self.index.visual_topk(q, self.cfg.k_v, layer=layer)
        cands = self.index.candidates(layer, pids)
        ranked = self.index.rank_ids(q, layer, cands)
        return (ranked if k is None else ranked[:k]), len(self.index.partitions) + len(cands)

    def oracle_flat_topk(self, q, layer: int, k: Optional[int]) -> List[int]:
        return self.index.flat_topk(q, layer, k)

    def frames_of(self, ids: Sequence[int]) -> FrozenSet[int]:
        return frozenset(self.index.entries[e].frame_id for rid in ids for e in self.index.entries_of(rid))

    def window_entries(self, layer: int) -> List[int]:
        w = self.cfg.window_frames
        frames = self.index.frame_order[-w:] if w else []
        return [e for f in frames for e in self.index.frame_entries[f][layer]]

    # --------------------------------------------------------------- prefetch

    def prefetch_predict(self, q, next_layer: int, K: Optional[int]) -> Tuple[List[int], int, LedgerDelta]:
        """Predict and move ``next_layer``'s clusters using the current layer's query."""
        pred, compared = self.two_stage(q, next_layer, K)
        delta = self.store.fetch(pred, cause="prefetch")
        return pred, compared, delta

    def prefetch_verify_complete(self, q_next, layer: int, prefetched: Sequence[int]) -> Tuple[List[int], int, LedgerDelta]:
        """True selection for ``layer``; anything not prefetched is fetched now."""
        true, compared = self.two_stage(q_next, layer, self.cfg.k_s)
        have = set(prefetched)
        missing = [c for c in true if c not in have]
        delta = self.store.fetch(missing, cause="completion")
        return true, compared, delta

    # -------------------------------------------------------------- baselines

    def token_baseline(self, q, layer: int, token_budget: int) -> Tuple[List[int], LedgerDelta]:
        """Top ``token_budget`` individual keys; host-resident ones move per contiguous token run."""
        eids = self.index.layer_entries(layer)
        if not eids:
            return [], LedgerDelta()
        sims = vecmath.cosine_many(q, self.index.layer_keys(layer))
        chosen = vecmath.rank_desc(sims, eids)[:token_budget]
        delta = self.store.fetch_entries(chosen, cause="retrieval", coalesce=True)
        return chosen, delta

    # ------------------------------------------------------------------ query

    def retrieve(self, query: QueryBundle) -> RetrievalResult:
        if not self.index.partitions:
            raise EmptyIndex("cannot retrieve from an empty index")
        if query.n_layers != self.index.n_layers:
            raise ValueError(f"query has {query.n_layers} layers, index has {self.index.n_layers}")
        self.store.begin_query()
        io_before = self.store.ledger.simulated_io_time
        try:
            if self.cfg.mode == "token":
                layers = self._retrieve_tokens(query)
            else:
                layers = self._retrieve_clusters(query)
        finally:
            io_used = self.store.ledger.simulated_io_time - io_before
            self.store.end_query()
        truth = query.ground_truth_frames
        recalls = [recall_of(t.retrieved_frames, truth) for t in layers]
        oracle = [recall_of(t.oracle_frames, truth) for t in layers]
        return RetrievalResult(
            query_id=query.query_id,
            layers=layers,
            recall=None if truth is None else float(np.mean(recalls)),
            oracle_recall=None if truth is None else float(np.mean(oracle)),
            transfer_io_us=io_used,
        )

    def _context(self, layer: int, fetched: Sequence[int]) -> Tuple[FrozenSet[int], int, int]:
        window = self.window_entries(layer)
        attended = frozenset(fetched) | frozenset(window)
        n_reps = len(self.index.layer_clusters(layer))
        return attended, n_reps, len(window)

    def _retrieve_clusters(self, query: QueryBundle) -> List[LayerTrace]:
        cfg, L = self.cfg, self.index.n_layers
        c_lookup, c_comp = cfg.lookup_cost_per_candidate, cfg.compute_cost_per_token
        traces: List[LayerTrace] = []
        pending: List[int] = []
        pending_time = 0.0
        prev_compute = 0.0
        for layer in range(L):
            q = query.vectors[layer]
            oracle = self.oracle_flat_topk(q, layer, cfg.k_s)
            if cfg.prefetch_enabled and layer > 0:
                sel, compared, delta = self.prefetch_verify_complete(q, layer, pending)
                t = LayerTrace(layer, sel, oracle, compared)
                t.prefetched = list(pending)
                t.prefetch_hits = len(set(sel) & set(pending))
                t.completion_us = delta.time_us
                t.transfer_us = max(0.0, pending_time - prev_compute)
                t.overlap_us = min(pending_time, prev_compute)
            else:
                sel, compared = self.two_stage(q, layer, cfg.k_s)
                delta = self.store.fetch(sel, cause="retrieval")
                t = LayerTrace(layer, sel, oracle, compared)
                t.transfer_us = delta.time_us
            t.ops, t.bytes = delta.ops, delta.bytes
            t.retrieved_frames = self.frames_of(sel)
            t.oracle_frames = self.frames_of(oracle)

            fetched: List[int] = []
            for rid in sel:
                if self.index.is_buffer_id(rid):
                    fetched.extend(self.index.entries_of(rid))
                    continue
                if rid not in self.index.clusters:
                    continue  # buffer already folded into its parent's split
                for cid in self.maintainer.materialize_on_retrieval(rid):
                    fetched.extend(self.index.cluster(cid).members)
            t.attended, t.n_reps, t.window = self._context(layer, fetched)
            t.compute_us = c_comp * (len(t.attended) + t.n_reps)
            t.lookup_us = c_lookup * compared

            if cfg.prefetch_enabled and layer + 1 < L:
                pending, p_compared, p_delta = self.prefetch_predict(q, layer + 1, cfg.prefetch_k)
                pending_time = p_delta.time_us
                t.lookup_us += c_lookup * p_compared
                t.ops += p_delta.ops
                t.bytes += p_delta.bytes
            prev_compute = t.compute_us
            traces.append(t)
        return traces

    def _retrieve_tokens(self, query: QueryBundle) -> List[LayerTrace]:
        cfg = self.cfg
        traces = []
        for layer in range(self.index.n_layers):
            q = query.vectors[layer]
            chosen, delta = self.token_baseline(q, layer, cfg.token_budget)
            oracle = self.oracle_flat_topk(q, layer, cfg.k_s)
            t = LayerTrace(layer, [], oracle, len(self.index.layer_entries(layer)))
            t.transfer_us = delta.time_us
            t.ops, t.bytes = delta.ops, delta.bytes
            t.retrieved_frames = frozenset(self.index.entries[e].frame_id for e in chosen)
            t.oracle_frames = self.frames_of(oracle)
            window = self.window_entries(layer)
            t.attended = frozenset(chosen) | frozenset(window)
            t.window = len(window)
            t.compute_us = cfg.compute_cost_per_token * len(t.attended)
            t.lookup_us = cfg.lookup_cost_per_candidate * t.candidates
            traces.append(t)
        return traces
