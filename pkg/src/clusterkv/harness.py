"""Trace-driven runs, reports, and mode comparisons."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigInfeasible, EmptyIndex, InvariantViolation
from .index import BuildConfig, Frame, HierIndex, build_index
from .maintainer import Maintainer, MaintainerConfig, ThresholdConfig
from .retrieval import QueryBundle, RetrievalConfig, Retriever
from .store import CostModel, TieredStore
from .workload import load_trace, read_header

REPORT_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    mode: str = "cluster"  # cluster | token
    maintenance: str = "deferred"  # deferred | eager
    prefetch: bool = True
    batch_size: int = 1  # frames per ingestion dispatch
    build_frames: int = 16
    k_v: Optional[int] = 4
    k_s: Optional[int] = 4
    window_frames: int = 4
    prefetch_K: Optional[int] = 4
    token_budget: int = 128
    alpha: float = 10.0
    beta: float = 0.001
    device_capacity: int = 4096
    lookup_cost_per_candidate: float = 0.02
    compute_cost_per_token: float = 0.5
    ingest_overhead_us: float = 50.0
    ingest_cost_per_token: float = 0.1
    tau_min: float = 0.05
    tau_max: float = 0.3
    N0: float = 32.0
    visual_target: int = 8
    semantic_target: int = 32
    visual_floor: float = 0.7
    offload_horizon: int = 16
    split_depth_cap: int = 4
    seed: int = 0
    check_invariants: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.build_frames < 1:
            raise ValueError("batch_size and build_frames must be >= 1")
        if self.ingest_overhead_us < 0 or self.ingest_cost_per_token < 0:
            raise ValueError("ingestion costs must be nonnegative")
        # surface component validation errors at construction time
        self.retrieval_config()
        self.maintainer_config()
        self.cost_model(1)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(
            k_v=self.k_v,
            k_s=self.k_s,
            window_frames=self.window_frames,
            prefetch_K=self.prefetch_K,
            prefetch_enabled=self.prefetch,
            mode=self.mode,
            token_budget=self.token_budget,
            lookup_cost_per_candidate=self.lookup_cost_per_candidate,
            compute_cost_per_token=self.compute_cost_per_token,
        )

    def maintainer_config(self) -> MaintainerConfig:
        return MaintainerConfig(
            thresholds=ThresholdConfig(self.tau_min, self.tau_max, self.N0),
            mode=self.maintenance,
            split_depth_cap=self.split_depth_cap,
            visual_floor=self.visual_floor,
            window_frames=self.window_frames,
            offload_horizon=self.offload_horizon,
            seed=self.seed,
        )

    def cost_model(self, d: int) -> CostModel:
        return CostModel.for_dim(d, alpha=self.alpha, beta=self.beta, device_capacity=self.device_capacity)

    def build_config(self) -> BuildConfig:
        return BuildConfig(visual_target=self.visual_target, semantic_target=self.semantic_target, seed=self.seed)


class Simulator:
    """Replays a stream: initial batch build, then per-frame maintenance and query retrieval."""

    def __init__(self, d: int, n_layers: int, cfg: RunConfig = RunConfig()):
        self.cfg = cfg
        self.index = HierIndex(d, n_layers)
        self.store = TieredStore(self.index, cfg.cost_model(d))
        self.maintainer = Maintainer(self.index, self.store, cfg.maintainer_config())
        self.retriever = Retriever(self.index, self.store, self.maintainer, cfg.retrieval_config())
        self.results = []
        self.built = False
        self._pending: List[Frame] = []
        self._in_batch = 0
        self.ingest_batches = 0
        self.ingest_tokens = 0
        self.step = 0

    def feed(self, event) -> None:
        if isinstance(event, Frame):
            self._on_frame(event)
        elif isinstance(event, QueryBundle):
            self._on_query(event)
        else:
            raise TypeError(f"unexpected event {type(event).__name__}")
        self.step += 1
        if self.cfg.check_invariants and self.built:
            self.check()

    def check(self) -> None:
        try:
            self.index.check_invariants()
            self.store.audit()
        except InvariantViolation as exc:
            raise InvariantViolation(f"after event {self.step}: {exc}") from exc

    def _count_ingest(self, frame: Frame) -> None:
        if self._in_batch == 0:
            self.ingest_batches += 1
        self._in_batch += 1
        if self._in_batch >= self.cfg.batch_size:
            self._in_batch = 0
        self.ingest_tokens += frame.n_layers * frame.n_tokens

    def _on_frame(self, frame: Frame) -> None:
        self._count_ingest(frame)
        if not self.built:
            self._pending.append(frame)
            if len(self._pending) >= self.cfg.build_frames:
                self._build()
            return
        self.maintainer.ingest_frame(frame)

    def _build(self) -> None:
        build_index(self._pending, self.cfg.build_config(), index=self.index)
        self.store.sync()
        last = self._pending[-1].frame_id
        self.maintainer.after_frame(self.index.frame_partition[last])
        self._pending = []
        self.built = True

    def _on_query(self, query: QueryBundle) -> None:
        # a query flushes the open ingestion batch
        self._in_batch = 0
        if not self.built:
            if not self._pending:
                raise EmptyIndex("query arrived before any frame")
            self._build()
        self.results.append(self.retriever.retrieve(query))

    def finish(self) -> None:
        if not self.built and self._pending:
            self._build()
            if self.cfg.check_invariants:
                self.check()

    @property
    def ingest_time_us(self) -> float:
        return self.ingest_batches * self.cfg.ingest_overhead_us + self.ingest_tokens * self.cfg.ingest_cost_per_token


def aggregate(rows: Sequence[dict]) -> dict:
    """Aggregates computed from per-query rows only."""
    n = len(rows)
    scored = [r for r in rows if r["recall"] is not None]
    needed = sum(r["prefetch_needed"] for r in rows)
    hits = sum(r["prefetch_hits"] for r in rows)
    ttft = [r["latency_us"]["total"] for r in rows]
    return {
        "queries": n,
        "mean_recall": float(np.mean([r["recall"] for r in scored])) if scored else None,
        "mean_oracle_recall": float(np.mean([r["oracle_recall"] for r in scored])) if scored else None,
        "mean_ttft_us": float(np.mean(ttft)) if n else 0.0,
        "retrieval_io_us": float(sum(r["io_time_us"] for r in rows)),
        "retrieval_ops": int(sum(r["ops"] for r in rows)),
        "retrieval_bytes": int(sum(r["bytes"] for r in rows)),
        "mean_frames_retrieved": float(np.mean([r["frames_retrieved"] for r in rows])) if n else 0.0,
        "prefetch_hits": int(hits),
        "prefetch_needed": int(needed),
        "prefetch_hit_rate": (hits / needed) if needed else None,
    }


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_events(events: Sequence, d: int, n_layers: int, cfg: RunConfig = RunConfig()):
    sim = Simulator(d, n_layers, cfg)
    for ev in events:
        sim.feed(ev)
    sim.finish()
    return sim


def make_report(sim: Simulator, trace_sha256: Optional[str], wall_clock: float) -> dict:
    rows = [r.row() for r in sim.results]
    stats = sim.maintainer.stats.to_dict()
    agg = aggregate(rows)
    ledger = sim.store.ledger.to_dict()
    agg.update(
        {
            "total_ops": ledger["ops"],
            "total_bytes": ledger["bytes"],
            "total_io_us": ledger["io_time_us"],
            "ingest_batches": sim.ingest_batches,
            "ingest_time_us": sim.ingest_time_us,
            "splits": {
                "immediate": stats["immediate_splits"],
                "materialized": stats["materialized_splits"],
                "total": stats["total_splits"],
                "deferred_marks": stats["deferred_marks"],
            },
            "variance_drift": sim.maintainer.variance_drift(),
        }
    )
    return {
        "version": REPORT_VERSION,
        "config": sim.cfg.to_dict(),
        "trace_sha256": trace_sha256,
        "stats": stats,
        "ledger": ledger,
        "store": {"evictions": sim.store.evictions, "device_entries": len(sim.store.device_set)},
        "index": {
            "frames": sim.index.n_frames,
            "partitions": len(sim.index.partitions),
            "clusters": len(sim.index.clusters),
            "buffers": len(sim.index.buffer_owner),
        },
        "rows": rows,
        "aggregates": agg,
        "wall_clock_seconds": wall_clock,
    }


def run_trace(path, cfg: RunConfig = RunConfig()) -> dict:
    hdr = read_header(path)
    events = load_trace(path)
    t0 = time.perf_counter()
    sim = run_events(events, hdr["d"], hdr["L"], cfg)
    return make_report(sim, file_digest(path), time.perf_counter() - t0)


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1)


def verify_report(report: dict) -> List[str]:
    """Recompute row-derived aggregates; returns the names of fields that disagree."""
    fresh = aggregate(report["rows"])
    bad = [k for k, v in fresh.items() if report["aggregates"].get(k) != v]
    ledger = report["ledger"]
    if sum(c["ops"] for c in ledger["by_cause"].values()) != ledger["ops"]:
        bad.append("ledger.ops")
    if sum(c["bytes"] for c in ledger["by_cause"].values()) != ledger["bytes"]:
        bad.append("ledger.bytes")
    return bad


# ------------------------------------------------------------------ compare

DEFAULT_MATRIX = {
    "cluster": {},
    "cluster_no_prefetch": {"prefetch": False},
    "cluster_eager": {"maintenance": "eager"},
    "token": {"mode": "token"},
}

TABLE_COLUMNS = (
    "name",
    "mode",
    "maintenance",
    "prefetch",
    "mean_recall",
    "mean_ttft_us",
    "retrieval_io_us",
    "total_ops",
    "total_bytes",
    "prefetch_hit_rate",
    "total_splits",
    "maintenance_ops",
    "mean_frames_retrieved",
    "speedup_vs_ref",
)


def compare(path, matrix: Optional[Dict[str, dict]] = None, base: RunConfig = RunConfig(), ref: Optional[str] = None) -> dict:
    """Run each named override set against ``path`` and join their aggregates.

    ``speedup_vs_ref`` is the reference run's mean TTFT divided by each run's;
    the reference defaults to the token-baseline entry when present, else
    the first entry.
    """
    matrix = dict(DEFAULT_MATRIX if matrix is None else matrix)
    if not matrix:
        raise ValueError("mode matrix is empty")
    digest = file_digest(path)
    reports = {}
    for name, overrides in matrix.items():
        rep = run_trace(path, replace(base, **overrides))
        if rep["trace_sha256"] != digest:
            raise ConfigInfeasible(f"trace changed during comparison (run {name!r})")
        reports[name] = rep
    if ref is None:
        ref = next((n for n, o in matrix.items() if o.get("mode", base.mode) == "token"), next(iter(matrix)))
    if ref not in reports:
        raise ValueError(f"reference run {ref!r} not in matrix")
    ref_ttft = reports[ref]["aggregates"]["mean_ttft_us"]
    rows = []
    for name, rep in reports.items():
        agg, c = rep["aggregates"], rep["config"]
        ttft = agg["mean_ttft_us"]
        rows.append(
            {
                "name": name,
                "mode": c["mode"],
                "maintenance": c["maintenance"],
                "prefetch": c["prefetch"],
                "mean_recall": agg["mean_recall"],
                "mean_ttft_us": ttft,
                "retrieval_io_us": agg["retrieval_io_us"],
                "total_ops": agg["total_ops"],
                "total_bytes": agg["total_bytes"],
                "prefetch_hit_rate": agg["prefetch_hit_rate"],
                "total_splits": agg["splits"]["total"],
                "maintenance_ops": rep["ledger"]["by_cause"]["maintenance"]["ops"],
                "mean_frames_retrieved": agg["mean_frames_retrieved"],
                "speedup_vs_ref": (ref_ttft / ttft) if ttft else None,
            }
        )
    return {"trace_sha256": digest, "reference": ref, "table": rows, "reports": reports}


def table_csv(table: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(TABLE_COLUMNS), lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow(row)
    return buf.getvalue()
