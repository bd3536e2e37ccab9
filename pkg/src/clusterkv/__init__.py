"""Clustered, tiered KV cache retrieval for streaming video-language inference (simulator)."""

from .clustering import KMeansConfig, KMeansResult, spherical_kmeans, split_two
from .errors import (
    BadLayer,
    ClusterKVError,
    ConfigInfeasible,
    DegenerateVector,
    DimMismatch,
    EmptyCluster,
    EmptyIndex,
    EmptyInput,
    InvariantViolation,
    ParseError,
    TooFewPoints,
    UnknownCluster,
)
from .harness import RunConfig, Simulator, compare, run_events, run_trace, verify_report
from .index import BuildConfig, Frame, HierIndex, build_index
from .maintainer import Maintainer, MaintainerConfig, ThresholdConfig, online_update, tau
from .retrieval import QueryBundle, RetrievalConfig, Retriever
from .store import CostModel, TieredStore, TransferLedger, transfer_cost
from .workload import StreamConfig, gen_stream, load_trace, save_trace

__version__ = "0.1.0"

__all__ = [
    "BadLayer", "BuildConfig", "ClusterKVError", "ConfigInfeasible", "CostModel", "DegenerateVector",
    "DimMismatch", "EmptyCluster", "EmptyIndex", "EmptyInput", "Frame", "HierIndex", "InvariantViolation",
    "KMeansConfig", "KMeansResult", "Maintainer", "MaintainerConfig", "ParseError", "QueryBundle",
    "RetrievalConfig", "Retriever", "RunConfig", "Simulator", "StreamConfig", "ThresholdConfig",
    "TieredStore", "TooFewPoints", "TransferLedger", "UnknownCluster", "build_index", "compare",
    "gen_stream", "load_trace", "online_update", "run_events", "run_trace", "save_trace",
    "spherical_kmeans", "split_two", "tau", "transfer_cost", "verify_report",
]
