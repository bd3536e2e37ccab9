"""Synthetic video-like KV streams and the line-delimited JSON trace format.

Each scene has a visual center on the unit sphere and a semantic base
direction; layer ``l``'s semantic center is the base plus a cumulative
per-layer offset, so adjacent layers stay similar. Within a scene the base
drifts a little every frame. Frames carry ``normalize(visual center + noise)``
and per-layer token keys ``normalize(layer center + noise)``; values are
independent random payload. A query picks an already-seen scene and moment,
starts from that moment's layer-0 center, and walks across layers along the
scene's own layer offsets, which makes scenes co-accessed as whole groups of
frames.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import ConfigInfeasible, ParseError
from .index import Frame
from .retrieval import QueryBundle

TRACE_VERSION = 1
MAX_CENTER_TRIES = 1000

Event = Union[Frame, QueryBundle]


@dataclass
class StreamConfig:
    n_scenes: int = 8
    frames_per_scene: Union[int, List[int]] = 16
    tokens_per_frame: int = 8
    d: int = 64
    L: int = 4
    visual_noise: float = 0.03
    semantic_noise: float = 0.045
    drift_rate: float = 0.0
    cross_layer_eps: float = 0.0125
    query_noise: float = 0.02
    n_queries: int = 100
    gt_frames: int = 8
    query_after: int = 16
    max_center_cos: float = 0.5
    revisits: int = 1  # each scene is shown in this many interleaved segments
    seed: int = 0

    def __post_init__(self):
        counts = self.scene_lengths()
        if self.n_scenes < 1 or any(c < 1 for c in counts):
            raise ValueError("n_scenes and frames_per_scene must be >= 1")
        if self.tokens_per_frame < 1 or self.d < 1 or self.L < 1:
            raise ValueError("tokens_per_frame, d and L must be >= 1")
        if self.revisits < 1 or self.revisits > min(counts):
            raise ValueError("revisits must be between 1 and the shortest scene length")
        if self.n_queries < 0 or self.gt_frames < 1 or self.query_after < 0:
            raise ValueError("n_queries must be >= 0, gt_frames >= 1, query_after >= 0")
        for name in ("visual_noise", "semantic_noise", "drift_rate", "cross_layer_eps", "query_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def scene_lengths(self) -> List[int]:
        if isinstance(self.frames_per_scene, int):
            return [self.frames_per_scene] * self.n_scenes
        if len(self.frames_per_scene) != self.n_scenes:
            raise ValueError("frames_per_scene list must have one entry per scene")
        return list(self.frames_per_scene)

    @property
    def n_frames(self) -> int:
        return sum(self.scene_lengths())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StreamConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown stream config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def preset(cls, name: str, **overrides) -> "StreamConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        base = dict(PRESETS[name])
        base.update(overrides)
        return cls(**base)


PRESETS = {
    "default": {},
    # long drifting scenes shown in interleaved segments: returning scenes
    # find their clusters offloaded, so over-threshold inserts hit host data
    "drift": {
        "n_scenes": 4,
        "frames_per_scene": 48,
        "drift_rate": 0.01,
        "revisits": 3,
        "n_queries": 20,
        "query_after": 24,
    },
}


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sample_centers(rng: np.random.Generator, n: int, d: int, max_cos: float) -> np.ndarray:
    """Unit vectors with pairwise cosine below ``max_cos`` (rejection sampling)."""
    out: List[np.ndarray] = []
    for _ in range(n):
        for _try in range(MAX_CENTER_TRIES):
            c = _unit(rng, d)
            if all(float(c @ o) < max_cos for o in out):
                out.append(c)
                break
        else:
            raise ConfigInfeasible(f"could not place {n} centers in d={d} with pairwise cosine < {max_cos}")
    return np.stack(out)


def gen_stream(cfg: StreamConfig) -> List[Event]:
    rng = np.random.default_rng(cfg.seed)
    d, L, T = cfg.d, cfg.L, cfg.tokens_per_frame
    lengths = cfg.scene_lengths()
    visual_centers = sample_centers(rng, cfg.n_scenes, d, cfg.max_center_cos)
    bases = np.stack([_unit(rng, d) for _ in range(cfg.n_scenes)])
    # cumulative layer offsets; offsets[s, 0] = 0
    steps = rng.standard_normal((cfg.n_scenes, L, d))
    steps[:, 0] = 0.0
    offsets = np.cumsum(cfg.cross_layer_eps * steps, axis=1)

    # scene schedule: segments of every scene, interleaved round-robin
    segments = [np.array_split(np.arange(n), cfg.revisits) for n in lengths]
    frame_scene: List[int] = []
    for r in range(cfg.revisits):
        for s in range(cfg.n_scenes):
            frame_scene.extend([s] * len(segments[s][r]))

    # semantic base per frame position; drift accumulates per scene
    current = bases.copy()
    frame_base: List[np.ndarray] = []
    for s in frame_scene:
        frame_base.append(current[s].copy())
        if cfg.drift_rate:
            current[s] = _normalize(current[s] + cfg.drift_rate * rng.standard_normal(d))

    n_frames = len(frame_scene)
    q_slots = _query_slots(cfg, n_frames)

    events: List[Event] = []
    keys_by_frame: List[np.ndarray] = []
    qid = 0
    for f in range(n_frames):
        s = frame_scene[f]
        visual = _normalize(visual_centers[s] + cfg.visual_noise * rng.standard_normal(d))
        centers = _normalize(frame_base[f][None, :] + offsets[s])  # (L, d)
        keys = _normalize(centers[:, None, :] + cfg.semantic_noise * rng.standard_normal((L, T, d)))
        values = rng.standard_normal((L, T, d))
        frame = Frame(f, visual, keys, values, scene=s)
        events.append(frame)
        keys_by_frame.append(frame.keys.astype(np.float64))
        for _ in range(q_slots.count(f)):
            events.append(_make_query(cfg, rng, qid, f, frame_scene, frame_base, steps, keys_by_frame))
            qid += 1
    return events


def _query_slots(cfg: StreamConfig, n_frames: int) -> List[int]:
    """Frame positions after which each query is emitted."""
    if cfg.n_queries == 0:
        return []
    first = min(cfg.query_after, n_frames) - 1
    first = max(first, 0)
    span = n_frames - 1 - first
    return [first + (i * span) // max(1, cfg.n_queries - 1) if cfg.n_queries > 1 else n_frames - 1 for i in range(cfg.n_queries)]


def _make_query(cfg, rng, qid, now, frame_scene, frame_base, steps, keys_by_frame) -> QueryBundle:
    seen = sorted(set(frame_scene[: now + 1]))
    s = int(seen[rng.integers(len(seen))])
    scene_frames = [f for f in range(now + 1) if frame_scene[f] == s]
    moment = scene_frames[int(rng.integers(len(scene_frames)))]
    q = np.empty((cfg.L, cfg.d))
    q[0] = _normalize(_normalize(frame_base[moment]) + cfg.query_noise * rng.standard_normal(cfg.d))
    for layer in range(1, cfg.L):
        q[layer] = _normalize(q[layer - 1] + cfg.cross_layer_eps * steps[s, layer])
    qn = _normalize(q)
    # ground truth: the scene's frames whose keys best match the query
    score = [float(np.mean(np.einsum("ltd,ld->lt", keys_by_frame[f], qn))) for f in scene_frames]
    order = sorted(range(len(scene_frames)), key=lambda i: (-score[i], scene_frames[i]))
    truth = frozenset(scene_frames[i] for i in order[: cfg.gt_frames])
    return QueryBundle(qid, q, truth, scene=s)


# ---------------------------------------------------------------- trace files


def _frame_record(fr: Frame) -> dict:
    return {
        "type": "frame",
        "frame_id": fr.frame_id,
        "scene": fr.scene,
        "visual": fr.visual.astype(np.float64).tolist(),
        "keys": fr.keys.astype(np.float64).tolist(),
        "values": fr.values.astype(np.float64).tolist(),
    }


def _query_record(q: QueryBundle) -> dict:
    return {
        "type": "query",
        "query_id": q.query_id,
        "scene": q.scene,
        "vectors": q.vectors.astype(np.float64).tolist(),
        "ground_truth_frames": None if q.ground_truth_frames is None else sorted(q.ground_truth_frames),
    }


def trace_header(d: int, L: int, tokens_per_frame: int, n_events: int, generator: Optional[dict] = None) -> dict:
    hdr = {"type": "header", "version": TRACE_VERSION, "d": d, "L": L, "tokens_per_frame": tokens_per_frame, "n_events": n_events}
    if generator is not None:
        hdr["generator"] = generator
    return hdr


def save_trace(events: Sequence[Event], path, d: Optional[int] = None, L: Optional[int] = None,
               tokens_per_frame: Optional[int] = None, generator: Optional[dict] = None) -> None:
    """Write a header line followed by one JSON record per event.

    Embeddings are float32 values written as exact decimal doubles, so a
    load reproduces them bit for bit. Shape fields may be omitted when the
    stream holds at least one frame.
    """
    frames = [e for e in events if isinstance(e, Frame)]
    if frames:
        d = frames[0].keys.shape[2] if d is None else d
        L = frames[0].keys.shape[0] if L is None else L
        tokens_per_frame = frames[0].keys.shape[1] if tokens_per_frame is None else tokens_per_frame
    if d is None or L is None or tokens_per_frame is None:
        raise ValueError("d, L and tokens_per_frame are required for a stream without frames")
    lines = [json.dumps(trace_header(d, L, tokens_per_frame, len(events), generator))]
    for ev in events:
        if isinstance(ev, Frame):
            lines.append(json.dumps(_frame_record(ev)))
        elif isinstance(ev, QueryBundle):
            lines.append(json.dumps(_query_record(ev)))
        else:
            raise TypeError(f"cannot serialize event of type {type(ev).__name__}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_event(rec: dict, hdr: dict, lineno: int) -> Event:
    kind = rec.get("type")
    d, L, T = hdr["d"], hdr["L"], hdr["tokens_per_frame"]
    if kind == "frame":
        fr = Frame(int(rec["frame_id"]), rec["visual"], rec["keys"], rec["values"], scene=int(rec.get("scene", -1)))
        if fr.visual.shape != (d,) or fr.keys.shape != (L, T, d) or fr.values.shape != (L, T, d):
            raise ParseError("frame shape does not match header", lineno)
        return fr
    if kind == "query":
        gt = rec.get("ground_truth_frames")
        q = QueryBundle(int(rec["query_id"]), rec["vectors"], None if gt is None else frozenset(gt), scene=int(rec.get("scene", -1)))
        if q.vectors.shape != (L, d):
            raise ParseError("query shape does not match header", lineno)
        return q
    raise ParseError(f"unknown record type {kind!r}", lineno)


def read_header(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    return _parse_header(first)


def _parse_header(line: str) -> dict:
    try:
        hdr = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc.msg}", 1) from exc
    if not isinstance(hdr, dict) or hdr.get("type") != "header":
        raise ParseError("first record must be a header", 1)
    if hdr.get("version") != TRACE_VERSION:
        raise ParseError(f"unsupported trace version {hdr.get('version')!r}", 1)
    for key in ("d", "L", "tokens_per_frame", "n_events"):
        if not isinstance(hdr.get(key), int):
            raise ParseError(f"header field {key!r} missing or not an integer", 1)
    return hdr


def load_trace(path) -> List[Event]:
    """Read a trace; raises ParseError (with line number) and returns nothing on any defect."""
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1)
    hdr = _parse_header(lines[0])
    events: List[Event] = []
    last_frame = None
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
        if not isinstance(rec, dict):
            raise ParseError("record must be an object", lineno)
        try:
            ev = _parse_event(rec, hdr, lineno)
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed record: {exc!r}", lineno) from exc
        if isinstance(ev, Frame):
            if last_frame is not None and ev.frame_id <= last_frame:
                raise ParseError("frame ids must be strictly increasing", lineno)
            last_frame = ev.frame_id
        elif ev.ground_truth_frames and last_frame is not None and max(ev.ground_truth_frames) > last_frame:
            raise ParseError("query references a future frame", lineno)
        events.append(ev)
    if len(events) != hdr["n_events"]:
        raise ParseError(f"expected {hdr['n_events']} events, found {len(events)} (truncated file?)", len(lines) + 1)
    return events
