"""Command-line entry point: ``gen``, ``run``, ``compare``, ``report``.

Config files use the trace dialect: one JSON object per line. Each line may
carry ``"type"``: ``"stream"`` (generator settings), ``"run"`` (run settings,
the default), or ``"mode"`` (a named entry of the comparison matrix, with
``"name"`` and the overrides). Later lines override earlier ones; flags
override the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, Optional, Tuple

from . import harness
from .errors import ClusterKVError, ConfigInfeasible, InvariantViolation, ParseError
from .workload import StreamConfig, gen_stream, save_trace

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


class ConfigError(Exception):
    pass


def read_config(path: Optional[str]) -> Tuple[dict, dict, Dict[str, dict]]:
    stream: dict = {}
    run: dict = {}
    modes: Dict[str, dict] = {}
    if path is None:
        return stream, run, modes
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise ConfigError(f"{path}:{lineno}: expected an object")
        kind = rec.pop("type", "run")
        if kind == "stream":
            stream.update(rec)
        elif kind == "run":
            run.update(rec)
        elif kind == "mode":
            name = rec.pop("name", None)
            if not name:
                raise ConfigError(f"{path}:{lineno}: mode entry needs a name")
            modes[name] = rec
        else:
            raise ConfigError(f"{path}:{lineno}: unknown config type {kind!r}")
    return stream, run, modes


def _opt_int(text: str) -> Optional[int]:
    return None if text.lower() in ("all", "inf", "none") else int(text)


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "on", "yes"):
        return True
    if text.lower() in ("0", "false", "off", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


RUN_FLAGS = {
    # flag: (dest key, type)
    "--mode": ("mode", str),
    "--maintenance": ("maintenance", str),
    "--prefetch": ("prefetch", _bool),
    "--batch-size": ("batch_size", int),
    "--build-frames": ("build_frames", int),
    "--k-v": ("k_v", _opt_int),
    "--k-s": ("k_s", _opt_int),
    "--window": ("window_frames", int),
    "--prefetch-k": ("prefetch_K", _opt_int),
    "--token-budget": ("token_budget", int),
    "--alpha": ("alpha", float),
    "--beta": ("beta", float),
    "--capacity": ("device_capacity", int),
    "--lookup-cost": ("lookup_cost_per_candidate", float),
    "--compute-cost": ("compute_cost_per_token", float),
    "--ingest-overhead": ("ingest_overhead_us", float),
    "--tau-min": ("tau_min", float),
    "--tau-max": ("tau_max", float),
    "--n0": ("N0", float),
    "--visual-floor": ("visual_floor", float),
    "--horizon": ("offload_horizon", int),
    "--seed": ("seed", int),
    "--check-invariants": ("check_invariants", _bool),
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    for flag, (dest, typ) in RUN_FLAGS.items():
        p.add_argument(flag, dest="run_" + dest, type=typ, default=None)


def _run_config(args, file_run: dict) -> harness.RunConfig:
    data = dict(file_run)
    for _flag, (dest, _typ) in RUN_FLAGS.items():
        v = getattr(args, "run_" + dest)
        if v is not None:
            data[dest] = v
    return harness.RunConfig.from_dict(data)


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> int:
    stream, _, _ = read_config(args.config)
    data = dict(stream)
    if args.preset:
        base = dict(StreamConfig.preset(args.preset).to_dict())
        base.update(data)
        data = base
    for key, v in (("n_scenes", args.scenes), ("frames_per_scene", args.frames), ("seed", args.seed),
                   ("n_queries", args.queries), ("d", args.dim), ("L", args.layers),
                   ("tokens_per_frame", args.tokens), ("drift_rate", args.drift)):
        if v is not None:
            data[key] = v
    cfg = StreamConfig.from_dict(data)
    events = gen_stream(cfg)
    save_trace(events, args.output, d=cfg.d, L=cfg.L, tokens_per_frame=cfg.tokens_per_frame, generator=cfg.to_dict())
    n_frames = sum(1 for e in events if not hasattr(e, "ground_truth_frames"))
    print(f"wrote {args.output}: {n_frames} frames, {len(events) - n_frames} queries")
    return EXIT_OK


def cmd_run(args) -> int:
    _, run, _ = read_config(args.config)
    cfg = _run_config(args, run)
    report = harness.run_trace(args.trace, cfg)
    _write(harness.report_json(report) + "\n", args.output)
    return EXIT_OK


def cmd_compare(args) -> int:
    _, run, modes = read_config(args.config)
    base = _run_config(args, run)
    matrix = modes or None
    if args.modes:
        names = args.modes.split(",")
        pool = dict(harness.DEFAULT_MATRIX, **(modes or {}))
        missing = [n for n in names if n not in pool]
        if missing:
            raise ConfigError(f"unknown modes: {missing}; known: {sorted(pool)}")
        matrix = {n: pool[n] for n in names}
    result = harness.compare(args.trace, matrix, base, ref=args.ref)
    csv_text = harness.table_csv(result["table"])
    summary = {"trace_sha256": result["trace_sha256"], "reference": result["reference"], "table": result["table"]}
    if args.output:
        stem = Path(args.output)
        stem.with_suffix(".csv").write_text(csv_text)
        stem.with_suffix(".json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
        if args.keep_reports:
            for name, rep in result["reports"].items():
                stem.with_name(f"{stem.stem}.{name}.json").write_text(harness.report_json(rep) + "\n")
    sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_report(args) -> int:
    report = json.loads(Path(args.report).read_text())
    bad = harness.verify_report(report)
    agg = report["aggregates"]
    for key in ("queries", "mean_recall", "mean_oracle_recall", "mean_ttft_us", "retrieval_io_us",
                "total_ops", "total_bytes", "prefetch_hit_rate", "mean_frames_retrieved", "ingest_time_us"):
        print(f"{key:22s} {agg.get(key)}")
    print(f"{'splits':22s} {agg['splits']}")
    print(f"{'variance_drift':22s} {agg['variance_drift']}")
    if bad:
        print(f"integrity: MISMATCH in {bad}")
        return EXIT_INVARIANT
    print("integrity: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clusterkv", description="Clustered KV cache retrieval simulator")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic trace")
    g.add_argument("--config")
    g.add_argument("--preset", choices=["default", "drift"])
    g.add_argument("--scenes", type=int)
    g.add_argument("--frames", type=int, help="frames per scene")
    g.add_argument("--queries", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--tokens", type=int, help="tokens per frame")
    g.add_argument("--drift", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="replay a trace and emit a JSON report")
    r.add_argument("trace")
    r.add_argument("--config")
    r.add_argument("-o", "--output")
    _add_run_flags(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run a mode matrix and emit a comparison table")
    c.add_argument("trace")
    c.add_argument("--config")
    c.add_argument("--modes", help="comma-separated mode names")
    c.add_argument("--ref", help="reference mode for speedup_vs_ref")
    c.add_argument("--keep-reports", action="store_true")
    c.add_argument("-o", "--output", help="output stem; writes .csv and .json")
    _add_run_flags(c)
    c.set_defaults(func=cmd_compare)

    rep = sub.add_parser("report", help="summarize a report and check its integrity")
    rep.add_argument("report")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, ConfigInfeasible, ValueError, TypeError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClusterKVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
