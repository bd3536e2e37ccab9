import functools
from pathlib import Path

import pytest

from clusterkv.harness import RunConfig, run_events
from clusterkv.workload import StreamConfig, gen_stream, save_trace

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@functools.lru_cache(maxsize=None)
def stream(preset="default", **overrides):
    cfg = StreamConfig.preset(preset, **overrides)
    return cfg, gen_stream(cfg)


@functools.lru_cache(maxsize=None)
def simulate(preset="default", stream_overrides=(), **run_kw):
    cfg, events = stream(preset, **dict(stream_overrides))
    return run_events(events, cfg.d, cfg.L, RunConfig(**run_kw))


@pytest.fixture(scope="session")
def default_trace(tmp_path_factory) -> Path:
    cfg, events = stream("default")
    path = tmp_path_factory.mktemp("traces") / "default.jsonl"
    save_trace(events, path, generator=cfg.to_dict())
    return path


@pytest.fixture(scope="session")
def drift_trace(tmp_path_factory) -> Path:
    cfg, events = stream("drift")
    path = tmp_path_factory.mktemp("traces") / "drift.jsonl"
    save_trace(events, path, generator=cfg.to_dict())
    return path
