import math
import struct

import numpy as np
import pytest

from clusterkv.errors import EmptyCluster
from clusterkv.maintainer import ThresholdConfig, online_update, tau

from conftest import simulate
from helpers import add_tokens, frame, single_partition_setup
from oracles import batch_variance, replay_variance


def test_tau_examples():
    cfg = ThresholdConfig(0.1, 0.5, 16)
    assert tau(0, cfg) == 0.5
    assert tau(16, cfg) == pytest.approx(0.1 + 0.4 * math.exp(-1), abs=1e-12)
    assert tau(16, cfg) == pytest.approx(0.24715, abs=1e-4)
    assert tau(1600, cfg) == pytest.approx(0.1, abs=1e-6)
    with pytest.raises(ValueError):
        tau(-1, cfg)
    with pytest.raises(ValueError):
        ThresholdConfig(0.5, 0.1, 16)


def test_tau_strictly_decreasing_and_bounded():
    cfg = ThresholdConfig()
    vals = [tau(n, cfg) for n in range(1001)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert all(cfg.tau_min <= v <= cfg.tau_max for v in vals)


def test_online_update_hand_example():
    rep, var = online_update(1, np.array([1.0, 0.0]), 0.0, np.array([0.0, 1.0]))
    np.testing.assert_allclose(rep, [0.5, 0.5])
    assert var == pytest.approx(0.25)


def test_online_update_at_centroid_does_not_grow():
    rep = np.array([0.6, 0.8])
    _, var = online_update(10, rep, 0.02, rep.copy())
    assert var <= 0.02


def seeded(idx, store, m, pid, key):
    ids = add_tokens(idx, store, pid, [key])
    m.insert(ids[0], pid)
    return idx.owner[ids[0]]


def test_assign_and_update_does_not_commit():
    idx, pid, store, m = single_partition_setup(d=2)
    cid = seeded(idx, store, m, pid, [1.0, 0.0])
    ids = add_tokens(idx, store, pid, [[0.0, 1.0]])
    a = m.assign_and_update(idx.entries[ids[0]].key, 0, pid)
    assert a.cluster_id == cid
    np.testing.assert_allclose(a.rep_new, [0.5, 0.5])
    assert a.var_new == pytest.approx(0.25)
    assert idx.clusters[cid].size == 1


def test_absorb_commits_online_stats():
    idx, pid, store, m = single_partition_setup(d=2)
    cid = seeded(idx, store, m, pid, [1.0, 0.0])
    ids = add_tokens(idx, store, pid, [[0.8, 0.6]])
    ev = m.insert(ids[0], pid)
    assert ev.kind == "absorb"
    rec = idx.clusters[cid]
    assert rec.size == 2
    np.testing.assert_allclose(rec.rep, [0.9, 0.3], rtol=1e-6)


def test_device_resident_over_threshold_splits_now():
    idx, pid, store, m = single_partition_setup(d=2)
    cid = seeded(idx, store, m, pid, [1.0, 0.0])
    ids = add_tokens(idx, store, pid, [[-1.0, 0.0]])
    ev = m.insert(ids[0], pid)
    assert ev.kind == "split" and cid not in idx.clusters
    assert len(ev.new_clusters) == 2
    for c in ev.new_clusters:
        rec = idx.clusters[c]
        assert rec.size == 1 and rec.variance == 0.0
    assert m.stats.immediate_splits == 1
    idx.check_invariants()


def test_host_resident_over_threshold_defers():
    idx, pid, store, m = single_partition_setup(d=2)
    cid = seeded(idx, store, m, pid, [1.0, 0.0])
    store.offload(cid)
    ledger = store.ledger.to_dict()
    reps_before = len(idx.rep_set[0])
    ids = add_tokens(idx, store, pid, [[-1.0, 0.0]])
    ev = m.insert(ids[0], pid)
    rec = idx.clusters[cid]
    assert ev.kind == "defer"
    assert rec.lazy_split and rec.buffer == [ids[0]]
    assert len(idx.rep_set[0]) == reps_before + 1
    assert store.ledger.to_dict() == ledger
    assert m.stats.deferred_marks == 1 and m.stats.maintenance_fetches == 0
    idx.check_invariants()
    store.audit()


def test_host_resident_over_threshold_eager_fetches():
    idx, pid, store, m = single_partition_setup(d=2, mode="eager")
    cid = seeded(idx, store, m, pid, [1.0, 0.0])
    store.offload(cid)
    ids = add_tokens(idx, store, pid, [[-1.0, 0.0]])
    ev = m.insert(ids[0], pid)
    assert ev.kind == "eager_split"
    assert m.stats.maintenance_fetches == 1
    assert store.ledger.by_cause["maintenance"].ops == 1
    assert cid not in idx.clusters


def test_buffered_entry_is_retrievable_and_redirects():
    idx, pid, store, m = single_partition_setup(d=2)
    cid = seeded(idx, store, m, pid, [1.0, 0.0])
    store.offload(cid)
    ids = add_tokens(idx, store, pid, [[-1.0, 0.0]])
    m.insert(ids[0], pid)
    bid = idx.clusters[cid].buffer_id
    assert idx.semantic_topk([-1.0, 0.0], 0, [pid], 1) == [bid]
    # a second key matching the buffer lands in the same buffer
    more = add_tokens(idx, store, pid, [[-0.99, 0.1]])
    assert m.insert(more[0], pid).kind == "defer"
    assert idx.clusters[cid].buffer == [ids[0], more[0]]


def test_materialize_folds_buffer_and_splits():
    idx, pid, store, m = single_partition_setup(d=2, tau=(0.01, 0.05, 32.0))
    rng = np.random.default_rng(0)
    ang = rng.uniform(-0.05, 0.05, 10)
    tight = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    ids = add_tokens(idx, store, pid, tight)
    for e in ids:
        m.insert(e, pid)
    (cid,) = idx.layer_clusters(0)
    store.offload(cid)
    ids = add_tokens(idx, store, pid, [[0.05, 1.0], [-0.05, 1.0]])
    for e in ids:
        assert m.insert(e, pid).kind == "defer"
    store.fetch([cid], cause="retrieval")
    new = m.materialize_on_retrieval(cid)
    assert len(new) == 2
    assert sorted(idx.clusters[c].size for c in new) == [2, 10]
    assert all(not idx.clusters[c].lazy_split and not idx.clusters[c].buffer for c in new)
    assert not idx.buffer_owner
    assert m.stats.materialized_splits == 1
    idx.check_invariants()


def test_materialize_noop_when_not_flagged():
    idx, pid, store, m = single_partition_setup(d=2)
    cid = seeded(idx, store, m, pid, [1.0, 0.0])
    before = idx.to_dict()
    assert m.materialize_on_retrieval(cid) == [cid]
    assert idx.to_dict() == before and m.stats.materialized_splits == 0


def test_materialize_recursion_respects_depth_cap():
    idx, pid, store, m = single_partition_setup(d=8, tau=(1e-6, 2e-6, 1.0))
    rng = np.random.default_rng(1)
    cid = seeded(idx, store, m, pid, rng.standard_normal(8))
    store.offload(cid)
    keys = rng.standard_normal((40, 8))
    ids = add_tokens(idx, store, pid, keys)
    for e in ids:
        m.insert(e, pid)
    store.fetch([cid], cause="retrieval")
    new = m.materialize_on_retrieval(cid)
    assert 2 <= len(new) <= 2 ** m.cfg.split_depth_cap
    assert m.stats.materialized_splits <= 2 ** m.cfg.split_depth_cap - 1
    assert sorted(e for c in new for e in idx.clusters[c].members) == sorted([0] + list(ids))


def absorbing_stream(n, d=16, seed=0):
    """``n`` keys streamed into one never-splitting cluster; returns (index, maintainer, keys)."""
    idx, pid, store, m = single_partition_setup(d=d, tau=(1e6, 2e6, 32.0))
    keys = np.random.default_rng(seed).standard_normal((n, d))
    ids = add_tokens(idx, store, pid, keys)
    for e in ids:
        m.insert(e, pid)
    return idx, m, idx.keys_of(ids)


def test_thousand_inserts_track_batch_mean():
    idx, m, keys = absorbing_stream(1000)
    (cid,) = idx.layer_clusters(0)
    np.testing.assert_allclose(idx.clusters[cid].rep, keys.mean(axis=0), rtol=1e-5, atol=1e-9)
    rep, _ = m.recompute_exact_stats(cid)
    np.testing.assert_allclose(idx.clusters[cid].rep, rep, rtol=1e-5, atol=1e-9)


def test_online_variance_bit_matches_replay():
    idx, m, keys = absorbing_stream(500, seed=4)
    (cid,) = idx.layer_clusters(0)
    _, var = replay_variance(keys.tolist())
    got = idx.clusters[cid].variance
    assert struct.pack("<d", got) == struct.pack("<d", var)
    drift = m.variance_drift()
    assert drift["max_abs"] == pytest.approx(abs(got - batch_variance(keys)))


def test_recompute_exact_stats_singleton_and_empty():
    idx, pid, store, m = single_partition_setup(d=2)
    cid = seeded(idx, store, m, pid, [0.6, 0.8])
    rep, var = m.recompute_exact_stats(cid)
    np.testing.assert_allclose(rep, [0.6, 0.8], rtol=1e-6)
    assert var == 0.0
    idx.clusters[cid].members.clear()
    with pytest.raises(EmptyCluster):
        m.recompute_exact_stats(cid)


def test_place_frame_opens_partition_below_floor():
    idx, pid, store, m = single_partition_setup(d=2)
    m.ingest_frame(frame(0, [1.0, 0.0], [[1.0, 0.0]]))
    assert m.place_frame(frame(1, [0.95, 0.05], [[1.0, 0.0]])) == pid
    other = m.place_frame(frame(1, [0.0, 1.0], [[1.0, 0.0]]))
    assert other != pid and m.stats.new_partitions == 1


def test_offload_cadence_on_partition_change_and_horizon():
    idx, pid, store, m = single_partition_setup(d=2, window=1)
    m.cfg = type(m.cfg)(window_frames=1, offload_horizon=3)
    m.ingest_frame(frame(0, [1.0, 0.0], [[1.0, 0.0]]))
    m.ingest_frame(frame(1, [1.0, 0.0], [[1.0, 0.0]]))
    assert store.device_set == {0, 1}  # young, same partition
    m.ingest_frame(frame(2, [1.0, 0.0], [[1.0, 0.0]]))
    m.ingest_frame(frame(3, [1.0, 0.0], [[1.0, 0.0]]))
    assert store.device_set == {3}  # oldest entry reached the horizon
    m.ingest_frame(frame(4, [0.0, 1.0], [[0.0, 1.0]]))
    assert store.device_set == {4}  # scene change sends the rest away
    store.audit()


def test_stream_without_queries_never_materializes():
    sim = simulate("drift", stream_overrides=(("n_queries", 0),), check_invariants=False)
    assert sim.maintainer.stats.deferred_marks > 0
    assert sim.maintainer.stats.materialized_splits == 0


@pytest.mark.parametrize("preset", ["default", "drift"])
def test_deferred_split_accounting(preset):
    deferred = simulate(preset, check_invariants=False).maintainer.stats
    eager = simulate(preset, maintenance="eager", check_invariants=False).maintainer.stats
    assert deferred.maintenance_fetches == 0
    assert deferred.deferred_marks >= deferred.materialized_splits
    assert deferred.total_splits <= eager.total_splits
    assert deferred.inserts == eager.inserts
