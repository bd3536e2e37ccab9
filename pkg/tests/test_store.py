import numpy as np
import pytest

from clusterkv.errors import InvariantViolation, UnknownCluster
from clusterkv.index import BuildConfig, build_index
from clusterkv.store import CostModel, TieredStore, transfer_cost

from helpers import frame


def test_transfer_cost_examples():
    m = CostModel(alpha=10, beta=0.001)
    assert transfer_cost(0, 0, m) == 0
    assert transfer_cost(1, 0, m) == 10
    assert transfer_cost(64, 64 * 1024, m) == pytest.approx(705.536)
    assert transfer_cost(1, 65536, m) == pytest.approx(75.536)
    with pytest.raises(ValueError):
        transfer_cost(-1, 0, m)


def test_bytes_per_entry_from_dim():
    assert CostModel.for_dim(64).bytes_per_entry == 512
    assert CostModel.for_dim(64, precision_bytes=2).bytes_per_entry == 256


def built(n_frames=8, tokens=8, d=8, target=8, seed=0):
    rng = np.random.default_rng(seed)
    frames = [frame(f, np.eye(d)[0], rng.standard_normal((1, tokens, d))) for f in range(n_frames)]
    idx = build_index(frames, BuildConfig(semantic_target=target))
    store = TieredStore(idx, CostModel.for_dim(d))
    store.sync()
    return idx, store


def test_fresh_store_counters():
    idx, store = built()
    rep = store.audit()
    assert rep["ledger"]["ops"] == 0 and rep["ledger"]["bytes"] == 0 and rep["ledger"]["io_time_us"] == 0
    assert rep["evictions"] == 0


def test_offload_charges_one_op_and_is_idempotent():
    idx, store = built()
    cid = max(idx.clusters, key=lambda c: idx.clusters[c].size)
    n = idx.clusters[cid].size
    store.offload(cid)
    assert store.ledger.ops_count == 1
    assert store.ledger.bytes_moved == n * store.model.bytes_per_entry
    store.offload(cid)
    assert store.ledger.ops_count == 1


def test_offload_all_leaves_window_only():
    idx, store = built()
    window = [e for f in idx.frame_order[-2:] for e in idx.frame_entries[f][0]]
    store.set_window(window)
    for cid in list(idx.clusters):
        store.offload(cid)
    assert store.device_set == set(window)
    ids = sorted(idx.clusters)[:2]
    store.fetch(ids, cause="retrieval")
    expect = set(window) | {e for c in ids for e in idx.clusters[c].members}
    assert store.device_set == expect
    assert store.audit()["device_entries"] == len(expect)


def test_fetch_costs():
    idx, store = built()
    for cid in list(idx.clusters):
        store.offload(cid)
    before = store.ledger.ops_count
    ids = sorted(idx.clusters)[:3]
    delta = store.fetch(ids, cause="retrieval")
    assert delta.ops == 3
    assert delta.bytes == sum(idx.clusters[c].size for c in ids) * store.model.bytes_per_entry
    assert store.ledger.ops_count == before + 3
    assert store.fetch(ids, cause="retrieval").ops == 0
    assert store.ledger.by_cause["retrieval"].ops == 3
    with pytest.raises(UnknownCluster):
        store.fetch([10_000], cause="retrieval")
    with pytest.raises(ValueError):
        store.fetch(ids, cause="bogus")


def test_cluster_fetch_saves_alpha_per_extra_entry():
    idx, a = built(seed=3)
    _, b = built(seed=3)
    for cid in list(idx.clusters):
        a.offload(cid)
        b.offload(cid)
    ids = sorted(idx.clusters)[:4]
    entries = [e for c in ids for e in idx.clusters[c].members]
    da = a.fetch(ids, cause="retrieval")
    db = b.fetch_entries(entries, cause="retrieval")
    assert da.bytes == db.bytes
    assert db.time_us - da.time_us == pytest.approx((len(entries) - len(ids)) * a.model.alpha)


def test_coalesced_entry_fetch_merges_token_runs():
    idx, store = built(n_frames=2, tokens=8, target=16)
    for cid in list(idx.clusters):
        store.offload(cid)
    f0 = idx.frame_entries[idx.frame_order[0]][0]
    f1 = idx.frame_entries[idx.frame_order[1]][0]
    picks = [f0[0], f0[1], f0[2], f0[5], f1[0], f1[1]]
    delta = store.fetch_entries(picks, cause="retrieval", coalesce=True)
    assert delta.ops == 3  # {0,1,2} {5} in frame 0; {0,1} in frame 1


def test_lru_eviction_respects_window_and_recency():
    idx, store = built(n_frames=8, tokens=8, target=8)
    model = CostModel.for_dim(8, device_capacity=24)
    store = TieredStore(idx, model)
    store.sync()
    for cid in list(idx.clusters):
        store.offload(cid)
    ids = sorted(idx.clusters, key=lambda c: idx.clusters[c].size)
    sizes = [idx.clusters[c].size for c in ids]
    assert sum(sizes[:3]) <= 24
    order = []
    for c in ids:
        store.fetch([c], cause="retrieval")
        order.append(c)
        assert store.device_member_count() <= 24
    # survivors are the most recently fetched clusters
    resident = [c for c in ids if store.is_device_resident(c)]
    assert resident == order[len(order) - len(resident):]
    assert store.evictions > 0


def test_end_query_releases_for_free():
    idx, store = built()
    for cid in list(idx.clusters):
        store.offload(cid)
    ops = store.ledger.ops_count
    store.begin_query()
    store.fetch(sorted(idx.clusters)[:2], cause="retrieval")
    store.end_query()
    assert not store.device_set
    assert store.ledger.ops_count == ops + 2


def test_audit_replay_and_conservation():
    idx, store = built()
    for cid in sorted(idx.clusters)[:3]:
        store.offload(cid)
    store.fetch(sorted(idx.clusters)[:2], cause="completion")
    rep = store.audit()
    assert rep["device_entries"] + rep["host_entries"] == len(idx.entries)
    assert store.ledger.replay_io_time() == store.ledger.simulated_io_time
    store.ledger.simulated_io_time += 1.0
    with pytest.raises(InvariantViolation):
        store.audit()


def test_ledger_json_shape():
    idx, store = built()
    store.offload(next(iter(idx.clusters)))
    d = store.ledger.to_dict()
    assert set(d) == {"ops", "bytes", "io_time_us", "by_cause"}
    assert {"retrieval", "maintenance", "prefetch", "completion"} <= set(d["by_cause"])
