import numpy as np

from clusterkv.index import Frame, HierIndex
from clusterkv.maintainer import Maintainer, MaintainerConfig, ThresholdConfig
from clusterkv.store import CostModel, TieredStore


def frame(fid, visual, keys, values=None, scene=-1):
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim == 2:
        keys = keys[None]
    values = np.zeros_like(keys) if values is None else values
    return Frame(fid, np.asarray(visual, dtype=np.float64), keys, values, scene=scene)


def single_partition_setup(d=4, n_layers=1, mode="deferred", tau=(0.05, 0.3, 32.0), window=0, capacity=4096):
    """Empty index with one partition, a store, and a maintainer wired together."""
    idx = HierIndex(d, n_layers)
    pid = idx.new_partition().partition_id
    store = TieredStore(idx, CostModel.for_dim(d, device_capacity=capacity))
    cfg = MaintainerConfig(thresholds=ThresholdConfig(*tau), mode=mode, window_frames=window)
    return idx, pid, store, Maintainer(idx, store, cfg)


def add_tokens(idx, store, pid, keys, fid=None, visual=None):
    """Append one frame of ``keys`` (layer 0) to ``pid``; returns the entry ids."""
    fid = idx.n_frames if fid is None else fid
    keys = np.asarray(keys, dtype=np.float64)
    visual = np.eye(idx.d)[0] if visual is None else visual
    ids = idx.add_frame(frame(fid, visual, keys.reshape(idx.n_layers, -1, idx.d)), pid)
    store.sync()
    return ids[0] if idx.n_layers == 1 else ids
