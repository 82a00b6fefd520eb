import numpy as np
import pytest
from scipy import stats

from contraction_mc import streams


def test_root_key_deterministic_and_distinct():
    assert streams.root_key(5) == streams.root_key(5)
    assert streams.root_key(5) != streams.root_key(6)
    with pytest.raises(ValueError):
        streams.root_key(-1)


def test_child_keys_chunk_independent():
    root = streams.root_key(42)
    whole = streams.child_keys(root, 1000)
    idx = np.arange(1000, dtype=np.uint64)
    part = np.concatenate([streams.derive(root, idx[:300]), streams.derive(root, idx[300:])])
    assert np.array_equal(whole, part)
    assert np.unique(whole).size == 1000


def test_uniform_open_interval_and_uniformity():
    u = streams.uniform(streams.child_keys(streams.root_key(1), 200000))
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_normal_moments():
    z = streams.normal(streams.child_keys(streams.root_key(3), 200000))
    assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.01


def test_counters_give_independent_streams():
    keys = streams.child_keys(streams.root_key(9), 50000)
    a, b = streams.uniform(keys, 0), streams.uniform(keys, 1)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02


def test_uniform_index_range():
    idx = streams.uniform_index(streams.child_keys(streams.root_key(2), 10000), 7)
    assert idx.min() == 0 and idx.max() == 6
    assert np.all(np.bincount(idx) > 1300)


def test_generator_reproducible():
    k = streams.root_key(4)
    assert streams.generator(k).random() == streams.generator(k).random()
