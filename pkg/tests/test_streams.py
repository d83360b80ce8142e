import numpy as np

from complift.streams import sample_stream, sample_streams


def test_matches_spawn_children():
    # child i of a fresh SeedSequence is the sequence with spawn_key (i,)
    parent = np.random.SeedSequence(123)
    children = parent.spawn(5)
    for i, child in enumerate(children):
        a = np.random.default_rng(child).standard_normal(8)
        b = sample_stream(123, i).standard_normal(8)
        np.testing.assert_array_equal(a, b)


def test_partition_reconstructs_streams():
    whole = [g.standard_normal(4) for g in sample_streams(9, 0, 10)]
    left = [g.standard_normal(4) for g in sample_streams(9, 0, 6)]
    right = [g.standard_normal(4) for g in sample_streams(9, 6, 10)]
    for a, b in zip(whole, left + right):
        np.testing.assert_array_equal(a, b)


def test_streams_differ_across_indices_and_seeds():
    a = sample_stream(1, 0).standard_normal(16)
    b = sample_stream(1, 1).standard_normal(16)
    c = sample_stream(2, 0).standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
