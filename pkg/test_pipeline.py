#!/usr/bin/env python
# -*- coding: utf-8 -*-
import sys
sys.path.append('.')

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.errors import ConfigurationError, EncodeError, ValidationError
from app.models import SequenceRecord
from app.modules.genome_sim import default_pwm, generate_dataset
from app.modules.pipeline import (
    batched,
    decode,
    dropped_count,
    make_batch,
    make_batches,
    one_hot,
    shard,
    shard_records,
    shuffled_stream,
    split,
)
from app.modules.tensor_core import Precision
from app.schemas import SimConfig, SplitSpec, TrainConfig


def labelled(n_pos, n_neg, length=8):
    rng = np.random.default_rng(0)
    records = []
    for i in range(n_pos + n_neg):
        bases = ''.join(rng.choice(list('ACGT'), size=length))
        label = 1 if i < n_pos else 0
        records.append(SequenceRecord(f"r{i}", bases, label, (0,) if label else ()))
    return records


def test_one_hot_example():
    matrix = one_hot('ACGT')
    np.testing.assert_array_equal(matrix, np.eye(4))
    assert matrix.dtype == np.float32
    assert one_hot('GA', Precision.F64).dtype == np.float64


def test_one_hot_rejects_unknown_base_with_position():
    with pytest.raises(EncodeError) as info:
        one_hot('ACGN')
    assert info.value.position == 3


def test_one_hot_empty_sequence():
    assert one_hot('').shape == (0, 4)


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet='ACGT', max_size=300))
def test_decode_inverts_one_hot(bases):
    assert decode(one_hot(bases)) == bases


def test_decode_rejects_non_one_hot():
    with pytest.raises(ValidationError):
        decode(np.array([[1.0, 1.0, 0.0, 0.0]]))


def test_make_batch_shapes():
    batch = make_batch(labelled(2, 1, length=6))
    assert batch.inputs.shape == (3, 6, 4)
    np.testing.assert_array_equal(batch.labels, [1, 1, 0])
    assert len(batch) == 3


def test_split_default_sizes_and_balance():
    records = labelled(100, 100)
    parts = split(records, SplitSpec(seed=3))
    assert (len(parts.train), len(parts.test), len(parts.validation)) == (140, 20, 40)
    assert sum(r.label for r in parts.train) == 70
    assert sum(r.label for r in parts.test) == 10
    assert sum(r.label for r in parts.validation) == 20
    ids = [r.id for part in parts for r in part]
    assert sorted(ids) == sorted(r.id for r in records)


def test_split_is_deterministic_and_seed_dependent():
    records = labelled(30, 30)
    first = split(records, SplitSpec(seed=1))
    assert split(records, SplitSpec(seed=1)) == first
    assert split(records, SplitSpec(seed=2)).train != first.train


def test_split_edge_cases():
    assert split([], SplitSpec()) == ([], [], [])
    records = labelled(5, 5)
    parts = split(records, SplitSpec(train_fraction=1.0, test_fraction=0.0, validation_fraction=0.0))
    assert len(parts.train) == 10 and parts.test == [] and parts.validation == []


def test_split_spec_fractions_must_sum_to_one():
    with pytest.raises(ValueError):
        SplitSpec(train_fraction=0.5, test_fraction=0.1, validation_fraction=0.1)


def test_shuffled_stream_emits_each_item_once():
    items = list(range(1000))
    out = list(shuffled_stream(items, 100, seed=5))
    assert sorted(out) == items
    assert out != items
    assert list(shuffled_stream(items, 100, seed=5)) == out


def test_shuffle_buffer_of_one_preserves_order():
    assert list(shuffled_stream(range(20), 1, seed=9)) == list(range(20))


def test_shuffled_stream_rejects_empty_buffer():
    with pytest.raises(ConfigurationError):
        list(shuffled_stream(range(3), 0, seed=0))


def test_batched_drops_remainder():
    batches = list(batched(range(10), 4))
    assert batches == [[0, 1, 2, 3], [4, 5, 6, 7]]
    assert dropped_count(10, 4) == 2
    assert list(batched(range(3), 4)) == []


def test_make_batches_encodes_full_batches():
    batches = list(make_batches(labelled(5, 5), 4))
    assert [len(b) for b in batches] == [4, 4]


def test_shard_partitions_batch_in_rank_order():
    batch = make_batch(labelled(4, 4))
    shards = shard(batch, 4)
    assert [len(s) for s in shards] == [2, 2, 2, 2]
    np.testing.assert_array_equal(np.concatenate([s.inputs for s in shards]), batch.inputs)
    np.testing.assert_array_equal(np.concatenate([s.labels for s in shards]), batch.labels)


def test_shard_single_replica_is_identity():
    batch = make_batch(labelled(2, 1))
    assert shard(batch, 1)[0] is batch


def test_shard_rejects_indivisible_batch():
    batch = make_batch(labelled(2, 2))
    with pytest.raises(ConfigurationError) as info:
        shard(batch, 3)
    assert 'divisible by the number of replicas' in str(info.value)


def test_shard_records_matches_shard():
    chunk = labelled(6, 6)
    pieces = [shard_records(chunk, r, 3) for r in range(3)]
    assert [rec for piece in pieces for rec in piece] == chunk


def test_train_config_divisibility():
    assert TrainConfig(n_replicas=3, batch_per_replica=64).global_batch_size == 192
    with pytest.raises(ValueError) as info:
        TrainConfig(n_replicas=3, global_batch=64)
    assert 'divisible by the number of replicas' in str(info.value)
    assert TrainConfig(n_replicas=4, global_batch=256).per_replica_batch == 64


def test_every_record_seen_once_per_epoch():
    records = labelled(20, 20)
    seen = Counter()
    for chunk in batched(shuffled_stream(records, 10, seed=1), 8):
        for rank in range(2):
            seen.update(r.id for r in shard_records(chunk, rank, 2))
    assert sum(seen.values()) == 40
    assert set(seen.values()) == {1}


def test_shuffled_stream_with_full_buffer_is_uniform():
    trials = 100_000
    counts = Counter(tuple(shuffled_stream('abc', 3, seed=s)) for s in range(trials))
    assert len(counts) == 6
    for permutation, count in counts.items():
        assert abs(count / trials - 1 / 6) <= 0.005, permutation


def test_default_dataset_counts_and_split():
    records = generate_dataset(SimConfig(), default_pwm())
    assert len(records) == 20000
    assert sum(r.label for r in records) == 10000
    parts = split(records, SplitSpec(seed=0))
    assert (len(parts.train), len(parts.test), len(parts.validation)) == (14000, 2000, 4000)
    assert sum(r.label for r in parts.train) == 7000
    assert sum(r.label for r in parts.test) == 1000
    assert sum(r.label for r in parts.validation) == 2000
