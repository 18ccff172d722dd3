#!/usr/bin/env python
# -*- coding: utf-8 -*-
import sys
sys.path.append('.')

import math
import multiprocessing
import os

import numpy as np
import pytest

from app.errors import ConfigurationError, ProtocolError, TrainingDivergedError, WorkerError
from app.modules import trainer
from app.modules.benchmark import benchmark
from app.modules.collective import StrategyKind
from app.modules.genome_sim import default_pwm, generate_dataset
from app.modules.pipeline import DatasetSplits, split
from app.modules.trainer import epoch_seed, train
from app.process_manager import rebuild_error
from app.schemas import EarlyStopConfig, ModelConfig, SimConfig, SplitSpec, TrainConfig

RUN_SLOW = bool(os.getenv('DCNN_RUN_SLOW'))


@pytest.fixture(scope='module')
def splits():
    records = generate_dataset(SimConfig(seq_length=100, n_positive=48, n_negative=48, seed=1), default_pwm())
    return split(records, SplitSpec(seed=1))


@pytest.fixture(scope='module')
def model_config():
    return ModelConfig(seq_length=100, n_filters=4, filter_width=10, pool_window=10, pool_stride=10)


def make_config(**overrides):
    values = dict(
        n_replicas=2,
        batch_per_replica=8,
        epochs_max=3,
        seed=3,
        backend='thread',
        recv_timeout=30,
        early_stop=EarlyStopConfig(enabled=False),
    )
    values.update(overrides)
    return TrainConfig(**values)


def test_split_fixture_sizes(splits):
    assert (len(splits.train), len(splits.test), len(splits.validation)) == (67, 9, 20)


def test_epoch_seed_is_deterministic():
    assert epoch_seed(3, 0) == epoch_seed(3, 0)
    assert epoch_seed(3, 0) != epoch_seed(3, 1)


def test_allreduce_training_report(splits, model_config):
    params, report = train(make_config(), model_config, splits)
    assert len(report.epochs) == 3
    assert report.stop_reason == 'max_epochs'
    assert report.steps_per_epoch == 4
    assert report.dropped_per_epoch == 3
    assert report.n_replicas == 2
    assert report.strategy == 'allreduce'
    # 2 N (N - 1) messages par pas
    assert report.total_messages == 4 * 4 * 3
    assert report.total_bytes > 0
    for epoch in report.epochs:
        assert epoch.replica_divergence == 0.0
        assert math.isfinite(epoch.train_loss) and math.isfinite(epoch.val_loss)
        assert 0.0 <= epoch.val_accuracy <= 1.0
        assert epoch.wall_seconds > 0 and epoch.sequences_per_second > 0
    assert report.train_seconds == pytest.approx(sum(e.wall_seconds for e in report.epochs))
    assert params.size == model_config.n_params
    assert report.to_dict()['epochs'][0]['epoch'] == 0


def test_training_is_deterministic(splits, model_config):
    params_a, report_a = train(make_config(), model_config, splits)
    params_b, report_b = train(make_config(), model_config, splits)
    np.testing.assert_array_equal(params_a.flatten(), params_b.flatten())
    for a, b in zip(report_a.epochs, report_b.epochs):
        assert (a.train_loss, a.val_loss, a.val_accuracy, a.val_auroc) == \
               (b.train_loss, b.val_loss, b.val_accuracy, b.val_auroc)


def test_large_batch_equivalence_in_f64(splits, model_config):
    sharded, _ = train(make_config(n_replicas=4, batch_per_replica=8, precision='f64', epochs_max=2),
                       model_config, splits)
    single, _ = train(make_config(n_replicas=1, batch_per_replica=32, precision='f64', epochs_max=2),
                      model_config, splits)
    assert np.max(np.abs(sharded.flatten() - single.flatten())) <= 1e-8


@pytest.fixture(scope='module')
def hundred_step_splits():
    records = generate_dataset(SimConfig(seq_length=200, n_positive=915, n_negative=915, seed=2), default_pwm())
    return split(records, SplitSpec(seed=2))


@pytest.mark.parametrize('precision, tolerance', [('f32', 1e-4), ('f64', 1e-8)])
def test_large_batch_equivalence_after_hundred_steps(hundred_step_splits, precision, tolerance):
    config = ModelConfig(seq_length=200, n_filters=2, filter_width=5, pool_window=5, pool_stride=5)
    common = dict(precision=precision, epochs_max=20, seed=4)
    sharded, report = train(make_config(n_replicas=4, batch_per_replica=64, **common), config, hundred_step_splits)
    single, _ = train(make_config(n_replicas=1, batch_per_replica=256, **common), config, hundred_step_splits)
    assert report.steps_per_epoch * len(report.epochs) == 100
    assert np.max(np.abs(sharded.flatten() - single.flatten())) <= tolerance


def test_single_replica_strategies_share_trajectory(splits, model_config):
    runs = [train(make_config(n_replicas=1, batch_per_replica=16, strategy=s), model_config, splits)
            for s in ('allreduce', 'ps', 'gossip')]
    reference_params, reference_report = runs[0]
    for params, report in runs[1:]:
        np.testing.assert_array_equal(params.flatten(), reference_params.flatten())
        assert [e.train_loss for e in report.epochs] == [e.train_loss for e in reference_report.epochs]
        assert [e.val_loss for e in report.epochs] == [e.val_loss for e in reference_report.epochs]


def test_global_batch_override(splits, model_config):
    _, report = train(make_config(n_replicas=2, global_batch=32, epochs_max=1), model_config, splits)
    assert report.steps_per_epoch == 2
    assert report.dropped_per_epoch == 3


def test_parameter_server_matches_allreduce(splits, model_config):
    ps_params, ps_report = train(make_config(strategy='ps', precision='f64'), model_config, splits)
    ar_params, _ = train(make_config(precision='f64'), model_config, splits)
    np.testing.assert_allclose(ps_params.flatten(), ar_params.flatten(), rtol=0, atol=1e-10)
    # N rapports + N diffusions par pas
    assert ps_report.total_messages == 2 * 2 * 4 * 3
    assert all(e.replica_divergence == 0.0 for e in ps_report.epochs)


def test_gossip_training_ends_with_identical_replicas(splits, model_config):
    params, report = train(make_config(strategy='gossip', n_replicas=3, batch_per_replica=4), model_config,
                           splits)
    assert report.strategy == 'gossip'
    assert len(report.epochs) == 3
    assert report.total_messages > 0
    assert np.all(np.isfinite(params.flatten()))
    assert report.final_divergence == 0.0
    assert report.to_dict()['final_divergence'] == 0.0
    assert max(e.replica_divergence for e in report.epochs) > 0.0


def test_gossip_period_reduces_traffic(splits, model_config):
    _, every_step = train(make_config(strategy='gossip', epochs_max=1), model_config, splits)
    _, every_other = train(make_config(strategy='gossip', epochs_max=1, gossip_period=2), model_config, splits)
    assert every_other.total_messages < every_step.total_messages


def test_per_epoch_aggregation(splits, model_config):
    _, report = train(make_config(aggregate_per_epoch=True), model_config, splits)
    assert report.total_messages == 2 * 2 * 1 * 3
    assert all(e.replica_divergence == 0.0 for e in report.epochs)

    _, ps_report = train(make_config(aggregate_per_epoch=True, strategy='ps'), model_config, splits)
    assert ps_report.total_messages == 2 * 2 * 3


def test_early_stopping_respects_patience(splits, model_config):
    config = make_config(epochs_max=10, early_stop=EarlyStopConfig(enabled=True, patience=1, min_delta=1e9))
    _, report = train(config, model_config, splits)
    assert report.stop_reason == 'converged'
    assert len(report.epochs) == 2


def test_early_stopping_never_runs_past_patience(splits, model_config):
    patience = 2
    config = make_config(epochs_max=8, learning_rate=1e-2,
                         early_stop=EarlyStopConfig(enabled=True, patience=patience, min_delta=0.0))
    _, report = train(config, model_config, splits)
    losses = [e.val_loss for e in report.epochs]
    best_epoch = int(np.argmin(losses))
    assert len(report.epochs) - 1 - best_epoch <= patience
    if report.stop_reason == 'converged':
        assert len(report.epochs) - 1 - best_epoch == patience


def test_divergence_is_reported_with_last_good_epoch(splits, model_config, monkeypatch):
    calls = {'n': 0}
    real_loss = trainer.bce_loss

    def failing_loss(probs, labels):
        calls['n'] += 1
        return float('nan') if calls['n'] > 4 else real_loss(probs, labels)

    monkeypatch.setattr(trainer, 'bce_loss', failing_loss)
    with pytest.raises(TrainingDivergedError) as info:
        train(make_config(n_replicas=1, batch_per_replica=16), model_config, splits)
    assert info.value.last_good_epoch == 0
    assert info.value.report.stop_reason == 'diverged'
    assert len(info.value.report.epochs) == 1


def test_training_set_smaller_than_global_batch(splits, model_config):
    with pytest.raises(ConfigurationError):
        train(make_config(batch_per_replica=64), model_config, splits)


def test_sequence_length_mismatch(splits):
    with pytest.raises(ConfigurationError):
        train(make_config(), ModelConfig(seq_length=120, n_filters=2), splits)


def test_empty_validation_falls_back_to_train_loss(splits, model_config):
    no_validation = DatasetSplits(splits.train, splits.test, [])
    _, report = train(make_config(epochs_max=1), model_config, no_validation)
    assert report.epochs[0].val_loss == report.epochs[0].train_loss
    assert report.epochs[0].val_auroc is None


@pytest.mark.skipif('fork' not in multiprocessing.get_all_start_methods(), reason='fork indisponible')
def test_process_backend_matches_threads(splits, model_config, monkeypatch):
    monkeypatch.setattr(trainer.Config, 'START_METHOD', 'fork')
    process_params, report = train(make_config(backend='process', epochs_max=1), model_config, splits)
    thread_params, _ = train(make_config(epochs_max=1), model_config, splits)
    assert report.total_messages == 4 * 4
    np.testing.assert_allclose(process_params.flatten(), thread_params.flatten(), rtol=1e-6, atol=1e-7)


def test_benchmark_rows_and_speedup(splits, model_config):
    rows = benchmark(make_config(epochs_max=1), [1, 2], splits, model_config,
                     strategies=[StrategyKind.ALLREDUCE, StrategyKind.PARAMETER_SERVER], progress=False)
    assert [(r.workers, r.strategy) for r in rows] == [(1, 'allreduce'), (2, 'allreduce'), (1, 'ps'), (2, 'ps')]
    assert all(not r.error for r in rows)
    assert rows[0].speedup == 1.0 and rows[2].speedup == 1.0
    assert rows[0].messages == 0
    assert rows[1].messages == 2 * 2 * 1 * rows[1].report.steps_per_epoch
    assert all(r.seq_per_s > 0 for r in rows)


def test_benchmark_keeps_going_after_worker_failure(splits, model_config, monkeypatch):
    real_replica = trainer.run_replica

    def failing_replica(rank, plan, *args):
        if plan.train.n_replicas == 2:
            raise MemoryError('plus de mémoire')
        return real_replica(rank, plan, *args)

    monkeypatch.setattr(trainer, 'run_replica', failing_replica)
    rows = benchmark(make_config(epochs_max=1), [1, 2, 4], splits, model_config, progress=False)
    assert [r.workers for r in rows] == [1, 2, 4]
    assert not rows[0].error and not rows[2].error
    assert 'MemoryError' in rows[1].error
    assert rows[1].wall_s is None
    assert rows[2].speedup is not None


def test_benchmark_records_invalid_rows(splits, model_config):
    rows = benchmark(make_config(global_batch=16, epochs_max=1), [1, 3], splits, model_config, progress=False)
    assert not rows[0].error
    assert 'divisible by the number of replicas' in rows[1].error
    assert rows[1].wall_s is None
    assert rows[0].speedup == 1.0


@pytest.mark.skipif(not RUN_SLOW, reason='DCNN_RUN_SLOW non défini')
def test_desk_scale_quality():
    records = generate_dataset(SimConfig(seq_length=500, n_positive=2000, n_negative=2000, seed=0), default_pwm())
    data = split(records, SplitSpec(seed=0))
    config = TrainConfig(n_replicas=1, epochs_max=30, seed=0, backend='thread',
                         early_stop=EarlyStopConfig(enabled=True, patience=5))
    _, report = train(config, ModelConfig(seq_length=500), data)
    assert report.final.val_accuracy >= 0.90
    assert report.final.val_auroc >= 0.95


def test_foreign_worker_errors_are_rebuilt_as_worker_errors():
    error = rebuild_error('MemoryError', 'contexte 1: plus de mémoire')
    assert isinstance(error, WorkerError)
    assert error.exit_code == 1
    assert isinstance(rebuild_error('ProtocolError', 'x'), ProtocolError)
