# -*- coding: utf-8 -*-
"""
Boucle d'entraînement data-parallèle synchrone sur N réplicas avec
agrégation interchangeable (all-reduce, serveur de paramètres, gossip),
arrêt précoce et instrumentation des temps.
"""
import contextlib
import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from config import Config
from ..constants import STOP_REASONS
from ..errors import ConfigurationError, ProtocolError, TrainingDivergedError
from ..models import EpochMetrics, SequenceRecord, TrainReport
from ..process_manager import (
    CMD_CONTINUE,
    CMD_STOP,
    MSG_DONE,
    MSG_EPOCH,
    MSG_ERROR,
    ProcessManager,
    rebuild_error,
)
from ..schemas import ModelConfig, PipelineConfig, TrainConfig
from .cnn import (
    AdamState,
    ModelParams,
    adam_step,
    adam_update,
    backward,
    bce_loss,
    forward,
    init_params,
    unflatten_params,
)
from .collective import (
    ParameterServer,
    StrategyKind,
    WorkerId,
    gather_sum,
    gossip_exchange,
    gossip_finalize_exchange,
    max_pairwise_distance,
    push_pull,
    ring_all_reduce,
)
from .evaluation import evaluate
from .pipeline import DatasetSplits, batched, dropped_count, make_batch, shard_records, shuffled_stream

logger = logging.getLogger(__name__)

RESULT_POLL_SECONDS = 1.0


def epoch_seed(seed: int, epoch: int) -> int:
    """Graine du mélange de l'époque ; identique pour tous les réplicas"""
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1, np.uint64)[0])


@dataclass
class ReplicaPlan:
    """Tout ce dont un contexte a besoin ; transmis tel quel aux processus"""
    train: TrainConfig
    model: ModelConfig
    records: List[SequenceRecord]
    shuffle_buffer_size: int
    steps_per_epoch: int

    @property
    def per_epoch(self) -> bool:
        return self.train.aggregate_per_epoch and self.train.strategy is not StrategyKind.GOSSIP


def run_replica(rank: int, plan: ReplicaPlan, transport, control, results):
    """Un réplica : gradients sur son micro-batch, agrégation selon la stratégie"""
    cfg = plan.train
    n = cfg.n_replicas
    worker = WorkerId(rank, n)
    server_rank = n
    params = init_params(plan.model, cfg.seed, cfg.precision)
    state = AdamState.fresh(params.size, params.dtype, cfg.learning_rate)
    local_steps = 0
    gossip_rounds = 0

    for epoch in range(cfg.epochs_max):
        losses = []
        stream = shuffled_stream(plan.records, plan.shuffle_buffer_size, epoch_seed(cfg.seed, epoch))
        for chunk in batched(stream, cfg.global_batch_size):
            batch = make_batch(shard_records(chunk, rank, n), cfg.precision)
            probs, cache = forward(params, batch.inputs, plan.model)
            loss = bce_loss(probs, batch.labels)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"réplica {rank}: perte non finie à l'époque {epoch}")
            losses.append(loss)
            grad = backward(params, cache, batch.labels).flatten()

            if plan.per_epoch:
                params, state = adam_step(params, grad, state)
            elif cfg.strategy is StrategyKind.ALLREDUCE:
                total = ring_all_reduce(grad, worker, transport)
                params, state = adam_step(params, total / n, state)
            elif cfg.strategy is StrategyKind.PARAMETER_SERVER:
                params = params.like(push_pull(grad, worker, server_rank, transport))
            else:
                params, state = adam_step(params, grad, state)
                local_steps += 1
                if n > 1 and local_steps % cfg.gossip_period == 0:
                    params = params.like(gossip_exchange(params.flatten(), worker, gossip_rounds, transport))
                    gossip_rounds += 1

        if plan.per_epoch:
            if cfg.strategy is StrategyKind.ALLREDUCE:
                flat = ring_all_reduce(params.flatten(), worker, transport) / n
            else:
                flat = push_pull(params.flatten(), worker, server_rank, transport)
            params = params.like(flat.astype(params.dtype, copy=False))

        logger.debug(f"Réplica {rank}: époque {epoch} terminée ({len(losses)} pas)")
        results.put((MSG_EPOCH, rank, epoch, float(np.mean(losses)), params.flatten()))
        if control.get() == CMD_STOP:
            break

    if cfg.strategy is StrategyKind.GOSSIP:
        params = params.like(gossip_finalize_exchange(params.flatten(), worker, transport))
    results.put((MSG_DONE, rank, params.flatten()))


def run_server(rank: int, plan: ReplicaPlan, transport, control, results):
    """Contexte serveur de paramètres : détient les paramètres canoniques et l'état Adam"""
    cfg = plan.train
    params = init_params(plan.model, cfg.seed, cfg.precision)
    state = AdamState.fresh(params.size, params.dtype, cfg.learning_rate)
    server = ParameterServer(params.flatten(), cfg.n_replicas, transport)

    def optimizer_step(theta, mean_grad):
        nonlocal state
        theta, state = adam_update(theta, mean_grad.astype(theta.dtype, copy=False), state)
        return theta

    def average(_theta, mean_params):
        return mean_params.astype(params.dtype, copy=False)

    for _epoch in range(cfg.epochs_max):
        if plan.per_epoch:
            server.serve_round(average)
        else:
            server.serve(plan.steps_per_epoch, optimizer_step)
        if control.get() == CMD_STOP:
            break
    results.put((MSG_DONE, rank, server.params))


class _Coordinator:
    """Collecte les rapports des contextes et détecte les pannes"""

    def __init__(self, manager: ProcessManager, handles: Dict[int, object]):
        self.manager = manager
        self.handles = handles

    def collect(self, kind: str, ranks: List[int]) -> Dict[int, tuple]:
        pending, received = set(ranks), {}
        while pending:
            try:
                message = self.manager.next_result(timeout=RESULT_POLL_SECONDS)
            except ProtocolError:
                dead = [r for r in pending if not self.handles[r].is_alive()]
                if dead:
                    try:
                        message = self.manager.next_result(timeout=RESULT_POLL_SECONDS)
                    except ProtocolError:
                        raise ProtocolError(f"contexte(s) {dead} arrêté(s) sans rapport")
                else:
                    continue
            if message[0] == MSG_ERROR:
                _, rank, type_name, text = message
                raise rebuild_error(type_name, f"contexte {rank}: {text}")
            if message[0] == kind and message[1] in pending:
                pending.discard(message[1])
                received[message[1]] = message[2:]
        return received


def _check_dataset(dataset: DatasetSplits, model_config: ModelConfig):
    lengths = {len(r) for part in dataset for r in part}
    if len(lengths) > 1:
        raise ConfigurationError(f"longueurs de séquences hétérogènes: {sorted(lengths)}")
    if lengths and lengths != {model_config.seq_length}:
        raise ConfigurationError(
            f"le modèle attend L={model_config.seq_length}, les séquences ont L={lengths.pop()}"
        )


def train(config: TrainConfig, model_config: ModelConfig, dataset: DatasetSplits,
          pipeline_config: Optional[PipelineConfig] = None) -> Tuple[ModelParams, TrainReport]:
    """
    Entraîne sur ``dataset.train`` avec ``config.n_replicas`` réplicas ;
    validation sur ``dataset.validation`` après chaque époque. Déterministe à
    (graine, config, données, N) fixés.
    """
    _check_dataset(dataset, model_config)
    pipeline = config.pipeline(pipeline_config)
    n = config.n_replicas
    global_batch = config.global_batch_size
    steps = len(dataset.train) // global_batch
    if steps == 0:
        raise ConfigurationError(
            f"jeu d'entraînement ({len(dataset.train)}) plus petit que le batch global ({global_batch})"
        )
    plan = ReplicaPlan(config, model_config, list(dataset.train), pipeline.shuffle_buffer_size, steps)
    report = TrainReport(
        config={'train': config.model_dump(mode='json'), 'model': model_config.model_dump(mode='json')},
        n_replicas=n,
        strategy=config.strategy.value,
        steps_per_epoch=steps,
        dropped_per_epoch=dropped_count(len(dataset.train), global_batch),
    )
    is_ps = config.strategy is StrategyKind.PARAMETER_SERVER
    manager = ProcessManager(config.backend, Config.START_METHOD)
    transport = manager.make_transport(n + (1 if is_ps else 0), config.recv_timeout)
    controls = [manager.make_channel() for _ in range(transport.n_endpoints)]

    logger.info(
        f"🚀 Entraînement: {n} réplica(s), stratégie {config.strategy.value}, batch global "
        f"{global_batch}, {steps} pas/époque, {report.dropped_per_epoch} séquences ignorées/époque"
    )
    pinned = threadpool_limits(limits=1) if config.backend == 'thread' else contextlib.nullcontext()
    started = time.monotonic()
    with pinned:
        handles = {r: manager.spawn(run_replica, r, plan, transport, controls[r]) for r in range(n)}
        if is_ps:
            handles[n] = manager.spawn(run_server, n, plan, transport, controls[n], name='parameter-server')
        coordinator = _Coordinator(manager, handles)
        try:
            final_params = _coordinate(coordinator, controls, plan, dataset, report)
        except Exception as e:
            for control in controls:
                control.put(CMD_STOP)
            manager.shutdown(transport)
            report.total_wall_seconds = time.monotonic() - started
            report.error = str(e)
            _record_traffic(report, transport)
            manager.close(transport)
            if isinstance(e, TrainingDivergedError):
                report.stop_reason = STOP_REASONS['DIVERGED']
                last_good = report.epochs[-1].epoch if report.epochs else None
                raise TrainingDivergedError(str(e), last_good_epoch=last_good, report=report) from e
            raise
        manager.join()
        manager.close(transport)

    report.total_wall_seconds = time.monotonic() - started
    _record_traffic(report, transport)
    final = report.final
    logger.info(
        f"🏁 Fin ({report.stop_reason}) après {len(report.epochs)} époque(s), "
        f"{report.train_seconds:.2f}s d'entraînement, val_acc={final.val_accuracy:.4f}"
    )
    return unflatten_params(final_params, model_config), report


def _record_traffic(report: TrainReport, transport):
    stats = transport.stats()
    report.total_messages = stats.messages
    report.total_bytes = stats.bytes


def _coordinate(coordinator: _Coordinator, controls, plan: ReplicaPlan, dataset: DatasetSplits,
                report: TrainReport) -> np.ndarray:
    cfg = plan.train
    n = cfg.n_replicas
    ranks = list(range(n))
    early = cfg.early_stop
    best_loss, since_best = math.inf, 0
    sequences = plan.steps_per_epoch * cfg.global_batch_size
    epoch_started = time.monotonic()

    for epoch in range(cfg.epochs_max):
        reports = coordinator.collect(MSG_EPOCH, ranks)
        wall = max(time.monotonic() - epoch_started, 1e-9)
        losses = [reports[r][1] for r in ranks]
        vectors = [reports[r][2] for r in ranks]
        train_loss = float(np.mean(losses))
        if not math.isfinite(train_loss):
            raise TrainingDivergedError(f"perte d'entraînement non finie à l'époque {epoch}")
        if cfg.strategy is StrategyKind.GOSSIP:
            current = gather_sum(vectors) / n
        else:
            current = vectors[0]
        params = unflatten_params(current, plan.model)

        if dataset.validation:
            val = evaluate(params, dataset.validation, plan.model)
            val_loss, val_acc, val_auroc, val_auprc = val.loss, val.accuracy, val.auroc, val.auprc
        else:
            val_loss, val_acc, val_auroc, val_auprc = train_loss, math.nan, None, None
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"perte de validation non finie à l'époque {epoch}")

        metrics = EpochMetrics(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            val_accuracy=val_acc,
            val_auroc=val_auroc,
            val_auprc=val_auprc,
            wall_seconds=wall,
            sequences_per_second=sequences / wall,
            replica_divergence=max_pairwise_distance(vectors),
        )
        report.epochs.append(metrics)
        report.train_seconds += wall
        logger.info(
            f"📊 Epoque {epoch}: train_loss={train_loss:.4f} val_loss={val_loss:.4f} "
            f"val_acc={val_acc:.4f} ({wall:.2f}s, {metrics.sequences_per_second:.0f} seq/s)"
        )

        if val_loss < best_loss - early.min_delta:
            best_loss, since_best = val_loss, 0
        else:
            since_best += 1
        converged = early.enabled and since_best > 0 and since_best >= early.patience
        last = epoch == cfg.epochs_max - 1
        if converged or last:
            report.stop_reason = STOP_REASONS['CONVERGED'] if converged else STOP_REASONS['MAX_EPOCHS']
            for control in controls:
                control.put(CMD_STOP)
            break
        for control in controls:
            control.put(CMD_CONTINUE)
        epoch_started = time.monotonic()

    done = coordinator.collect(MSG_DONE, ranks)
    report.final_divergence = max_pairwise_distance([done[r][0] for r in ranks])
    return done[0][0]
