# -*- coding: utf-8 -*-
"""
Balayage du nombre de réplicas (et des stratégies) : temps, accélération,
débit et métriques finales pour chaque configuration.
"""
import logging
from typing import Iterable, List, Optional, Sequence

from pydantic import ValidationError as PydanticValidationError
from tqdm import tqdm

from ..errors import DcnnError
from ..models import BenchmarkRow
from ..schemas import EarlyStopConfig, ModelConfig, PipelineConfig, TrainConfig
from .collective import StrategyKind
from .pipeline import DatasetSplits
from .trainer import train

logger = logging.getLogger(__name__)


def _variant(base: TrainConfig, workers: int, strategy: StrategyKind) -> TrainConfig:
    # Revalidation complète : la divisibilité du batch global dépend de N
    data = base.model_dump()
    data.update({
        'n_replicas': workers,
        'strategy': strategy,
        'early_stop': EarlyStopConfig(enabled=False).model_dump(),
    })
    return TrainConfig.model_validate(data)


def _run_one(base: TrainConfig, workers: int, strategy: StrategyKind, model_config: ModelConfig,
             dataset: DatasetSplits, pipeline_config: Optional[PipelineConfig]) -> BenchmarkRow:
    try:
        config = _variant(base, workers, strategy)
        _, report = train(config, model_config, dataset, pipeline_config)
    except PydanticValidationError as e:
        message = '; '.join(err['msg'] for err in e.errors())
    except DcnnError as e:
        message = str(e)
    except Exception as e:
        # Une ligne en échec n'interrompt pas le balayage
        message = f"{type(e).__name__}: {e}"
    else:
        message = None
    if message is not None:
        logger.error(f"❌ Benchmark N={workers} ({strategy.value}): {message}")
        return BenchmarkRow(workers=workers, strategy=strategy.value, error=message)

    sequences = report.steps_per_epoch * config.global_batch_size * len(report.epochs)
    final = report.final
    return BenchmarkRow(
        workers=workers,
        strategy=strategy.value,
        wall_s=report.train_seconds,
        seq_per_s=sequences / report.train_seconds if report.train_seconds > 0 else None,
        final_acc=final.val_accuracy,
        final_auroc=final.val_auroc,
        messages=report.total_messages,
        bytes=report.total_bytes,
        report=report,
    )


def _fill_speedups(rows: List[BenchmarkRow]):
    """Accélération relative au plus petit N réussi de la même stratégie"""
    done = [r for r in rows if not r.error and r.wall_s]
    if not done:
        return
    reference = min(done, key=lambda r: r.workers)
    for row in done:
        row.speedup = reference.wall_s / row.wall_s


def benchmark(config_base: TrainConfig, worker_counts: Sequence[int], dataset: DatasetSplits,
              model_config: ModelConfig, strategies: Optional[Iterable[StrategyKind]] = None,
              pipeline_config: Optional[PipelineConfig] = None, progress: bool = True) -> List[BenchmarkRow]:
    """
    Entraîne une fois par (stratégie, N) avec la même graine, le même jeu
    et le même nombre d'époques (arrêt précoce désactivé). Une configuration
    invalide produit une ligne d'erreur sans interrompre le balayage.
    """
    strategies = list(strategies) if strategies else [config_base.strategy]
    rows: List[BenchmarkRow] = []
    runs = [(s, n) for s in strategies for n in worker_counts]
    for strategy in strategies:
        strategy_rows = []
        for workers in tqdm([n for s, n in runs if s == strategy], desc=f"benchmark {strategy.value}",
                            disable=not progress):
            logger.info(f"⏱️ Benchmark: N={workers}, stratégie {strategy.value}")
            strategy_rows.append(_run_one(config_base, workers, strategy, model_config, dataset, pipeline_config))
        _fill_speedups(strategy_rows)
        rows.extend(strategy_rows)
    return rows
