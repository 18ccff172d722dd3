# -*- coding: utf-8 -*-
"""
Ecriture des artefacts : rapport JSON, courbes CSV, table de benchmark CSV
et métriques d'évaluation JSON.
"""
import csv
import json
import logging
import math
import os
from typing import Any, Dict, Sequence

from ..constants import UNDEFINED
from ..models import BenchmarkRow, EvaluationResult, TrainReport

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['epoch', 'train_loss', 'val_loss', 'val_acc', 'val_auroc', 'val_auprc', 'wall_s']
BENCHMARK_COLUMNS = ['workers', 'strategy', 'wall_s', 'speedup', 'seq_per_s',
                     'final_acc', 'final_auroc', 'messages', 'bytes', 'error']


def _json_safe(value):
    # NaN/inf ne sont pas du JSON valide
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _cell(value):
    if value is None:
        return ''
    return value


def _prepare(path: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)


def write_json(data: Dict[str, Any], path: str) -> str:
    _prepare(path)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(_json_safe(data), handle, indent=2, ensure_ascii=False)
    logger.info(f"💾 JSON écrit: {path}")
    return path


def write_report(report: TrainReport, path: str, effective_config: Dict[str, Any] = None) -> str:
    """Rapport d'entraînement complet ; la config effective y est recopiée"""
    data = report.to_dict()
    if effective_config is not None:
        data['effective_config'] = effective_config
    return write_json(data, path)


def write_curves(report: TrainReport, path: str) -> str:
    _prepare(path)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(CURVE_COLUMNS)
        for e in report.epochs:
            writer.writerow([
                e.epoch,
                e.train_loss,
                e.val_loss,
                e.val_accuracy,
                UNDEFINED if e.val_auroc is None else e.val_auroc,
                UNDEFINED if e.val_auprc is None else e.val_auprc,
                e.wall_seconds,
            ])
    logger.info(f"📈 Courbes écrites: {path} ({len(report.epochs)} époques)")
    return path


def write_benchmark(rows: Sequence[BenchmarkRow], path: str) -> str:
    _prepare(path)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=BENCHMARK_COLUMNS)
        writer.writeheader()
        for row in rows:
            data = row.to_dict()
            writer.writerow({column: _cell(data.get(column)) for column in BENCHMARK_COLUMNS})
    logger.info(f"📊 Table de benchmark écrite: {path} ({len(rows)} lignes)")
    return path


def write_metrics(result: EvaluationResult, path: str, extra: Dict[str, Any] = None) -> str:
    data = result.to_dict()
    if extra:
        data.update(extra)
    return write_json(data, path)
