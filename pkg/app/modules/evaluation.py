# -*- coding: utf-8 -*-
"""
Métriques d'évaluation : exactitude, perte, auROC, auPRC
"""
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from ..constants import DECISION_THRESHOLD
from ..errors import ValidationError
from ..models import EvaluationResult, SequenceRecord
from ..schemas import ModelConfig
from .cnn import ModelParams, bce_loss, forward
from .pipeline import batched, make_batch

logger = logging.getLogger(__name__)


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValidationError(f"{s.size} scores pour {y.size} étiquettes")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError('étiquettes hors de {0, 1}')
    return s, y.astype(np.int64)


def accuracy(probs, labels, threshold: float = DECISION_THRESHOLD) -> float:
    """Part de prédictions correctes ; p == seuil est classé négatif"""
    p, y = _as_arrays(probs, labels)
    if p.size == 0:
        raise ValidationError('jeu vide')
    return float(np.mean((p > threshold).astype(np.int64) == y))


def auroc(scores, labels) -> Optional[float]:
    """
    Probabilité qu'une positive soit mieux classée qu'une négative, les
    égalités comptant pour moitié (statistique de Mann-Whitney sur les rangs
    moyens). None si une seule classe est présente.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s, method='average')
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(scores, labels) -> Optional[float]:
    """
    Précision moyenne : somme, sur les préfixes par score décroissant, de
    l'incrément de rappel fois la précision ; les égalités forment un bloc.
    None sans positive.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind='stable')
    s_sorted, y_sorted = s[order], y[order]
    block_ends = np.r_[np.flatnonzero(np.diff(s_sorted)), y.size - 1]
    tp = np.cumsum(y_sorted)[block_ends]
    precision = tp / (block_ends + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def evaluate_probs(probs, labels) -> EvaluationResult:
    p, y = _as_arrays(probs, labels)
    if p.size == 0:
        raise ValidationError('évaluation sur un jeu vide')
    return EvaluationResult(
        loss=bce_loss(p, y),
        accuracy=accuracy(p, y),
        auroc=auroc(p, y),
        auprc=auprc(p, y),
        n_samples=int(p.size),
    )


def evaluate(params: ModelParams, records: Sequence[SequenceRecord], config: ModelConfig,
             batch_size: int = 256) -> EvaluationResult:
    """Perte, exactitude, auROC et auPRC des paramètres sur un jeu de séquences"""
    if not records:
        raise ValidationError('évaluation sur un jeu vide')
    probs, labels = [], []
    chunks = list(batched(records, batch_size))
    remainder = len(records) % batch_size
    if remainder:
        chunks.append(list(records[len(records) - remainder:]))
    for chunk in chunks:
        batch = make_batch(chunk, params.dtype)
        probs.append(forward(params, batch.inputs, config)[0])
        labels.append(batch.labels)
    return evaluate_probs(np.concatenate(probs), np.concatenate(labels))
