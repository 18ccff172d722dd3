# -*- coding: utf-8 -*-
"""
Enregistrements du domaine : séquences, PWM, métriques et rapports
"""
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np

from .constants import DNA_ALPHABET, UNDEFINED
from .errors import ValidationError


def _metric(value):
    # Les métriques non définies sont sérialisées avec un marqueur explicite
    return UNDEFINED if value is None else value


@dataclass(frozen=True)
class Pwm:
    """Matrice poids-position, colonnes dans l'ordre A, C, G, T"""
    name: str
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != 4 or matrix.shape[0] < 1:
            raise ValidationError(f"PWM '{self.name}': forme {matrix.shape}, attendu (rows >= 1, 4)")
        if np.any(matrix < 0) or np.any(matrix > 1):
            raise ValidationError(f"PWM '{self.name}': probabilités hors de [0, 1]")
        sums = matrix.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-6)
        if bad.size:
            raise ValidationError(f"PWM '{self.name}': la ligne {int(bad[0])} somme à {sums[bad[0]]:.6f}")
        object.__setattr__(self, 'matrix', matrix)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def consensus(self) -> str:
        return ''.join(DNA_ALPHABET[i] for i in self.matrix.argmax(axis=1))

    def to_dict(self):
        return {'name': self.name, 'rows': self.rows, 'matrix': self.matrix.tolist()}


@dataclass(frozen=True)
class SequenceRecord:
    """Séquence ADN étiquetée ; positions de départ des motifs insérés"""
    id: str
    bases: str
    label: int
    motif_positions: tuple = ()

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"{self.id}: étiquette {self.label} hors de {{0, 1}}")
        if (self.label == 1) != bool(self.motif_positions):
            raise ValidationError(f"{self.id}: label=1 exige des positions de motifs (et réciproquement)")
        object.__setattr__(self, 'motif_positions', tuple(int(p) for p in self.motif_positions))

    def __len__(self):
        return len(self.bases)

    def to_dict(self):
        return {
            'id': self.id,
            'label': self.label,
            'length': len(self.bases),
            'motif_positions': list(self.motif_positions),
        }


@dataclass
class EvaluationResult:
    loss: float
    accuracy: float
    auroc: Optional[float]
    auprc: Optional[float]
    n_samples: int = 0

    def to_dict(self):
        return {
            'loss': self.loss,
            'accuracy': self.accuracy,
            'auroc': _metric(self.auroc),
            'auprc': _metric(self.auprc),
            'n_samples': self.n_samples,
        }


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_auroc: Optional[float]
    val_auprc: Optional[float]
    wall_seconds: float
    sequences_per_second: float
    replica_divergence: float = 0.0

    def to_dict(self):
        data = asdict(self)
        data['val_auroc'] = _metric(self.val_auroc)
        data['val_auprc'] = _metric(self.val_auprc)
        return data


@dataclass
class TrainReport:
    """Rapport d'entraînement (config, courbes, temps, trafic)"""
    config: Dict[str, Any]
    n_replicas: int
    strategy: str
    epochs: List[EpochMetrics] = field(default_factory=list)
    total_wall_seconds: float = 0.0
    train_seconds: float = 0.0
    total_messages: int = 0
    total_bytes: int = 0
    stop_reason: str = ''
    steps_per_epoch: int = 0
    dropped_per_epoch: int = 0
    test_metrics: Optional[EvaluationResult] = None
    final_divergence: float = 0.0
    error: Optional[str] = None

    @property
    def final(self) -> Optional[EpochMetrics]:
        return self.epochs[-1] if self.epochs else None

    def to_dict(self):
        return {
            'config': self.config,
            'n_replicas': self.n_replicas,
            'strategy': self.strategy,
            'epochs': [e.to_dict() for e in self.epochs],
            'total_wall_seconds': self.total_wall_seconds,
            'train_seconds': self.train_seconds,
            'total_messages': self.total_messages,
            'total_bytes': self.total_bytes,
            'stop_reason': self.stop_reason,
            'steps_per_epoch': self.steps_per_epoch,
            'dropped_per_epoch': self.dropped_per_epoch,
            'final_divergence': self.final_divergence,
            'test_metrics': self.test_metrics.to_dict() if self.test_metrics else None,
            'error': self.error,
        }


@dataclass
class BenchmarkRow:
    workers: int
    strategy: str
    wall_s: Optional[float] = None
    speedup: Optional[float] = None
    seq_per_s: Optional[float] = None
    final_acc: Optional[float] = None
    final_auroc: Optional[float] = None
    messages: Optional[int] = None
    bytes: Optional[int] = None
    error: str = ''
    report: Optional[TrainReport] = None

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != 'report'}
        if not self.error:
            data['final_auroc'] = _metric(self.final_auroc)
        return data
