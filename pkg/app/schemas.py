# -*- coding: utf-8 -*-
"""
Modèles de configuration validés (pydantic). Une erreur de validation
nomme toujours le champ fautif.
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import Config
from .constants import (
    ACTIVATION_CODES,
    ADAM_DEFAULTS,
    EARLY_STOP_DEFAULTS,
    MODEL_DEFAULTS,
    PIPELINE_DEFAULTS,
    SIMULATION_DEFAULTS,
    SPLIT_DEFAULTS,
)
from .errors import ConfigurationError
from .modules.collective import StrategyKind
from .modules.tensor_core import Precision, pooled_length


def _seed_field():
    return Field(default=Config.SEED, ge=0, lt=2 ** 64)


def divisibility_message(global_batch: int, n_replicas: int) -> str:
    return (
        f"global batch {global_batch} is invalid: the batch size must be divisible "
        f"by the number of replicas ({n_replicas})"
    )


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', validate_assignment=True)


class SimConfig(_Section):
    seq_length: int = Field(default=SIMULATION_DEFAULTS['SEQ_LENGTH'], ge=1)
    n_positive: int = Field(default=SIMULATION_DEFAULTS['N_POSITIVE'], ge=0)
    n_negative: int = Field(default=SIMULATION_DEFAULTS['N_NEGATIVE'], ge=0)
    cluster_min: int = Field(default=SIMULATION_DEFAULTS['CLUSTER_MIN'], ge=1)
    cluster_max: int = Field(default=SIMULATION_DEFAULTS['CLUSTER_MAX'], ge=1)
    cluster_region_fraction: float = Field(default=SIMULATION_DEFAULTS['CLUSTER_REGION_FRACTION'], gt=0, le=1)
    background_freqs: List[float] = Field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25])
    seed: int = _seed_field()

    @field_validator('background_freqs')
    @classmethod
    def _check_freqs(cls, value):
        if len(value) != 4 or any(f < 0 for f in value) or abs(sum(value) - 1.0) > 1e-6:
            raise ValueError('4 probabilités positives (A, C, G, T) sommant à 1 attendues')
        return value

    @model_validator(mode='after')
    def _check_cluster(self):
        if self.cluster_min > self.cluster_max:
            raise ValueError(f"cluster_min ({self.cluster_min}) > cluster_max ({self.cluster_max})")
        return self

    @property
    def region_length(self) -> int:
        return int(self.cluster_region_fraction * self.seq_length)

    @property
    def region(self):
        """Bornes [début, fin) de la région centrale d'insertion"""
        start = (self.seq_length - self.region_length) // 2
        return start, start + self.region_length

    def check_motif(self, motif_rows: int):
        """Invariants dépendant de la PWM"""
        if self.seq_length < motif_rows:
            raise ConfigurationError(f"seq_length ({self.seq_length}) < longueur du motif ({motif_rows})")
        if self.cluster_max * motif_rows > self.region_length:
            raise ConfigurationError(
                f"cluster_max * motif ({self.cluster_max} x {motif_rows}) dépasse la région "
                f"d'insertion ({self.region_length} pb)"
            )


class SplitSpec(_Section):
    train_fraction: float = Field(default=SPLIT_DEFAULTS['TRAIN'], ge=0)
    test_fraction: float = Field(default=SPLIT_DEFAULTS['TEST'], ge=0)
    validation_fraction: float = Field(default=SPLIT_DEFAULTS['VALIDATION'], ge=0)
    seed: int = _seed_field()

    @model_validator(mode='after')
    def _check_sum(self):
        total = self.train_fraction + self.test_fraction + self.validation_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"train_fraction + test_fraction + validation_fraction = {total}, attendu 1")
        return self


class PipelineConfig(_Section):
    buffer_size: int = Field(default=PIPELINE_DEFAULTS['BUFFER_SIZE'], ge=1)
    shuffle_buffer_size: int = Field(default=PIPELINE_DEFAULTS['SHUFFLE_BUFFER_SIZE'], ge=1)
    batch_per_replica: int = Field(default=PIPELINE_DEFAULTS['BATCH_PER_REPLICA'], ge=1)
    n_replicas: int = Field(default=1, ge=1)

    @property
    def global_batch(self) -> int:
        return self.batch_per_replica * self.n_replicas


class ModelConfig(_Section):
    n_filters: int = Field(default=MODEL_DEFAULTS['N_FILTERS'], ge=1)
    filter_width: int = Field(default=MODEL_DEFAULTS['FILTER_WIDTH'], ge=1)
    pool_window: int = Field(default=MODEL_DEFAULTS['POOL_WINDOW'], ge=1)
    pool_stride: int = Field(default=MODEL_DEFAULTS['POOL_STRIDE'], ge=1)
    conv_activation: Literal['relu', 'linear'] = 'relu'
    seq_length: int = Field(default=SIMULATION_DEFAULTS['SEQ_LENGTH'], ge=1)

    @model_validator(mode='after')
    def _check_lengths(self):
        if self.seq_length < self.filter_width:
            raise ValueError(f"seq_length ({self.seq_length}) < filter_width ({self.filter_width})")
        if self.conv_length < self.pool_window:
            raise ValueError(
                f"longueur après convolution ({self.conv_length}) < pool_window ({self.pool_window})"
            )
        return self

    @property
    def conv_length(self) -> int:
        return self.seq_length - self.filter_width + 1

    @property
    def pooled_length(self) -> int:
        return pooled_length(self.conv_length, self.pool_window, self.pool_stride)

    @property
    def flat_dim(self) -> int:
        return self.pooled_length * self.n_filters

    @property
    def n_params(self) -> int:
        return self.n_filters * self.filter_width * 4 + self.n_filters + self.flat_dim + 1

    @property
    def activation_code(self) -> int:
        return ACTIVATION_CODES[self.conv_activation]


class EarlyStopConfig(_Section):
    enabled: bool = True
    patience: int = Field(default=EARLY_STOP_DEFAULTS['PATIENCE'], ge=0)
    min_delta: float = Field(default=EARLY_STOP_DEFAULTS['MIN_DELTA'], ge=0)


class TrainConfig(_Section):
    n_replicas: int = Field(default=1, ge=1)
    strategy: StrategyKind = StrategyKind.ALLREDUCE
    epochs_max: int = Field(default=50, ge=1)
    batch_per_replica: int = Field(default=PIPELINE_DEFAULTS['BATCH_PER_REPLICA'], ge=1)
    global_batch: Optional[int] = Field(default=None, ge=1)
    seed: int = _seed_field()
    precision: Precision = Precision.F32
    early_stop: EarlyStopConfig = Field(default_factory=EarlyStopConfig)
    gossip_period: int = Field(default=1, ge=1)
    aggregate_per_epoch: bool = False
    learning_rate: float = Field(default=ADAM_DEFAULTS['LEARNING_RATE'], gt=0)
    backend: Literal['process', 'thread'] = Config.BACKEND
    recv_timeout: float = Field(default=Config.RECV_TIMEOUT, gt=0)

    @model_validator(mode='after')
    def _check_batch(self):
        if self.global_batch is not None and self.global_batch % self.n_replicas:
            raise ValueError(divisibility_message(self.global_batch, self.n_replicas))
        return self

    @property
    def per_replica_batch(self) -> int:
        if self.global_batch is not None:
            return self.global_batch // self.n_replicas
        return self.batch_per_replica

    @property
    def global_batch_size(self) -> int:
        return self.per_replica_batch * self.n_replicas

    def pipeline(self, base: Optional[PipelineConfig] = None) -> PipelineConfig:
        """PipelineConfig effective : tailles de buffers de ``base``, batch d'ici"""
        base = base or PipelineConfig()
        return base.model_copy(update={
            'batch_per_replica': self.per_replica_batch,
            'n_replicas': self.n_replicas,
        })


class PathsConfig(_Section):
    pwm: Optional[str] = None
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    out: str = Config.OUTPUT_DIR


class RunConfig(_Section):
    """Configuration complète d'une commande (fichier JSON + options)"""
    sim: SimConfig = Field(default_factory=SimConfig)
    split: SplitSpec = Field(default_factory=SplitSpec)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    def echo(self):
        return self.model_dump(mode='json')
