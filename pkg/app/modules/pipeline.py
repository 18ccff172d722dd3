# -*- coding: utf-8 -*-
"""
Préparation des données : encodage one-hot, découpage train/test/validation,
mélange par buffer, batchs globaux et répartition entre réplicas.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, List, NamedTuple, Sequence, TypeVar

import numpy as np

from ..constants import DNA_ALPHABET
from ..errors import ConfigurationError, EncodeError, ValidationError
from ..models import SequenceRecord
from ..schemas import SplitSpec, divisibility_message
from .genome_sim import make_rng
from .tensor_core import Precision, Tensor

logger = logging.getLogger(__name__)

T = TypeVar('T')

_INVALID = 255
_CODE_TABLE = np.full(256, _INVALID, dtype=np.uint8)
for _code, _base in enumerate(DNA_ALPHABET):
    _CODE_TABLE[ord(_base)] = _code


# --- ENCODAGE ---

def encode_indices(bases: str) -> np.ndarray:
    """Codes 0..3 (A, C, G, T) de chaque base"""
    raw = np.frombuffer(bases.encode('latin-1', errors='replace'), dtype=np.uint8)
    codes = _CODE_TABLE[raw]
    bad = np.flatnonzero(codes == _INVALID)
    if bad.size:
        position = int(bad[0])
        raise EncodeError(f"caractère {bases[position]!r} hors de {DNA_ALPHABET}", position)
    return codes


def one_hot(bases: str, precision=Precision.F32) -> Tensor:
    """Matrice [L, 4] : un seul 1 par ligne, dans la colonne de la base"""
    eye = np.eye(4, dtype=Precision.of(precision).dtype)
    return eye[encode_indices(bases)]


def decode(tensor: Tensor) -> str:
    """Inverse de one_hot"""
    matrix = np.asarray(tensor)
    if matrix.ndim != 2 or matrix.shape[1] != 4:
        raise ValidationError(f"matrice one-hot [L, 4] attendue, forme {matrix.shape}")
    valid = np.all((matrix == 0) | (matrix == 1), axis=1) & (matrix.sum(axis=1) == 1)
    if not np.all(valid):
        row = int(np.flatnonzero(~valid)[0])
        raise ValidationError(f"ligne {row} n'est pas un vecteur one-hot")
    return ''.join(DNA_ALPHABET[i] for i in matrix.argmax(axis=1))


@dataclass(frozen=True)
class Batch:
    inputs: Tensor
    labels: Tensor

    def __len__(self):
        return self.labels.shape[0]


def make_batch(records: Sequence[SequenceRecord], precision=Precision.F32) -> Batch:
    dtype = Precision.of(precision).dtype
    if not records:
        return Batch(np.zeros((0, 0, 4), dtype=dtype), np.zeros(0, dtype=dtype))
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise ValidationError(f"longueurs de séquences hétérogènes dans un batch: {sorted(lengths)}")
    codes = np.stack([encode_indices(r.bases) for r in records])
    inputs = np.eye(4, dtype=dtype)[codes]
    labels = np.array([r.label for r in records], dtype=dtype)
    return Batch(inputs, labels)


# --- DECOUPAGE ---

class DatasetSplits(NamedTuple):
    train: List[SequenceRecord]
    test: List[SequenceRecord]
    validation: List[SequenceRecord]


def split(records: Sequence[SequenceRecord], spec: SplitSpec) -> DatasetSplits:
    """
    Découpage stratifié et déterministe : chaque classe est permutée puis les
    classes sont entrelacées proportionnellement, de sorte que tout segment
    garde l'équilibre des classes à un enregistrement près. Plancher pour
    train et test, le reste pour la validation.
    """
    n = len(records)
    if n == 0:
        return DatasetSplits([], [], [])
    rng = make_rng(spec.seed)
    n_train = math.floor(n * spec.train_fraction + 1e-9)
    n_test = min(math.floor(n * spec.test_fraction + 1e-9), n - n_train)

    keyed = []
    for label in (1, 0):
        members = [r for r in records if r.label == label]
        order = rng.permutation(len(members))
        for rank, index in enumerate(order):
            keyed.append(((rank + 0.5) / len(members), -label, members[index]))
    keyed.sort(key=lambda item: (item[0], item[1]))
    ordered = [item[2] for item in keyed]

    parts = (ordered[:n_train], ordered[n_train:n_train + n_test], ordered[n_train + n_test:])
    train, test, validation = ([part[i] for i in rng.permutation(len(part))] for part in parts)
    logger.info(f"✂️ Découpage: {len(train)} train / {len(test)} test / {len(validation)} validation")
    return DatasetSplits(train, test, validation)


# --- FLUX ---

def shuffled_stream(items: Iterable[T], shuffle_buffer_size: int, seed: int) -> Iterator[T]:
    """
    Mélange en flux : on remplit un buffer, puis chaque nouvel élément
    remplace un élément tiré uniformément, qui est émis. Chaque élément est
    émis exactement une fois.
    """
    if shuffle_buffer_size < 1:
        raise ConfigurationError(f"shuffle_buffer_size doit être >= 1, reçu {shuffle_buffer_size}")
    rng = make_rng(seed)
    buffer: List[T] = []
    for item in items:
        if len(buffer) < shuffle_buffer_size:
            buffer.append(item)
            continue
        j = int(rng.integers(len(buffer)))
        yield buffer[j]
        buffer[j] = item
    while buffer:
        j = int(rng.integers(len(buffer)))
        buffer[j], buffer[-1] = buffer[-1], buffer[j]
        yield buffer.pop()


def batched(stream: Iterable[T], size: int) -> Iterator[List[T]]:
    """Groupes pleins de ``size`` éléments ; le groupe final incomplet est abandonné"""
    chunk: List[T] = []
    for item in stream:
        chunk.append(item)
        if len(chunk) == size:
            yield chunk
            chunk = []


def make_batches(stream: Iterable[SequenceRecord], global_batch: int,
                 precision=Precision.F32) -> Iterator[Batch]:
    for chunk in batched(stream, global_batch):
        yield make_batch(chunk, precision)


def dropped_count(n_records: int, global_batch: int) -> int:
    return n_records % global_batch


def _check_divisible(size: int, n_replicas: int):
    if n_replicas < 1 or size % n_replicas:
        raise ConfigurationError(divisibility_message(size, n_replicas))


def shard(batch: Batch, n_replicas: int) -> List[Batch]:
    """Micro-batchs contigus de taille égale, dans l'ordre des rangs"""
    _check_divisible(len(batch), n_replicas)
    if n_replicas == 1:
        return [batch]
    size = len(batch) // n_replicas
    return [
        Batch(batch.inputs[r * size:(r + 1) * size], batch.labels[r * size:(r + 1) * size])
        for r in range(n_replicas)
    ]


def shard_records(chunk: Sequence[T], rank: int, n_replicas: int) -> Sequence[T]:
    """Part du réplica ``rank`` d'un batch global non encodé (même découpe que shard)"""
    _check_divisible(len(chunk), n_replicas)
    size = len(chunk) // n_replicas
    return chunk[rank * size:(rank + 1) * size]
