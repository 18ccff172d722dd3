# -*- coding: utf-8 -*-
"""
Le CNN de détection du motif : conv(15 filtres, largeur 10) -> activation ->
maxpool(35) -> flatten -> dense(1) -> sigmoïde, avec la perte BCE, la
rétropropagation, l'optimiseur Adam et le format de checkpoint.
"""
import logging
import struct
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple, Union

import numpy as np

from ..constants import (
    ACTIVATION_CODES,
    ADAM_DEFAULTS,
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    PROBABILITY_CLAMP,
)
from ..errors import (
    CheckpointError,
    DimensionError,
    InternalConsistencyError,
    TrainingDivergedError,
    ValidationError,
)
from ..schemas import ModelConfig
from .genome_sim import make_rng
from .tensor_core import (
    Precision,
    Tensor,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    is_finite,
    maxpool1d_backward,
    maxpool1d_forward,
    relu,
    relu_grad,
    sigmoid,
)

logger = logging.getLogger(__name__)

PARAM_NAMES = ('conv_filters', 'conv_bias', 'dense_weights', 'dense_bias')
CONFIG_TENSOR = 'model_config'


def param_shapes(config: ModelConfig) -> List[Tuple[int, ...]]:
    """Formes canoniques, dans l'ordre de PARAM_NAMES"""
    return [
        (config.n_filters, config.filter_width, 4),
        (config.n_filters,),
        (config.flat_dim, 1),
        (),
    ]


@dataclass
class ParamSet:
    """Les quatre tenseurs du modèle ; vue plate dans l'ordre de PARAM_NAMES"""
    conv_filters: Tensor
    conv_bias: Tensor
    dense_weights: Tensor
    dense_bias: Tensor

    def tensors(self) -> List[Tensor]:
        return [getattr(self, name) for name in PARAM_NAMES]

    @property
    def dtype(self):
        return self.conv_filters.dtype

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors())

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(t) for t in self.tensors()])

    @classmethod
    def from_flat(cls, vector: np.ndarray, shapes: List[Tuple[int, ...]]):
        vector = np.asarray(vector)
        expected = sum(int(np.prod(s)) for s in shapes)
        if vector.ndim != 1 or vector.size != expected:
            raise DimensionError(f"vecteur plat de longueur {vector.size}, attendu {expected}")
        tensors, offset = [], 0
        for shape in shapes:
            count = int(np.prod(shape))
            tensors.append(vector[offset:offset + count].reshape(shape).copy())
            offset += count
        return cls(*tensors)

    def like(self, vector: np.ndarray):
        """Même classe et mêmes formes, valeurs prises dans ``vector``"""
        return type(self).from_flat(vector, [t.shape for t in self.tensors()])

    def astype(self, dtype):
        return type(self)(*(np.asarray(t, dtype=dtype) for t in self.tensors()))


class ModelParams(ParamSet):
    pass


class Gradients(ParamSet):
    pass


def flatten_grads(grads: Gradients) -> np.ndarray:
    return grads.flatten()


def unflatten(vector: np.ndarray, config: ModelConfig) -> Gradients:
    return Gradients.from_flat(vector, param_shapes(config))


def flatten_params(params: ModelParams) -> np.ndarray:
    return params.flatten()


def unflatten_params(vector: np.ndarray, config: ModelConfig) -> ModelParams:
    return ModelParams.from_flat(vector, param_shapes(config))


def init_params(config: ModelConfig, seed: int, precision=Precision.F32) -> ModelParams:
    """Glorot uniforme par tenseur de poids, biais nuls"""
    rng = make_rng(seed)
    dtype = Precision.of(precision).dtype
    receptive = config.filter_width
    conv_bound = np.sqrt(6.0 / (receptive * 4 + receptive * config.n_filters))
    dense_bound = np.sqrt(6.0 / (config.flat_dim + 1))
    shapes = param_shapes(config)
    return ModelParams(
        conv_filters=rng.uniform(-conv_bound, conv_bound, shapes[0]).astype(dtype),
        conv_bias=np.zeros(shapes[1], dtype=dtype),
        dense_weights=rng.uniform(-dense_bound, dense_bound, shapes[2]).astype(dtype),
        dense_bias=np.zeros(shapes[3], dtype=dtype),
    )


# --- PROPAGATION ---

@dataclass
class ForwardCache:
    params: ModelParams
    inputs: Tensor
    pre_activation: Tensor
    pool_indices: Tensor
    flat: Tensor
    probs: Tensor
    activation: str


def forward(params: ModelParams, inputs: Tensor, config: ModelConfig) -> Tuple[Tensor, ForwardCache]:
    """Probabilités [B] dans (0, 1) et cache pour la rétropropagation"""
    x = inputs[np.newaxis] if inputs.ndim == 2 else inputs
    if x.ndim != 3 or x.shape[1:] != (config.seq_length, 4):
        raise DimensionError(f"entrée {inputs.shape}, attendu [B, {config.seq_length}, 4]")
    pre = conv1d_forward(x, params.conv_filters, params.conv_bias)
    act = relu(pre) if config.conv_activation == 'relu' else pre
    pooled, indices = maxpool1d_forward(act, config.pool_window, config.pool_stride)
    flat = pooled.reshape(pooled.shape[0], -1)
    probs = sigmoid(dense_forward(flat, params.dense_weights, params.dense_bias))
    cache = ForwardCache(params, x, pre, indices, flat, probs, config.conv_activation)
    return probs, cache


def _check_labels(labels: Tensor) -> np.ndarray:
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError('étiquettes hors de {0, 1}')
    return y


def bce_loss(probs: Tensor, labels: Tensor) -> float:
    """Entropie croisée binaire moyenne, p bornée à [1e-7, 1 - 1e-7]"""
    y = _check_labels(labels).astype(np.float64)
    p = np.clip(np.asarray(probs, dtype=np.float64), PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def bce_grad(probs: Tensor, labels: Tensor) -> Tensor:
    """d(perte)/d(p_i) sur p bornée"""
    y = _check_labels(labels)
    p = np.clip(probs, PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP)
    return (p - y) / (p * (1 - p)) / p.shape[0]


def backward(params: ModelParams, cache: ForwardCache, labels: Tensor) -> Gradients:
    """
    Gradients exacts de la BCE moyenne ; sigmoïde et BCE sont fusionnées :
    d(perte)/d(logit_i) = (p_i - y_i) / B.
    """
    if cache.params is not params:
        raise InternalConsistencyError('cache périmé: il provient d\'autres paramètres')
    y = _check_labels(labels).astype(params.dtype, copy=False)
    batch = cache.probs.shape[0]
    if y.shape != (batch,):
        raise DimensionError(f"étiquettes {y.shape}, attendu ({batch},)")

    grad_logits = (cache.probs - y) / batch
    grad_w, grad_b, grad_flat = dense_backward(cache.flat, params.dense_weights, grad_logits)
    grad_pooled = grad_flat.reshape(cache.pool_indices.shape)
    grad_act = maxpool1d_backward(cache.pool_indices, grad_pooled, cache.pre_activation.shape[1])
    if cache.activation == 'relu':
        grad_act = grad_act * relu_grad(cache.pre_activation)
    grad_filters, grad_bias = conv1d_backward(cache.inputs, params.conv_filters, grad_act)
    return Gradients(
        conv_filters=grad_filters.astype(params.dtype, copy=False),
        conv_bias=grad_bias.astype(params.dtype, copy=False),
        dense_weights=grad_w.astype(params.dtype, copy=False),
        dense_bias=np.asarray(grad_b, dtype=params.dtype),
    )


def predict(params: ModelParams, inputs: Tensor, config: ModelConfig, batch_size: int = 256) -> Tensor:
    """Probabilités par paquets, sans conserver de cache"""
    out = [forward(params, inputs[i:i + batch_size], config)[0] for i in range(0, len(inputs), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=params.dtype)


# --- OPTIMISEUR ---

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = ADAM_DEFAULTS['LEARNING_RATE']
    beta1: float = ADAM_DEFAULTS['BETA1']
    beta2: float = ADAM_DEFAULTS['BETA2']
    epsilon: float = ADAM_DEFAULTS['EPSILON']

    @classmethod
    def fresh(cls, size: int, dtype=np.float32, lr: float = ADAM_DEFAULTS['LEARNING_RATE']) -> 'AdamState':
        return cls(np.zeros(size, dtype=dtype), np.zeros(size, dtype=dtype), 0, lr)


def adam_update(theta: np.ndarray, grad: np.ndarray, state: AdamState) -> Tuple[np.ndarray, AdamState]:
    """Un pas d'Adam avec correction de biais sur des vecteurs plats"""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise DimensionError(
            f"longueurs incompatibles: paramètres {theta.shape}, gradient {grad.shape}, état {state.m.shape}"
        )
    if not is_finite(grad):
        raise TrainingDivergedError('gradient non fini')
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * (grad * grad)
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return theta.astype(state.m.dtype, copy=False), replace(state, m=m, v=v, t=t)


def adam_step(params: ModelParams, grads: Union[Gradients, np.ndarray],
              state: AdamState) -> Tuple[ModelParams, AdamState]:
    flat_grad = grads.flatten() if isinstance(grads, ParamSet) else np.asarray(grads)
    theta, state = adam_update(params.flatten(), flat_grad, state)
    return params.like(theta), state


# --- CHECKPOINTS ---

def save_checkpoint(params: ModelParams, path: str, config: Optional[ModelConfig] = None) -> None:
    """
    Format : 'DCNN', version u32 LE, puis par tenseur : longueur du nom (u16),
    nom UTF-8, rang (u8), dimensions (u32), valeurs float32 LE.
    """
    tensors = list(zip(PARAM_NAMES, params.tensors()))
    if config is not None:
        tensors.append((CONFIG_TENSOR, np.array([
            config.seq_length, config.n_filters, config.filter_width,
            config.pool_window, config.pool_stride, config.activation_code,
        ])))
    with open(path, 'wb') as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack('<I', CHECKPOINT_VERSION))
        for name, tensor in tensors:
            encoded = name.encode('utf-8')
            handle.write(struct.pack('<H', len(encoded)) + encoded)
            handle.write(struct.pack('<B', tensor.ndim))
            handle.write(struct.pack(f'<{tensor.ndim}I', *tensor.shape))
            handle.write(np.ascontiguousarray(tensor, dtype='<f4').tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, field: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"checkpoint tronqué (champ {field})", field)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, field: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.data)


def read_checkpoint(path: str) -> Tuple[ModelParams, Optional[ModelConfig]]:
    with open(path, 'rb') as handle:
        reader = _Reader(handle.read())
    magic = reader.data[:len(CHECKPOINT_MAGIC)]
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})", 'magic')
    reader.offset = len(CHECKPOINT_MAGIC)
    (version,) = reader.unpack('<I', 'version')
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: version {version} non supportée", 'version')

    found = {}
    while not reader.exhausted:
        (name_len,) = reader.unpack('<H', 'name_length')
        try:
            name = reader.take(name_len, 'name').decode('utf-8')
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: nom de tenseur non UTF-8", 'name')
        if name not in PARAM_NAMES and name != CONFIG_TENSOR:
            raise CheckpointError(f"{path}: tenseur inconnu {name!r}", 'name')
        (rank,) = reader.unpack('<B', f'{name}.rank')
        shape = reader.unpack(f'<{rank}I', f'{name}.dims')
        count = int(np.prod(shape))
        raw = reader.take(4 * count, f'{name}.data')
        found[name] = np.frombuffer(raw, dtype='<f4').astype(np.float32).reshape(shape)

    missing = [n for n in PARAM_NAMES if n not in found]
    if missing:
        raise CheckpointError(f"{path}: tenseur(s) manquant(s) {missing}", missing[0])

    config = None
    if CONFIG_TENSOR in found:
        values = [int(v) for v in found[CONFIG_TENSOR]]
        activation = {code: name for name, code in ACTIVATION_CODES.items()}.get(values[5])
        try:
            config = ModelConfig(
                seq_length=values[0], n_filters=values[1], filter_width=values[2],
                pool_window=values[3], pool_stride=values[4], conv_activation=activation,
            )
        except (ValueError, IndexError) as e:
            raise CheckpointError(f"{path}: configuration invalide ({e})", CONFIG_TENSOR)

    params = ModelParams(*(found[n] for n in PARAM_NAMES))
    _check_shapes(params, config, path)
    return params, config


def _check_shapes(params: ModelParams, config: Optional[ModelConfig], path: str):
    filters = params.conv_filters
    if filters.ndim != 3 or filters.shape[2] != 4:
        raise CheckpointError(f"{path}: conv_filters de forme {filters.shape}", 'conv_filters')
    if params.conv_bias.shape != (filters.shape[0],):
        raise CheckpointError(f"{path}: conv_bias de forme {params.conv_bias.shape}", 'conv_bias')
    weights = params.dense_weights
    if weights.ndim != 2 or weights.shape[1] != 1 or weights.shape[0] % filters.shape[0]:
        raise CheckpointError(f"{path}: dense_weights de forme {weights.shape}", 'dense_weights')
    if params.dense_bias.shape != ():
        raise CheckpointError(f"{path}: dense_bias de forme {params.dense_bias.shape}", 'dense_bias')
    if config is not None:
        for name, tensor, shape in zip(PARAM_NAMES, params.tensors(), param_shapes(config)):
            if tensor.shape != shape:
                raise CheckpointError(f"{path}: {name} {tensor.shape} != {shape} (model_config)", name)


def load_checkpoint(path: str) -> ModelParams:
    return read_checkpoint(path)[0]
