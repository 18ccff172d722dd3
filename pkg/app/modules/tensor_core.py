# -*- coding: utf-8 -*-
"""
Noyaux numériques denses du CNN : convolution 1D valide, max-pooling,
couche dense et activations, avec leurs passes arrière écrites à la main.

Les tenseurs sont des ``numpy.ndarray`` C-contigus. Chaque noyau accepte
une entrée isolée ou un lot (axe de batch en tête).
"""
import enum
import logging
from typing import Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import DimensionError, EmptyOutputError, InternalConsistencyError

logger = logging.getLogger(__name__)

Tensor = np.ndarray
Scalar = Union[float, np.floating]


class Precision(str, enum.Enum):
    """Précision flottante des calculs"""
    F32 = 'f32'
    F64 = 'f64'

    @property
    def dtype(self):
        return np.float32 if self is Precision.F32 else np.float64

    @classmethod
    def of(cls, value) -> 'Precision':
        if isinstance(value, Precision):
            return value
        if isinstance(value, np.dtype) or isinstance(value, type):
            return cls.F32 if np.dtype(value) == np.float32 else cls.F64
        return cls(str(value))


def as_tensor(data, precision=Precision.F32) -> Tensor:
    """Convertit en tableau C-contigu de la précision demandée"""
    return np.ascontiguousarray(data, dtype=Precision.of(precision).dtype)


def _batched(x: Tensor, rank: int) -> Tuple[Tensor, bool]:
    # Ajoute un axe de batch si besoin ; le booléen indique l'ajout
    if x.ndim == rank:
        return x[np.newaxis], True
    if x.ndim == rank + 1:
        return x, False
    raise DimensionError(f"rang {x.ndim} inattendu (attendu {rank} ou {rank + 1})")


# --- CONVOLUTION ---

def conv1d_forward(inputs: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """
    Convolution 1D valide (pas de 1, sans padding) sur une entrée [L, C]
    ou [B, L, C] avec des filtres [F, W, C]. Sortie [L-W+1, F].

    out[i, f] = bias[f] + sum_j sum_c filters[f, j, c] * input[i + j, c],
    accumulé par j puis c croissants.
    """
    x, squeeze = _batched(inputs, 2)
    if filters.ndim != 3:
        raise DimensionError(f"filtres de rang {filters.ndim}, attendu 3 (F, W, C)")
    n_filters, width, channels = filters.shape
    if x.shape[2] != channels:
        raise DimensionError(
            f"axe canaux: entrée {x.shape[2]} != filtres {channels}"
        )
    if bias.shape != (n_filters,):
        raise DimensionError(f"axe filtres: biais {bias.shape} != ({n_filters},)")
    length = x.shape[1]
    if length < width:
        raise EmptyOutputError(f"longueur {length} < largeur de filtre {width}")

    out_len = length - width + 1
    x = x.astype(filters.dtype, copy=False)
    out = np.empty((x.shape[0], out_len, n_filters), dtype=filters.dtype)
    out[...] = bias
    for j in range(width):
        for c in range(channels):
            out += x[:, j:j + out_len, c, np.newaxis] * filters[:, j, c]
    return out[0] if squeeze else out


def conv1d_backward(inputs: Tensor, filters: Tensor, grad_out: Tensor) -> Tuple[Tensor, Tensor]:
    """Gradients des filtres et du biais (la convolution est la première couche)"""
    x, _ = _batched(inputs, 2)
    g, _ = _batched(grad_out, 2)
    n_filters, width, channels = filters.shape
    expected = (x.shape[0], x.shape[1] - width + 1, n_filters)
    if g.shape != expected:
        raise DimensionError(f"grad_out {g.shape} != sortie de convolution {expected}")

    x = x.astype(filters.dtype, copy=False)
    # fenêtres [B, T, C, W] -> matrice [B*T, C*W]
    windows = sliding_window_view(x, width, axis=1)[:, :expected[1]]
    patches = windows.reshape(-1, channels * width)
    grad = np.tensordot(patches, g.reshape(-1, n_filters), axes=([0], [0]))
    grad_filters = np.ascontiguousarray(
        grad.reshape(channels, width, n_filters).transpose(2, 1, 0)
    )
    grad_bias = g.sum(axis=(0, 1))
    return grad_filters, grad_bias


# --- MAX-POOLING ---

def pooled_length(length: int, window: int, stride: int) -> int:
    return (length - window) // stride + 1


def maxpool1d_forward(inputs: Tensor, window: int, stride: int) -> Tuple[Tensor, Tensor]:
    """
    Max par canal sur des fenêtres glissantes. Retourne la sortie et, pour
    chaque sortie, la ligne d'entrée gagnante (première occurrence en cas
    d'égalité).
    """
    if window < 1 or stride < 1:
        raise DimensionError(f"fenêtre {window} et pas {stride} doivent être >= 1")
    x, squeeze = _batched(inputs, 2)
    length = x.shape[1]
    if length < window:
        raise EmptyOutputError(f"longueur {length} < fenêtre {window}")

    n_out = pooled_length(length, window, stride)
    windows = sliding_window_view(x, window, axis=1)[:, ::stride][:, :n_out]
    local = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, local[..., np.newaxis], axis=-1)[..., 0]
    indices = local + (np.arange(n_out) * stride)[np.newaxis, :, np.newaxis]
    if squeeze:
        return out[0], indices[0]
    return out, indices


def maxpool1d_backward(indices: Tensor, grad_out: Tensor, input_length: int) -> Tensor:
    """Route le gradient vers les positions gagnantes, zéro ailleurs"""
    idx, squeeze = _batched(indices, 2)
    g, _ = _batched(grad_out, 2)
    if idx.shape != g.shape:
        raise DimensionError(f"indices {idx.shape} != grad_out {g.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= input_length):
        raise InternalConsistencyError(
            f"indice d'argmax hors de [0, {input_length}) : {idx.min()}..{idx.max()}"
        )
    batch, _, channels = g.shape
    grad_in = np.zeros((batch, input_length, channels), dtype=g.dtype)
    b_idx = np.arange(batch)[:, np.newaxis, np.newaxis]
    c_idx = np.arange(channels)[np.newaxis, np.newaxis, :]
    np.add.at(grad_in, (b_idx, idx, c_idx), g)
    return grad_in[0] if squeeze else grad_in


# --- COUCHE DENSE ---

def dense_forward(inputs: Tensor, weights: Tensor, bias: Scalar):
    """logit = bias + sum_d weights[d] * input[d] ; entrée [D] ou [B, D]"""
    x, squeeze = _batched(inputs, 1)
    if weights.ndim != 2 or weights.shape[1] != 1 or weights.shape[0] != x.shape[1]:
        raise DimensionError(f"poids {weights.shape} incompatibles avec l'entrée D={x.shape[1]}")
    logits = (x * weights[:, 0]).sum(axis=1) + bias
    return logits[0] if squeeze else logits


def dense_backward(inputs: Tensor, weights: Tensor, grad_out) -> Tuple[Tensor, Scalar, Tensor]:
    """Retourne (grad_weights [D, 1], grad_bias, grad_input)"""
    x, squeeze = _batched(inputs, 1)
    g = np.atleast_1d(np.asarray(grad_out, dtype=weights.dtype))
    if weights.shape != (x.shape[1], 1):
        raise DimensionError(f"poids {weights.shape} != ({x.shape[1]}, 1)")
    if g.shape != (x.shape[0],):
        raise DimensionError(f"grad_out {g.shape} != ({x.shape[0]},)")
    grad_weights = (x.T.astype(weights.dtype, copy=False) @ g)[:, np.newaxis]
    grad_bias = g.sum()
    grad_input = g[:, np.newaxis] * weights[:, 0]
    return grad_weights, grad_bias, grad_input[0] if squeeze else grad_input


# --- ACTIVATIONS ---

def sigmoid(x):
    return expit(x)


def sigmoid_grad(x):
    s = expit(x)
    return s * (1 - s)


def relu(x):
    return np.maximum(x, 0)


def relu_grad(x):
    return (np.asarray(x) > 0).astype(np.result_type(x, np.float32))


def is_finite(x) -> bool:
    return bool(np.all(np.isfinite(x)))
