# hargnn/layers.py
"""
Differentiable building blocks of the classifiers.

All functions take `TensorValue` inputs with a leading batch axis
(B x t x features); 2-D inputs are treated as a single graph.
"""

import logging
import math
from typing import List, Sequence, Tuple, Union

import numpy as np

from . import numerics as nx
from .errors import DimensionError
from .numerics import TensorValue

logger = logging.getLogger(__name__)

AdjacencyLike = Union[np.ndarray, TensorValue]


def gcn_layer(norm_adjacency: AdjacencyLike, h: TensorValue, w: TensorValue,
              activation: bool = True) -> TensorValue:
    """relu(Â H W) applied to every graph of the batch."""
    a = nx.as_tensor(norm_adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or h.ndim < 2 or h.shape[-2] != a.shape[1]:
        raise DimensionError("gcn_layer", a.shape, h.shape)
    if w.ndim != 2 or h.shape[-1] != w.shape[0]:
        raise DimensionError("gcn_layer", h.shape, w.shape)
    out = nx.matmul(nx.matmul(a, h), w)
    return nx.relu(out) if activation else out


def gcn_stack(norm_adjacency: AdjacencyLike, h: TensorValue, weights: Sequence[TensorValue]) -> TensorValue:
    for w in weights:
        h = gcn_layer(norm_adjacency, h, w)
    return h


def gcn_encoder(norm_adjacency: AdjacencyLike, sensor_features: Sequence[TensorValue],
                stacks: Sequence[Sequence[TensorValue]]) -> List[TensorValue]:
    """Runs sensor i's features through its own private GCN stack."""
    if len(sensor_features) != len(stacks):
        raise DimensionError("gcn_encoder", (len(sensor_features),), (len(stacks),),
                             detail="sensor count differs from parameter stacks")
    return [gcn_stack(norm_adjacency, h, ws) for h, ws in zip(sensor_features, stacks)]


def inter_sensor_attention(sensor_hidden: Sequence[TensorValue], w_q: TensorValue, w_k: TensorValue,
                           w_v: TensorValue, repeats: int = 1) -> Tuple[TensorValue, TensorValue]:
    """
    Scaled dot-product attention across sensors at every timestamp.

    Returns (H̄ of shape B x t x n x d̂, attention maps B x t x n x n). With
    repeats > 1 the same projections are re-applied to the previous output
    and the maps of the last application are returned.
    """
    if not sensor_hidden:
        raise DimensionError("inter_sensor_attention", (), detail="no sensors")
    first = sensor_hidden[0].shape
    for h in sensor_hidden[1:]:
        if h.shape != first:
            raise DimensionError("inter_sensor_attention", first, h.shape)
    d_hat = first[-1]
    for w in (w_q, w_k, w_v):
        if w.shape != (d_hat, d_hat):
            raise DimensionError("inter_sensor_attention", first, w.shape)
    x = nx.stack(sensor_hidden, axis=-2)
    maps = None
    for _ in range(max(1, repeats)):
        q = nx.matmul(x, w_q)
        k = nx.matmul(x, w_k)
        v = nx.matmul(x, w_v)
        scores = nx.scale(nx.matmul(q, nx.transpose(k)), 1.0 / math.sqrt(d_hat))
        maps = nx.softmax(scores, axis=-1)
        x = nx.matmul(maps, v)
    return x, maps


def pool_and_flatten(hbar: TensorValue) -> TensorValue:
    """Mean over the timestamp axis of B x t x n x d̂, flattened to B x (n*d̂)."""
    if hbar.ndim != 4:
        raise DimensionError("pool_and_flatten", hbar.shape, detail="expected B x t x n x d")
    pooled = nx.mean_axis(hbar, axis=1)
    b, n, d = pooled.shape
    return nx.reshape(pooled, (b, n * d))


def linear(x: TensorValue, w: TensorValue, bias: TensorValue) -> TensorValue:
    if x.shape[-1] != w.shape[0] or bias.shape != (w.shape[1],):
        raise DimensionError("linear", x.shape, w.shape, bias.shape)
    return nx.add(nx.matmul(x, w), bias)


def probabilities(logits: TensorValue) -> np.ndarray:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify_head(hbar: TensorValue, w_out: TensorValue, b_out: TensorValue) -> Tuple[TensorValue, np.ndarray]:
    """Pool over timestamps, flatten, affine to class logits; also returns softmax probabilities."""
    logits = linear(pool_and_flatten(hbar), w_out, b_out)
    return logits, probabilities(logits)


def lstm_forward(sequence: TensorValue, w_x: TensorValue, w_h: TensorValue, bias: TensorValue) -> TensorValue:
    """
    Single-layer LSTM from a zero state; returns every step's hidden state.

    Gate blocks along the 4h axis are ordered input, forget, output, candidate.
    Accepts B x t x d (returns B x t x h) or t x d (returns t x h).
    """
    squeeze = sequence.ndim == 2
    if squeeze:
        sequence = nx.reshape(sequence, (1,) + sequence.shape)
    b, t, d = sequence.shape
    h_size = w_h.shape[0]
    if w_x.shape != (d, 4 * h_size) or w_h.shape != (h_size, 4 * h_size) or bias.shape != (4 * h_size,):
        raise DimensionError("lstm_forward", sequence.shape, w_x.shape, w_h.shape, bias.shape)
    h = nx.TensorValue(np.zeros((b, h_size)))
    c = nx.TensorValue(np.zeros((b, h_size)))
    hiddens = []
    for step in range(t):
        x_t = nx.take(sequence, step, axis=1)
        gates = nx.add(nx.add(nx.matmul(x_t, w_x), nx.matmul(h, w_h)), bias)
        i_gate = nx.sigmoid(nx.slice_axis(gates, 0, h_size, axis=1))
        f_gate = nx.sigmoid(nx.slice_axis(gates, h_size, 2 * h_size, axis=1))
        o_gate = nx.sigmoid(nx.slice_axis(gates, 2 * h_size, 3 * h_size, axis=1))
        g_cand = nx.tanh(nx.slice_axis(gates, 3 * h_size, 4 * h_size, axis=1))
        c = nx.add(nx.mul(f_gate, c), nx.mul(i_gate, g_cand))
        h = nx.mul(o_gate, nx.tanh(c))
        hiddens.append(h)
    out = nx.stack(hiddens, axis=1)
    return nx.take(out, 0, axis=0) if squeeze else out


def neighbourhood_mask(adjacency: np.ndarray, include_self: bool = True) -> np.ndarray:
    mask = np.asarray(adjacency) > 0
    if include_self:
        mask = mask | np.eye(mask.shape[0], dtype=bool)
    return mask


def gat_layer(adjacency: np.ndarray, h: TensorValue, w: TensorValue, a: TensorValue, slope: float = 0.2,
              include_self: bool = True, return_attention: bool = False):
    """
    Single-head graph attention over the adjacency neighbourhoods.

    e_ij = LeakyReLU(a·[W h_i ‖ W h_j]), α_i = softmax of e_i over N(i),
    output_i = Σ_j α_ij W h_j. `a` has shape (2 f', 1).
    """
    f_out = w.shape[1]
    if h.shape[-1] != w.shape[0] or a.shape != (2 * f_out, 1):
        raise DimensionError("gat_layer", h.shape, w.shape, a.shape)
    if h.shape[-2] != adjacency.shape[0]:
        raise DimensionError("gat_layer", adjacency.shape, h.shape)
    wh = nx.matmul(h, w)
    src = nx.matmul(wh, nx.slice_axis(a, 0, f_out, axis=0))
    dst = nx.matmul(wh, nx.slice_axis(a, f_out, 2 * f_out, axis=0))
    scores = nx.leaky_relu(nx.add(src, nx.transpose(dst)), slope)
    alpha = nx.masked_softmax(scores, neighbourhood_mask(adjacency, include_self))
    out = nx.matmul(alpha, wh)
    return (out, alpha) if return_attention else out
