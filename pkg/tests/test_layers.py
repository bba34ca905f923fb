# tests/test_layers.py
"""
Tests for the hargnn.layers module against dense numpy oracles.
"""

import math

import numpy as np
import pytest

from hargnn import layers
from hargnn.errors import DimensionError
from hargnn.graph_builder import path_adjacency, shared_norm_adjacency
from hargnn.numerics import TensorValue


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def test_gcn_layer_matches_formula(rng):
    a_hat = shared_norm_adjacency(4, True)
    h = rng.normal(size=(2, 4, 3))
    w = rng.normal(size=(3, 5))
    out = layers.gcn_layer(a_hat, TensorValue(h), TensorValue(w))
    expected = np.maximum(np.einsum("ij,bjk,kl->bil", a_hat, h, w), 0.0)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_gcn_layer_without_activation_is_linear(rng):
    a_hat = shared_norm_adjacency(3, False)
    h = rng.normal(size=(3, 2))
    w = rng.normal(size=(2, 2))
    out = layers.gcn_layer(a_hat, TensorValue(h), TensorValue(w), activation=False)
    np.testing.assert_allclose(out.data, a_hat @ h @ w, atol=1e-12)


def test_gcn_layer_shape_errors():
    with pytest.raises(DimensionError):
        layers.gcn_layer(np.eye(3), TensorValue(np.zeros((4, 2))), TensorValue(np.zeros((2, 2))))
    with pytest.raises(DimensionError):
        layers.gcn_layer(np.eye(3), TensorValue(np.zeros((3, 2))), TensorValue(np.zeros((3, 2))))


def test_gcn_encoder_keeps_sensors_private(rng):
    a_hat = shared_norm_adjacency(5, True)
    feats = [TensorValue(rng.normal(size=(1, 5, 3))) for _ in range(2)]
    stacks = [[TensorValue(rng.normal(size=(3, 4))), TensorValue(rng.normal(size=(4, 4)))] for _ in range(2)]
    out = layers.gcn_encoder(a_hat, feats, stacks)
    for i in range(2):
        h = np.maximum(a_hat @ feats[i].data[0] @ stacks[i][0].data, 0)
        h = np.maximum(a_hat @ h @ stacks[i][1].data, 0)
        np.testing.assert_allclose(out[i].data[0], h, atol=1e-12)
    with pytest.raises(DimensionError):
        layers.gcn_encoder(a_hat, feats, stacks[:1])


def test_attention_matches_dense_oracle(rng):
    hidden = [rng.normal(size=(2, 3, 4)) for _ in range(3)]
    wq, wk, wv = (rng.normal(size=(4, 4)) for _ in range(3))
    out, maps = layers.inter_sensor_attention([TensorValue(h) for h in hidden], TensorValue(wq), TensorValue(wk),
                                              TensorValue(wv))
    assert out.shape == (2, 3, 3, 4)
    assert maps.shape == (2, 3, 3, 3)
    for b in range(2):
        for t in range(3):
            x = np.stack([h[b, t] for h in hidden])
            alpha = _softmax((x @ wq) @ (x @ wk).T / math.sqrt(4))
            np.testing.assert_allclose(maps.data[b, t], alpha, atol=1e-12)
            np.testing.assert_allclose(out.data[b, t], alpha @ (x @ wv), atol=1e-12)


def test_attention_rows_are_distributions(rng):
    hidden = [TensorValue(rng.normal(size=(4, 6, 2))) for _ in range(2)]
    w = [TensorValue(rng.normal(size=(2, 2))) for _ in range(3)]
    _, maps = layers.inter_sensor_attention(hidden, *w, repeats=2)
    assert np.all(maps.data >= 0)
    np.testing.assert_allclose(maps.data.sum(axis=-1), 1.0, atol=1e-9)


def test_attention_with_zero_queries_averages_values(rng):
    hidden = [rng.normal(size=(1, 2, 3)) for _ in range(2)]
    zero = TensorValue(np.zeros((3, 3)))
    out, maps = layers.inter_sensor_attention([TensorValue(h) for h in hidden], zero, zero,
                                              TensorValue(np.eye(3)))
    np.testing.assert_allclose(maps.data, 0.5)
    mean = (hidden[0] + hidden[1]) / 2
    np.testing.assert_allclose(out.data[:, :, 0], mean, atol=1e-12)
    np.testing.assert_allclose(out.data[:, :, 1], mean, atol=1e-12)


def test_attention_rejects_mismatched_sensors():
    with pytest.raises(DimensionError):
        layers.inter_sensor_attention([TensorValue(np.zeros((1, 2, 3))), TensorValue(np.zeros((1, 2, 4)))],
                                      *[TensorValue(np.eye(3))] * 3)


def test_pool_and_flatten(rng):
    hbar = rng.normal(size=(2, 24, 2, 16))
    out = layers.pool_and_flatten(TensorValue(hbar))
    assert out.shape == (2, 32)
    np.testing.assert_allclose(out.data[1, 16:], hbar[1, :, 1].mean(axis=0), atol=1e-12)


def test_classify_head_probabilities(rng):
    logits, probs = layers.classify_head(TensorValue(rng.normal(size=(3, 5, 2, 4))),
                                         TensorValue(rng.normal(size=(8, 7))), TensorValue(np.zeros(7)))
    assert logits.shape == (3, 7)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_lstm_matches_hand_recursion(rng):
    seq = rng.normal(size=(2, 4, 3))
    hs = 5
    wx, wh, bias = rng.normal(size=(3, 4 * hs)), rng.normal(size=(hs, 4 * hs)), rng.normal(size=4 * hs)
    out = layers.lstm_forward(TensorValue(seq), TensorValue(wx), TensorValue(wh), TensorValue(bias))
    assert out.shape == (2, 4, hs)
    for b in range(2):
        h = np.zeros(hs)
        c = np.zeros(hs)
        for t in range(4):
            z = seq[b, t] @ wx + h @ wh + bias
            i, f, o, g = _sigmoid(z[:hs]), _sigmoid(z[hs:2 * hs]), _sigmoid(z[2 * hs:3 * hs]), np.tanh(z[3 * hs:])
            c = f * c + i * g
            h = o * np.tanh(c)
            np.testing.assert_allclose(out.data[b, t], h, atol=1e-12)


def test_lstm_unbatched_input(rng):
    out = layers.lstm_forward(TensorValue(rng.normal(size=(6, 2))), TensorValue(rng.normal(size=(2, 12))),
                              TensorValue(rng.normal(size=(3, 12))), TensorValue(np.zeros(12)))
    assert out.shape == (6, 3)


def test_gat_matches_brute_force(rng):
    adjacency = path_adjacency(4)
    h = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    a = rng.normal(size=(4, 1))
    out, alpha = layers.gat_layer(adjacency, TensorValue(h), TensorValue(w), TensorValue(a), slope=0.2,
                                  return_attention=True)
    wh = h @ w
    for i in range(4):
        neigh = [j for j in range(4) if adjacency[i, j] > 0 or i == j]
        e = np.array([float(np.concatenate([wh[i], wh[j]]) @ a[:, 0]) for j in neigh])
        e = np.where(e > 0, e, 0.2 * e)
        weights = np.exp(e - e.max())
        weights /= weights.sum()
        np.testing.assert_allclose(alpha.data[i, neigh], weights, atol=1e-12)
        outside = [j for j in range(4) if j not in neigh]
        np.testing.assert_array_equal(alpha.data[i, outside], 0.0)
        np.testing.assert_allclose(out.data[i], weights @ wh[neigh], atol=1e-12)


def test_gat_batched_equals_single(rng):
    adjacency = path_adjacency(5)
    h = rng.normal(size=(3, 5, 2))
    w = TensorValue(rng.normal(size=(2, 4)))
    a = TensorValue(rng.normal(size=(8, 1)))
    batched = layers.gat_layer(adjacency, TensorValue(h), w, a)
    for b in range(3):
        single = layers.gat_layer(adjacency, TensorValue(h[b]), w, a)
        np.testing.assert_allclose(batched.data[b], single.data, atol=1e-12)


def test_gat_rejects_bad_attention_vector():
    with pytest.raises(DimensionError):
        layers.gat_layer(path_adjacency(3), TensorValue(np.zeros((3, 2))), TensorValue(np.zeros((2, 4))),
                         TensorValue(np.zeros((4, 1))))


def test_gcn_layer_matches_node_loop(rng):
    adjacency = path_adjacency(5)
    a_hat = shared_norm_adjacency(5, True)
    h = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 2))
    out = layers.gcn_layer(a_hat, TensorValue(h), TensorValue(w))
    for i in range(5):
        neigh = [j for j in range(5) if adjacency[i, j] > 0 or i == j]
        msg = sum(a_hat[i, j] * (h[j] @ w) for j in neigh)
        np.testing.assert_allclose(out.data[i], np.maximum(msg, 0.0), atol=1e-10)


def test_gcn_without_self_loops_ignores_own_features(rng):
    a_hat = shared_norm_adjacency(4, False)
    h = rng.normal(size=(4, 3))
    w = TensorValue(rng.normal(size=(3, 5)))
    before = layers.gcn_layer(a_hat, TensorValue(h), w, activation=False).data
    h[2] += 10.0
    after = layers.gcn_layer(a_hat, TensorValue(h), w, activation=False).data
    np.testing.assert_array_equal(before[2], after[2])
    assert not np.allclose(before[1], after[1])


def test_attention_single_sensor_is_value_projection(rng):
    h = rng.normal(size=(2, 3, 4))
    wv = rng.normal(size=(4, 4))
    out, maps = layers.inter_sensor_attention([TensorValue(h)], TensorValue(rng.normal(size=(4, 4))),
                                              TensorValue(rng.normal(size=(4, 4))), TensorValue(wv))
    np.testing.assert_allclose(maps.data, 1.0)
    np.testing.assert_allclose(out.data[:, :, 0], h @ wv, atol=1e-12)


def test_attention_is_permutation_equivariant(rng):
    hidden = [rng.normal(size=(2, 4, 3)) for _ in range(3)]
    w = [TensorValue(rng.normal(size=(3, 3))) for _ in range(3)]
    out, maps = layers.inter_sensor_attention([TensorValue(h) for h in hidden], *w)
    perm = [2, 0, 1]
    out_p, maps_p = layers.inter_sensor_attention([TensorValue(hidden[p]) for p in perm], *w)
    np.testing.assert_allclose(out_p.data, out.data[:, :, perm], atol=1e-10)
    np.testing.assert_allclose(maps_p.data, maps.data[:, :, perm][:, :, :, perm], atol=1e-10)


def test_gat_zero_attention_vector_is_uniform(rng):
    adjacency = path_adjacency(4)
    _, alpha = layers.gat_layer(adjacency, TensorValue(rng.normal(size=(4, 3))), TensorValue(rng.normal(size=(3, 2))),
                                TensorValue(np.zeros((4, 1))), return_attention=True)
    np.testing.assert_allclose(alpha.data[0, :2], 0.5)
    np.testing.assert_allclose(alpha.data[1, :3], 1 / 3)
    np.testing.assert_allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-9)


def test_lstm_zero_parameters_give_zero_states():
    out = layers.lstm_forward(TensorValue(np.zeros((3, 2))), TensorValue(np.zeros((2, 8))),
                              TensorValue(np.zeros((2, 8))), TensorValue(np.zeros(8)))
    np.testing.assert_array_equal(out.data, 0.0)
