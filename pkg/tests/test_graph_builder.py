# tests/test_graph_builder.py
"""
Tests for the hargnn.graph_builder module.
"""

import json
import math
import os

import numpy as np
import pytest

from hargnn.errors import DataError, DimensionError
from hargnn.graph_builder import (GraphBatch, batch_segments, build_path_graph, dump_graph_json, export_graphs,
                                  graph_batch, graphs_from_segments, normalize_adjacency, path_adjacency,
                                  shared_norm_adjacency)

from .conftest import TINY_CLASSES, TINY_LAYOUT


def _dense_oracle(a: np.ndarray, self_loops: bool) -> np.ndarray:
    a = a + np.eye(len(a)) if self_loops else a
    n = len(a)
    out = np.zeros((n, n))
    deg = a.sum(axis=1)
    for i in range(n):
        for j in range(n):
            if deg[i] > 0 and deg[j] > 0:
                out[i, j] = a[i, j] / math.sqrt(deg[i] * deg[j])
    return out


def test_path_graph_of_24_timestamps(rng):
    graph = build_path_graph(rng.normal(size=(6, 24)), TINY_LAYOUT, label=2)
    assert graph.n_nodes == 24
    assert int(np.count_nonzero(graph.adjacency)) == 2 * 23
    degrees = graph.degrees()
    assert degrees[0] == 1 and degrees[23] == 1
    assert np.all(degrees[1:23] == 2)
    np.testing.assert_array_equal(np.diag(graph.adjacency), 0)
    assert [f.shape for f in graph.sensor_features] == [(24, 3), (24, 3)]


def test_smallest_path_graph():
    graph = build_path_graph(np.zeros((6, 2)), TINY_LAYOUT, label=0)
    np.testing.assert_array_equal(graph.adjacency, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(graph.degrees(), [1, 1])


def test_node_features_equal_segment_columns(rng):
    seg = rng.normal(size=(6, 7))
    graph = build_path_graph(seg, TINY_LAYOUT, label=0)
    for j in range(7):
        np.testing.assert_array_equal(graph.features[j], seg[:, j])


def test_single_timestamp_is_rejected():
    with pytest.raises(DimensionError):
        build_path_graph(np.zeros((6, 1)), TINY_LAYOUT, label=0)


def test_topology_ignores_feature_values(rng):
    a = build_path_graph(rng.normal(size=(6, 9)), TINY_LAYOUT, 0)
    b = build_path_graph(np.zeros((6, 9)), TINY_LAYOUT, 1)
    np.testing.assert_array_equal(a.adjacency, b.adjacency)
    np.testing.assert_array_equal(a.norm_adjacency, b.norm_adjacency)


def test_two_node_normalized_adjacency():
    np.testing.assert_allclose(normalize_adjacency(path_adjacency(2)), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_three_node_normalized_adjacency():
    a_hat = normalize_adjacency(path_adjacency(3))
    inv6 = 1 / math.sqrt(6)
    expected = [[0.5, inv6, 0.0], [inv6, 1 / 3, inv6], [0.0, inv6, 0.5]]
    np.testing.assert_allclose(a_hat, expected, atol=1e-12)


def test_single_self_looped_node():
    np.testing.assert_array_equal(normalize_adjacency(np.zeros((1, 1))), [[1.0]])


def test_isolated_nodes_without_self_loops():
    np.testing.assert_array_equal(normalize_adjacency(np.zeros((2, 2)), add_self_loops=False), np.zeros((2, 2)))


def test_asymmetric_adjacency_is_rejected():
    with pytest.raises(DataError):
        normalize_adjacency(np.array([[0, 1], [0, 0]]))


@pytest.mark.parametrize("self_loops", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_normalization_matches_dense_oracle(seed, self_loops):
    gen = np.random.default_rng(seed)
    upper = np.triu((gen.uniform(size=(6, 6)) < 0.4).astype(float), 1)
    a = upper + upper.T
    np.testing.assert_allclose(normalize_adjacency(a, self_loops), _dense_oracle(a, self_loops), atol=1e-12)


@pytest.mark.parametrize("t", [2, 3, 24, 50])
def test_normalized_path_is_symmetric_with_bounded_spectrum(t):
    a_hat = shared_norm_adjacency(t, True)
    np.testing.assert_allclose(a_hat, a_hat.T, atol=1e-12)
    eig = np.linalg.eigvalsh(a_hat)
    assert eig.min() >= -1 - 1e-12 and eig.max() <= 1 + 1e-12
    rows = a_hat.sum(axis=1)
    assert np.all(rows > 0)


def test_shared_adjacency_is_read_only():
    with pytest.raises(ValueError):
        shared_norm_adjacency(5, True)[0, 0] = 3.0


def test_batch_segments_equals_graph_batch(make_segments):
    segs = make_segments(n=5, window_len=6)
    direct = batch_segments(segs)
    built = graph_batch(graphs_from_segments(segs))
    assert direct.norm_adjacency is built.norm_adjacency
    for a, b in zip(direct.sensor_features, built.sensor_features):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(direct.labels, built.labels)
    assert direct.features.shape == (5, 6, 6)


def test_batch_of_100_shares_adjacency(make_segments):
    batch = batch_segments(make_segments(n=100, window_len=24))
    assert batch.size == 100
    assert batch.norm_adjacency.shape == (24, 24)
    assert [f.shape for f in batch.sensor_features] == [(100, 24, 3), (100, 24, 3)]


def test_batch_of_one_round_trips(make_segments):
    segs = make_segments(n=1, window_len=4)
    graph = graphs_from_segments(segs)[0]
    back = graph_batch([graph]).graph(0)
    np.testing.assert_array_equal(back.features, graph.features)
    assert back.label == graph.label


def test_graph_batch_rejects_heterogeneous_graphs(rng):
    g1 = build_path_graph(rng.normal(size=(6, 4)), TINY_LAYOUT, 0)
    g2 = build_path_graph(rng.normal(size=(6, 5)), TINY_LAYOUT, 0)
    with pytest.raises(DimensionError):
        graph_batch([g1, g2])
    g3 = build_path_graph(rng.normal(size=(6, 4)), TINY_LAYOUT, 0, self_loops=False)
    with pytest.raises(DimensionError):
        graph_batch([g1, g3])


def test_graph_batch_type(make_segments):
    assert isinstance(batch_segments(make_segments(n=2)), GraphBatch)


def test_dump_graph_json(rng):
    graph = build_path_graph(rng.normal(size=(6, 24)), TINY_LAYOUT, 1, provenance=(3, 1, 48))
    data = dump_graph_json(graph, TINY_CLASSES)
    assert data["label_name"] == "Sitting"
    assert len(data["nodes"]) == 24
    assert len(data["edges"]) == 23
    assert data["edges"][0] == [0, 1]
    assert data["provenance"] == {"subject_id": 3, "run_id": 1, "start_index": 48}
    assert data["channels"][:2] == ["s1_x", "s1_y"]


def test_export_graphs_writes_one_file_per_class(tmp_path, make_segments):
    paths = export_graphs(make_segments(n=6, window_len=5), str(tmp_path), per_class=1)
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["graph_lying_0.json", "graph_sitting_0.json", "graph_walking_0.json"]
    with open(paths[0], encoding="utf-8") as f:
        assert len(json.load(f)["nodes"]) == 5
