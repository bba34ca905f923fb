# tests/test_models.py
"""
Tests for the hargnn.models module.
"""

from collections import OrderedDict

import numpy as np
import pytest

from hargnn import layers
from hargnn.config_handler import ModelConfig
from hargnn.data_pipeline import SegmentSet
from hargnn.errors import CheckpointError, ConfigError, DimensionError
from hargnn.graph_builder import GraphBatch, batch_segments
from hargnn.models import (Architecture, GcnAttentionModel, HarModel, PlainGcnModel, RagnnModel, architecture_for,
                           get_model, plain_gcn_forward, ragnn_forward)
from hargnn.numerics import cross_entropy_loss, gradient_check_params

from .conftest import TINY_LAYOUT

KINDS = ["gcn_attention", "gcn", "ragnn"]


def _arch(model_config: ModelConfig, kind: str, window_len: int = 5, sensor_dims=(3, 3), n_classes: int = 3):
    return architecture_for(model_config._replace(kind=kind), sensor_dims, n_classes, window_len)


@pytest.mark.parametrize("kind, cls", [("gcn_attention", GcnAttentionModel), ("gcn", PlainGcnModel),
                                       ("ragnn", RagnnModel)])
def test_factory_builds_registered_kinds(tiny_model_config, kind, cls):
    model = get_model(_arch(tiny_model_config, kind))
    assert isinstance(model, cls)
    assert isinstance(model, HarModel)
    assert model.kind == kind


def test_factory_rejects_unknown_kind(tiny_model_config):
    with pytest.raises(ConfigError):
        get_model(_arch(tiny_model_config, "transformer"))


def test_gcn_attention_parameter_shapes(tiny_model_config):
    shapes = get_model(_arch(tiny_model_config, "gcn_attention")).expected_shapes()
    assert shapes["gcn.s0.w0"] == (3, 4)
    assert shapes["gcn.s1.w1"] == (4, 4)
    assert shapes["attention.wq"] == (4, 4)
    assert shapes["head.w"] == (8, 3)
    assert shapes["head.bias"] == (3,)


def test_ragnn_head_flattens_every_node(tiny_model_config):
    shapes = get_model(_arch(tiny_model_config, "ragnn", window_len=5)).expected_shapes()
    assert shapes["lstm.s0.wx"] == (3, 12)
    assert shapes["gat.s1.a0"] == (6, 1)
    assert shapes["head.w"] == (5 * 3 * 2, 3)


def test_seeded_initialisation_is_reproducible(tiny_model_config):
    a = get_model(_arch(tiny_model_config, "gcn_attention"), seed=4)
    b = get_model(_arch(tiny_model_config, "gcn_attention"), seed=4)
    c = get_model(_arch(tiny_model_config, "gcn_attention"), seed=5)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert not np.array_equal(a.params["gcn.s0.w0"].data, c.params["gcn.s0.w0"].data)
    np.testing.assert_array_equal(a.params["head.bias"].data, 0.0)


@pytest.mark.parametrize("kind", KINDS)
def test_forward_shapes_and_probabilities(tiny_model_config, tiny_batch, kind):
    model = get_model(_arch(tiny_model_config, kind))
    assert model.forward(tiny_batch).shape == (4, 3)
    probs = model.predict_proba(tiny_batch)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_batched_forward_equals_per_graph(tiny_model_config, make_segments, kind):
    segs = make_segments(n=4, window_len=5, seed=3)
    model = get_model(_arch(tiny_model_config, kind), seed=1)
    batched = model.forward(batch_segments(segs)).data
    for i in range(4):
        single = model.forward(batch_segments(segs, [i])).data
        np.testing.assert_allclose(batched[i], single[0], rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_model_gradients_match_finite_differences(tiny_model_config, tiny_batch, kind):
    model = get_model(_arch(tiny_model_config, kind), seed=2)

    def loss():
        return cross_entropy_loss(model.forward(tiny_batch), tiny_batch.labels)

    err = gradient_check_params(loss, model.parameters(), eps=1e-6, max_coords=60,
                                rng=np.random.default_rng(0))
    assert err <= 1e-4


def test_gcn_attention_gradient_on_five_node_graph(tiny_model_config, make_segments):
    batch = batch_segments(make_segments(n=1, window_len=5, seed=9))
    model = get_model(_arch(tiny_model_config._replace(attention_repeats=2), "gcn_attention"), seed=0)

    def loss():
        return cross_entropy_loss(model.forward(batch), batch.labels)

    assert gradient_check_params(loss, model.parameters(), eps=1e-6) <= 1e-4


def test_single_sensor_without_attention_equals_plain_gcn(tiny_model_config, make_segments):
    segs = make_segments(n=3, window_len=5)
    one_sensor = ((1, 'x'), (1, 'y'), (1, 'z'), (1, 'a'), (1, 'b'), (1, 'c'))
    batch = batch_segments(SegmentSet(segs.segments, segs.labels, 5, 5, segs.class_names, one_sensor,
                                      segs.provenance))
    cfg = tiny_model_config._replace(attention_enabled=False)
    fused = get_model(_arch(cfg, "gcn_attention", sensor_dims=(6,)), seed=3)
    plain = get_model(_arch(cfg, "gcn", sensor_dims=(6,)), seed=0)
    state = OrderedDict((name.replace("gcn.s0.", "gcn."), value) for name, value in fused.state().items()
                        if not name.startswith("attention."))
    plain.load_state(state)
    np.testing.assert_allclose(fused.forward(batch).data, plain.forward(batch).data, rtol=0, atol=1e-12)


def test_attention_head_matches_linear_over_embedding(tiny_model_config, tiny_batch):
    model = get_model(_arch(tiny_model_config, "gcn_attention"), seed=6)
    logits, probs = model.classify(tiny_batch)
    expected = layers.linear(model.embed(tiny_batch), model.params["head.w"], model.params["head.bias"])
    np.testing.assert_allclose(logits.data, expected.data, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(model.forward(tiny_batch).data, logits.data)
    np.testing.assert_allclose(model.predict_proba(tiny_batch), layers.probabilities(expected), rtol=0, atol=1e-12)


def test_attention_maps_are_distributions(tiny_model_config, tiny_batch):
    model = get_model(_arch(tiny_model_config, "gcn_attention"))
    maps = model.attention_maps(tiny_batch)
    assert maps.shape == (4, 5, 2, 2)
    np.testing.assert_allclose(maps.sum(axis=-1), 1.0, atol=1e-9)


def test_attention_maps_need_attention(tiny_model_config, tiny_batch):
    model = get_model(_arch(tiny_model_config._replace(attention_enabled=False), "gcn_attention"))
    with pytest.raises(ConfigError):
        model.attention_maps(tiny_batch)


def test_ragnn_single_timestamp_graph(tiny_model_config):
    cfg = tiny_model_config._replace(gat_layers=1)
    model = get_model(_arch(cfg, "ragnn", window_len=1), seed=0)
    gen = np.random.default_rng(0)
    feats = (gen.normal(size=(2, 1, 3)), gen.normal(size=(2, 1, 3)))
    batch = GraphBatch(np.zeros((1, 1)), np.ones((1, 1)), feats, np.array([0, 1]), TINY_LAYOUT)
    logits = ragnn_forward(batch, model)
    assert logits.shape == (2, 3)
    assert np.all(np.isfinite(logits.data))


def test_ragnn_rejects_other_window_length(tiny_model_config, make_segments):
    model = get_model(_arch(tiny_model_config, "ragnn", window_len=6))
    with pytest.raises(DimensionError):
        model.forward(batch_segments(make_segments(n=2, window_len=5)))


def test_layout_mismatch_is_rejected(tiny_model_config, tiny_batch):
    model = get_model(_arch(tiny_model_config, "gcn", sensor_dims=(2, 4)))
    with pytest.raises(DimensionError):
        plain_gcn_forward(tiny_batch, model)


def test_load_state_checks_names_and_shapes(tiny_model_config):
    model = get_model(_arch(tiny_model_config, "gcn"))
    state = OrderedDict(model.state())
    bad_shape = OrderedDict(state)
    bad_shape["head.w"] = np.zeros((2, 2))
    with pytest.raises(CheckpointError):
        model.load_state(bad_shape)
    missing = OrderedDict(state)
    del missing["head.bias"]
    with pytest.raises(CheckpointError):
        model.load_state(missing)


def test_architecture_json_round_trip(tiny_model_config):
    arch = _arch(tiny_model_config, "ragnn")
    assert Architecture.from_json(arch.to_json()) == arch
    with pytest.raises(CheckpointError):
        Architecture.from_json({"model": {"kind": "gcn"}})
