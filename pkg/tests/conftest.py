# tests/conftest.py
"""
Pytest configuration and fixtures for the HARGNN test suite.
"""

import os
from typing import Callable, Generator

import numpy as np
import pytest

from hargnn.config_handler import ModelConfig, TrainConfig
from hargnn.data_pipeline import (DatasetMeta, SegmentSet, SynthConfig, synthesize, synthetic_class_names,
                                  write_meta, write_recordings)
from hargnn.graph_builder import GraphBatch, batch_segments

# Two sensors with three axes each, the hospital layout
TINY_LAYOUT = ((1, 'x'), (1, 'y'), (1, 'z'), (2, 'x'), (2, 'y'), (2, 'z'))
TINY_CLASSES = ("Lying", "Sitting", "Walking")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs of several training epochs")


@pytest.fixture(scope="function")
def temp_config_file(tmp_path) -> Generator[str, None, None]:
    """Creates a temporary flat dotted-key config file and returns its path."""
    config_path = tmp_path / "hargnn.conf"
    config_path.write_text(
        "# tiny run\n"
        "log.level = DEBUG\n"
        "data.window_len = 8\n"
        "data.stride = 4\n"
        "data.test_subjects = 1\n"
        "data.train_subjects = 2-3\n"
        "data.validation_subjects = 4\n"
        "model.kind = gcn\n"
        "model.hidden = 6\n"
        "train.epochs = 3\n"
        "train.learning_rate = 0.005\n"
    )
    yield str(config_path)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(hidden=4, gcn_layers=2, lstm_hidden=3, gat_layers=1, gat_width=3)


@pytest.fixture
def make_segments() -> Callable[..., SegmentSet]:
    """Factory for random SegmentSets over TINY_LAYOUT."""
    def factory(n: int = 6, window_len: int = 5, seed: int = 0, n_classes: int = 3) -> SegmentSet:
        gen = np.random.default_rng(seed)
        labels = np.arange(n, dtype=np.int64) % n_classes
        provenance = np.column_stack([np.full(n, 1), np.full(n, 1), np.arange(n) * window_len]).astype(np.int64)
        return SegmentSet(gen.uniform(-1, 1, size=(n, len(TINY_LAYOUT), window_len)), labels, window_len,
                          window_len, TINY_CLASSES[:n_classes], TINY_LAYOUT, provenance)
    return factory


@pytest.fixture
def tiny_batch(make_segments) -> GraphBatch:
    return batch_segments(make_segments(n=4, window_len=5))


@pytest.fixture
def tiny_train_config(tmp_path, tiny_model_config) -> Callable[..., TrainConfig]:
    def factory(**changes) -> TrainConfig:
        base = TrainConfig(model=tiny_model_config, epochs=2, batch_size=4, window_len=5, stride=5,
                           checkpoint_dir=str(tmp_path / "run"), deterministic=True, threads=1)
        return base._replace(**changes)
    return factory


@pytest.fixture
def synth_config() -> SynthConfig:
    return SynthConfig(n_subjects=4, n_classes=3, duration_s=20.0, noise_std=0.1, sensor_informativeness=(1.0, 0.5))


@pytest.fixture
def synth_dir(tmp_path, synth_config) -> str:
    """Small synthetic dataset directory in the ingestion schema."""
    out = tmp_path / "dataset"
    os.makedirs(out)
    names = synthetic_class_names(synth_config.n_classes)
    write_recordings(synthesize(synth_config, seed=7), str(out / "recordings.csv"), names)
    write_meta(str(out), DatasetMeta(names, synth_config.sample_rate_hz))
    return str(out)
