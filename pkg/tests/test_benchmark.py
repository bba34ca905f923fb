# tests/test_benchmark.py
"""
Full-size synthetic runs of the three classifiers with the default training
settings. Each run trains for 100 epochs; select them with `-m slow`.
"""

from typing import Dict, Tuple

import numpy as np
import pytest

from hargnn.checkpoint import load_checkpoint
from hargnn.config_handler import ModelConfig, TrainConfig
from hargnn.data_pipeline import (PreparedData, SynthConfig, default_split_spec, prepare_dataset, synthesize,
                                  synthetic_class_names)
from hargnn.evaluation import class_attention, evaluate_samplewise
from hargnn.models import HarModel
from hargnn.training import TrainReport, select_checkpoint, train

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3)
WINDOW_LEN = 24
STRIDE = 12


class BenchmarkRuns:
    """Trains each (informativeness, kind, seed) once per session."""

    def __init__(self, root):
        self.root = root
        self.prepared: Dict[Tuple[Tuple[float, ...], int], PreparedData] = {}
        self.runs: Dict[Tuple[Tuple[float, ...], str, int], Tuple[HarModel, TrainReport, float]] = {}

    def data(self, informativeness: Tuple[float, ...], seed: int) -> PreparedData:
        key = (informativeness, seed)
        if key not in self.prepared:
            synth = SynthConfig(sensor_informativeness=informativeness)
            self.prepared[key] = prepare_dataset(synthesize(synth, seed), default_split_spec(), WINDOW_LEN, STRIDE,
                                                 synthetic_class_names(synth.n_classes))
        return self.prepared[key]

    def run(self, kind: str, seed: int, informativeness: Tuple[float, ...] = (1.0, 1.0)):
        """Returns (selected model, training report, sample-wise test macro-F1)."""
        key = (informativeness, kind, seed)
        if key not in self.runs:
            prepared = self.data(informativeness, seed)
            tag = "-".join(f"{v:g}" for v in informativeness)
            cfg = TrainConfig(model=ModelConfig(kind=kind), seed=seed, window_len=WINDOW_LEN, stride=STRIDE,
                              checkpoint_dir=str(self.root / f"{kind}_{seed}_{tag}"), deterministic=True, threads=1)
            report = train(prepared.segments["train"], prepared.segments["validation"], cfg)
            model, _ = load_checkpoint(select_checkpoint(report))
            result = evaluate_samplewise(model, prepared.recordings["test"], WINDOW_LEN, prepared.class_names,
                                         deterministic=True)
            self.runs[key] = (model, report, result.macro_f1)
        return self.runs[key]


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory) -> BenchmarkRuns:
    return BenchmarkRuns(tmp_path_factory.mktemp("benchmark"))


@pytest.mark.parametrize("seed", SEEDS)
def test_attention_model_learns_the_default_synthetic_set(benchmark, seed):
    _, report, test_f1 = benchmark.run("gcn_attention", seed)
    assert max(r.train_macro_f1 for r in report.epochs) >= 0.99
    assert test_f1 >= 0.90


def test_attention_prefers_the_informative_sensor(benchmark):
    shares = []
    for seed in SEEDS:
        model, _, _ = benchmark.run("gcn_attention", seed, informativeness=(1.0, 0.0))
        test = benchmark.data((1.0, 0.0), seed).segments["test"]
        mean_map = np.mean(list(class_attention(model, test).values()), axis=0)
        shares.append(mean_map[:, 0].sum() / mean_map.sum())
    assert sum(share >= 0.6 for share in shares) >= 2, shares


def test_model_ranking_on_the_synthetic_set(benchmark):
    medians = {kind: float(np.median([benchmark.run(kind, seed)[2] for seed in SEEDS]))
               for kind in ("gcn_attention", "gcn", "ragnn")}
    assert medians["gcn_attention"] >= medians["gcn"] >= medians["ragnn"], medians
