# hargnn/training.py
"""
Mini-batch training with Adam, one checkpoint per epoch and selection of
the epoch with the best validation macro-F1.

Progress is published on the pubsub bus:
    hargnn.train.epoch_end          record=EpochRecord
    hargnn.train.checkpoint_saved   epoch=int, path=str
"""

import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import List, Mapping, Optional, Sequence

import numpy as np
from pubsub import pub

from .checkpoint import save_checkpoint
from .config_handler import LOCK_FILE, TrainConfig
from .data_pipeline import SegmentSet, SensorRecording, sensor_widths
from .errors import CheckpointError, DataError, NumericError
from .evaluation import evaluate_samplewise, f1_scores, predict_segments
from .graph_builder import batch_segments
from .models import Architecture, HarModel, architecture_for, get_model
from .numerics import Adam, ComputationTape, cross_entropy_loss
from .utils import write_json

logger = logging.getLogger(__name__)

TOPIC_EPOCH_END = "hargnn.train.epoch_end"
TOPIC_CHECKPOINT_SAVED = "hargnn.train.checkpoint_saved"
REPORT_FILE = "report.json"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_macro_f1: float
    validation_macro_f1: Optional[float]
    wall_time: float
    checkpoint_path: str


@dataclass
class TrainReport:
    """Per-epoch history plus the selected checkpoint."""
    epochs: List[EpochRecord] = field(default_factory=list)
    selected_epoch: int = 0
    selected_checkpoint_path: str = ""
    model_kind: str = ""
    flags: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        """Checkpoint paths are stored relative to the run directory."""
        epochs = []
        for r in self.epochs:
            row = asdict(r)
            row["checkpoint_path"] = os.path.basename(r.checkpoint_path)
            epochs.append(row)
        return {
            "model_kind": self.model_kind,
            "epochs": epochs,
            "selected_epoch": self.selected_epoch,
            "selected_checkpoint_path": os.path.basename(self.selected_checkpoint_path),
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_json(cls, data: dict, run_dir: str = "") -> "TrainReport":
        epochs = [EpochRecord(**{**r, "checkpoint_path": os.path.join(run_dir, r["checkpoint_path"])})
                  for r in data["epochs"]]
        return cls(epochs, int(data["selected_epoch"]), os.path.join(run_dir, str(data["selected_checkpoint_path"])),
                   str(data.get("model_kind", "")), list(data.get("flags", [])))


def select_epoch(validation_f1: Sequence[Optional[float]]) -> int:
    """1-based index of the earliest maximum; the last epoch when no score exists."""
    if not validation_f1:
        raise DataError("no epochs to select from")
    scored = [(f, i) for i, f in enumerate(validation_f1) if f is not None]
    if not scored:
        return len(validation_f1)
    best = max(f for f, _ in scored)
    return next(i for f, i in scored if f == best) + 1


def select_checkpoint(report: TrainReport) -> str:
    """Path of the earliest epoch reaching the best validation macro-F1."""
    epoch = select_epoch([r.validation_macro_f1 for r in report.epochs])
    return report.epochs[epoch - 1].checkpoint_path


def class_weights(counts: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights N / (C_present * n_c); absent classes get 0."""
    counts = np.asarray(counts, dtype=np.float64)
    present = counts > 0
    weights = np.zeros_like(counts)
    weights[present] = counts.sum() / (present.sum() * counts[present])
    return weights


def train_architecture(train_set: SegmentSet, cfg: TrainConfig) -> Architecture:
    dims = [w for _, w in sensor_widths(train_set.channel_layout)]
    return architecture_for(cfg.model, dims, train_set.n_classes, train_set.window_len)


def checkpoint_path(checkpoint_dir: str, epoch: int) -> str:
    return os.path.join(checkpoint_dir, f"epoch_{epoch}.ckpt")


class Trainer:
    """Owns the model, optimizer and run directory of one training run."""

    def __init__(self, train_set: SegmentSet, validation: SegmentSet, cfg: TrainConfig,
                 validation_recordings: Optional[Sequence[SensorRecording]] = None):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        if not len(train_set):
            raise DataError("training set is empty")
        self.train_set = train_set
        self.validation = validation
        self.validation_recordings = list(validation_recordings or [])
        self.cfg = cfg
        self.arch = train_architecture(train_set, cfg)
        self.model: HarModel = get_model(self.arch, cfg.seed)
        self.optimizer = Adam(self.model.parameters(), cfg.learning_rate, cfg.betas, cfg.adam_eps)
        self.rng = np.random.default_rng(cfg.seed)
        self.flags: List[str] = []

        counts = train_set.class_counts()
        missing = [train_set.class_names[i] for i in np.flatnonzero(counts == 0)]
        if missing:
            self.logger.warning(f"Training data has no segments of classes {missing}")
            self.flags.append("train_missing_classes")
        self.weights = class_weights(counts) if cfg.class_weighting else None
        if cfg.validation_mode == "sample_wise" and not self.validation_recordings:
            self.logger.warning("Sample-wise validation requested without recordings; using segment-wise")
            self.flags.append("validation_segment_wise_fallback")
        if not len(validation):
            self.logger.warning("Validation set is empty; the final epoch will be selected")
            self.flags.append("empty_validation")

    def run_epoch(self) -> float:
        """One shuffled pass over the training set; returns the sample-weighted mean loss."""
        n = len(self.train_set)
        order = self.rng.permutation(n)
        total = 0.0
        for start in range(0, n, self.cfg.batch_size):
            idx = order[start:start + self.cfg.batch_size]
            batch = batch_segments(self.train_set, idx, self.cfg.self_loops)
            self.optimizer.zero_grad()
            with ComputationTape() as tape:
                loss = cross_entropy_loss(self.model.forward(batch), batch.labels, self.weights)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss {value} at batch starting {start}")
                tape.backward(loss)
            self.check_gradients(start)
            self.optimizer.step()
            total += value * idx.size
        return total / n

    def check_gradients(self, start: int):
        for name, p in self.model.named_parameters().items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for {name} at batch starting {start}")

    def validation_f1(self) -> Optional[float]:
        if self.cfg.validation_mode == "sample_wise" and self.validation_recordings:
            return evaluate_samplewise(self.model, self.validation_recordings, self.arch.window_len,
                                       self.validation.class_names, threads=self.cfg.threads,
                                       deterministic=self.cfg.deterministic).macro_f1
        if not len(self.validation):
            return None
        pred = predict_segments(self.model, self.validation)
        return f1_scores(pred, self.validation.labels, self.validation.n_classes).macro_f1

    def fit(self, lock_values: Optional[Mapping[str, str]] = None) -> TrainReport:
        cfg = self.cfg
        try:
            os.makedirs(cfg.checkpoint_dir, exist_ok=True)
        except OSError as e:
            raise CheckpointError(f"cannot create checkpoint directory {cfg.checkpoint_dir}: {e}") from None
        write_json(os.path.join(cfg.checkpoint_dir, LOCK_FILE),
                   dict(sorted(lock_values.items())) if lock_values is not None else train_config_echo(cfg))

        report = TrainReport(model_kind=self.arch.kind, flags=list(self.flags))
        batches = -(-len(self.train_set) // cfg.batch_size)
        self.logger.info(f"Training {self.arch.kind} ({self.model.parameter_count()} parameters) on "
                         f"{len(self.train_set)} segments: {cfg.epochs} epochs x {batches} batches")
        for epoch in range(1, cfg.epochs + 1):
            started = time.perf_counter()
            train_loss = self.run_epoch()
            train_pred = predict_segments(self.model, self.train_set)
            train_f1 = f1_scores(train_pred, self.train_set.labels, self.train_set.n_classes).macro_f1
            val_f1 = self.validation_f1()
            path = checkpoint_path(cfg.checkpoint_dir, epoch)
            save_checkpoint(path, self.model, meta={"epoch": epoch, "seed": cfg.seed,
                                                    "validation_macro_f1": val_f1})
            pub.sendMessage(TOPIC_CHECKPOINT_SAVED, epoch=epoch, path=path)
            wall = 0.0 if cfg.deterministic else round(time.perf_counter() - started, 6)
            record = EpochRecord(epoch, train_loss, train_f1, val_f1, wall, path)
            report.epochs.append(record)
            self.logger.debug(f"Epoch {epoch}: loss {train_loss:.5f}, train F1 {train_f1:.4f}, "
                              f"validation F1 {val_f1}")
            pub.sendMessage(TOPIC_EPOCH_END, record=record)

        report.selected_epoch = select_epoch([r.validation_macro_f1 for r in report.epochs])
        report.selected_checkpoint_path = report.epochs[report.selected_epoch - 1].checkpoint_path
        write_json(os.path.join(cfg.checkpoint_dir, REPORT_FILE), report.to_json())
        self.logger.info(f"Selected epoch {report.selected_epoch}: {report.selected_checkpoint_path}")
        return report


def train_config_echo(cfg: TrainConfig) -> dict:
    data = cfg._asdict()
    data["model"] = dict(cfg.model._asdict())
    data["betas"] = list(cfg.betas)
    return data


def train(train_set: SegmentSet, validation: SegmentSet, cfg: TrainConfig,
          validation_recordings: Optional[Sequence[SensorRecording]] = None,
          lock_values: Optional[Mapping[str, str]] = None) -> TrainReport:
    """
    Trains `cfg.model` on `train_set`, checkpointing every epoch into `cfg.checkpoint_dir`.

    Raises:
        DataError: empty training set.
        CheckpointError: the checkpoint directory is not writable.
        NumericError: the loss or a gradient became NaN or infinite.
    """
    return Trainer(train_set, validation, cfg, validation_recordings).fit(lock_values)
