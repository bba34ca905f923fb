# hargnn/evaluation.py
"""
Test-time prediction, F1 reporting and the figure/data exporters.

Segment-wise evaluation scores one label per window. Sample-wise evaluation
slides a window over each normalized recording and gives every timestamp
the majority vote of the windows covering it.
"""

import logging
import os
import threading
from dataclasses import dataclass, field
from queue import Empty, Queue
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import plotting
from .data_pipeline import SegmentSet, SensorRecording, channel_name, sensor_widths
from .errors import ConfigError, DataError, DimensionError
from .graph_builder import batch_segments, batch_windows, slug
from .models import GcnAttentionModel, HarModel
from .utils import resolve_threads, write_json

logger = logging.getLogger(__name__)

PREDICT_BATCH = 256
EVAL_REPORT_FILE = "eval_report.json"
CONFUSION_FILE = "confusion.csv"


# --- Prediction ---

def predict_logits(model: HarModel, segs: SegmentSet, batch_size: int = PREDICT_BATCH) -> np.ndarray:
    out = np.zeros((len(segs), model.arch.n_classes))
    self_loops = model.arch.model.self_loops
    for start in range(0, len(segs), batch_size):
        idx = np.arange(start, min(start + batch_size, len(segs)))
        out[idx] = model.forward(batch_segments(segs, idx, self_loops)).data
    return out


def predict_segments(model: HarModel, segs: SegmentSet, batch_size: int = PREDICT_BATCH) -> np.ndarray:
    """Argmax class per segment; ties go to the smallest class index."""
    _check_compatible(model, segs)
    if not len(segs):
        return np.zeros(0, dtype=np.int64)
    return np.argmax(predict_logits(model, segs, batch_size), axis=1).astype(np.int64)


def _check_compatible(model: HarModel, segs: SegmentSet):
    dims = tuple(w for _, w in sensor_widths(segs.channel_layout))
    if dims != model.arch.sensor_dims or segs.n_classes != model.arch.n_classes:
        raise ConfigError(f"checkpoint expects sensors {model.arch.sensor_dims} and {model.arch.n_classes} classes, "
                          f"data has {dims} and {segs.n_classes}")
    if segs.window_len != model.arch.window_len:
        raise ConfigError(f"checkpoint was trained on windows of {model.arch.window_len}, "
                          f"data has {segs.window_len}")


def window_starts(length: int, window_len: int, stride: int = 1) -> np.ndarray:
    """Window start indices; with stride > 1 a final window aligned at the end is added."""
    starts = np.arange(0, length - window_len + 1, stride)
    if starts.size and starts[-1] != length - window_len:
        starts = np.append(starts, length - window_len)
    return starts


def vote(window_preds: np.ndarray, starts: np.ndarray, length: int, window_len: int,
         n_classes: int) -> np.ndarray:
    """
    Per-timestamp majority over covering windows.

    Ties go to the class predicted by the most recent (latest-starting)
    covering window among the tied classes.
    """
    votes = np.zeros((length, n_classes), dtype=np.int64)
    last_seen = np.full((length, n_classes), -1, dtype=np.int64)
    for s, p in zip(starts, window_preds):
        votes[s:s + window_len, p] += 1
        last_seen[s:s + window_len, p] = s
    top = votes == votes.max(axis=1, keepdims=True)
    return np.argmax(np.where(top, last_seen, -2), axis=1).astype(np.int64)


class SamplewiseResult(NamedTuple):
    predictions: np.ndarray
    padded: bool


def predict_samplewise(model: HarModel, rec: SensorRecording, window_len: int,
                       stride: int = 1, batch_size: int = PREDICT_BATCH) -> SamplewiseResult:
    """
    Per-timestamp predictions for one normalized recording.

    A recording shorter than the window is padded by edge replication into a
    single window whose prediction covers every timestamp; `padded` is set.
    """
    if window_len != model.arch.window_len:
        raise ConfigError(f"window {window_len} differs from the checkpoint's {model.arch.window_len}")
    length = rec.length
    if length == 0:
        return SamplewiseResult(np.zeros(0, dtype=np.int64), False)
    padded = length < window_len
    channels = rec.channels
    if padded:
        logger.warning(f"Recording subject {rec.subject_id} run {rec.run_id} is shorter than the window; "
                       f"padding {length} -> {window_len} samples")
        channels = np.pad(channels, ((0, window_len - length), (0, 0)), mode="edge")
    starts = window_starts(channels.shape[0], window_len, stride)
    preds = np.zeros(starts.size, dtype=np.int64)
    self_loops = model.arch.model.self_loops
    for b in range(0, starts.size, batch_size):
        chunk = starts[b:b + batch_size]
        windows = np.stack([channels[s:s + window_len] for s in chunk])
        logits = model.forward(batch_windows(windows, rec.channel_layout, self_loops=self_loops)).data
        preds[b:b + chunk.size] = np.argmax(logits, axis=1)
    voted = vote(preds, starts, channels.shape[0], window_len, model.arch.n_classes)
    return SamplewiseResult(voted[:length], padded)


class SamplewisePool:
    """
    Runs `predict_samplewise` over many recordings on worker threads.

    Results are keyed by input position so the output order never depends
    on scheduling.
    """

    def __init__(self, model: HarModel, window_len: int, stride: int = 1, threads: int = 1):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.model = model
        self.window_len = window_len
        self.stride = stride
        self.threads = max(1, threads)
        self.shutdown_event = threading.Event()
        self.work_queue: "Queue[Tuple[int, SensorRecording]]" = Queue()
        self._results: Dict[int, SamplewiseResult] = {}
        self._errors: List[BaseException] = []
        self._lock = threading.Lock()

    def _worker(self):
        while not self.shutdown_event.is_set():
            try:
                index, rec = self.work_queue.get_nowait()
            except Empty:
                return
            try:
                result = predict_samplewise(self.model, rec, self.window_len, self.stride)
                with self._lock:
                    self._results[index] = result
            except Exception as e:
                self.logger.error(f"Prediction failed for subject {rec.subject_id} run {rec.run_id}: {e}")
                with self._lock:
                    self._errors.append(e)
                self.shutdown_event.set()
            finally:
                self.work_queue.task_done()

    def run(self, recordings: Sequence[SensorRecording]) -> List[SamplewiseResult]:
        for item in enumerate(recordings):
            self.work_queue.put(item)
        count = min(self.threads, len(recordings))
        if count <= 1:
            self._worker()
        else:
            self.logger.debug(f"Predicting {len(recordings)} recordings on {count} threads")
            workers = [threading.Thread(target=self._worker, name=f"Samplewise-{i}", daemon=True)
                       for i in range(count)]
            for w in workers:
                w.start()
            for w in workers:
                w.join()
        if self._errors:
            raise self._errors[0]
        return [self._results[i] for i in range(len(recordings))]


# --- Metrics ---

@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    """F1 summary; `confusion_matrix` rows are true classes, columns predictions."""
    macro_f1: float
    weighted_f1: float
    per_class: List[ClassScore]
    confusion_matrix: np.ndarray
    n_samples: int
    mode: str
    class_names: Tuple[str, ...] = ()
    flags: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        names = self.class_names or tuple(str(i) for i in range(len(self.per_class)))
        return {
            "mode": self.mode,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "n_samples": self.n_samples,
            "per_class": {name: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
                          for name, s in zip(names, self.per_class)},
            "class_names": list(names),
            "confusion_matrix": self.confusion_matrix.tolist(),
            "flags": sorted(self.flags),
        }


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def f1_scores(pred: Sequence[int], truth: Sequence[int], n_classes: int, mode: str = "segment_wise",
              class_names: Sequence[str] = ()) -> EvalReport:
    """
    Per-class precision, recall and F1 with 0/0 taken as 0.

    Macro-F1 averages over the classes that occur in `truth`; weighted-F1
    weights each class by its support.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DimensionError("f1_scores", pred.shape, truth.shape)
    for name, arr in (("prediction", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise DataError(f"{name} label outside [0, {n_classes})")
    cm = confusion_matrix(pred, truth, n_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros(n_classes), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(n_classes), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    present = support > 0
    macro = float(f1[present].mean()) if present.any() else 0.0
    weighted = float((f1 * support).sum() / support.sum()) if support.sum() else 0.0
    per_class = [ClassScore(float(p), float(r), float(f), int(s))
                 for p, r, f, s in zip(precision, recall, f1, support)]
    return EvalReport(macro, weighted, per_class, cm, int(truth.size), mode, tuple(class_names))


def evaluate_segments(model: HarModel, segs: SegmentSet) -> EvalReport:
    if not len(segs):
        raise DataError("cannot evaluate an empty segment set")
    pred = predict_segments(model, segs)
    return f1_scores(pred, segs.labels, segs.n_classes, "segment_wise", segs.class_names)


def evaluate_samplewise(model: HarModel, recordings: Sequence[SensorRecording], window_len: int,
                        class_names: Sequence[str], stride: int = 1, threads: Optional[int] = None,
                        deterministic: bool = False) -> EvalReport:
    """Sample-wise F1 over the concatenated timestamps of every recording."""
    if not recordings or not sum(r.length for r in recordings):
        raise DataError("cannot evaluate without recordings")
    workers = resolve_threads(threads, deterministic)
    results = SamplewisePool(model, window_len, stride, workers).run(recordings)
    pred = np.concatenate([r.predictions for r in results])
    truth = np.concatenate([r.labels for r in recordings])
    report = f1_scores(pred, truth, len(class_names), "sample_wise", class_names)
    if any(r.padded for r in results):
        report.flags.append("padded_short_recording")
    return report


def write_eval_report(report: EvalReport, out_dir: str) -> Tuple[str, str]:
    """Writes eval_report.json and confusion.csv; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, EVAL_REPORT_FILE)
    write_json(report_path, report.to_json())
    names = list(report.to_json()["class_names"])
    frame = pd.DataFrame(report.confusion_matrix, index=pd.Index(names, name="truth"), columns=names)
    confusion_path = os.path.join(out_dir, CONFUSION_FILE)
    frame.to_csv(confusion_path, lineterminator="\n")
    return report_path, confusion_path


def format_confusion(report: EvalReport) -> str:
    names = list(report.to_json()["class_names"])
    return pd.DataFrame(report.confusion_matrix, index=names, columns=names).to_string()


# --- Exporters ---

def sensor_labels(segs: SegmentSet) -> List[str]:
    return [f"s{sensor_id}" for sensor_id, _ in sensor_widths(segs.channel_layout)]


def class_attention(model: HarModel, segs: SegmentSet, batch_size: int = PREDICT_BATCH) -> Dict[str, np.ndarray]:
    """Per-class mean n x n attention, averaged over timestamps then segments."""
    if not isinstance(model, GcnAttentionModel):
        raise ConfigError(f"attention export needs a gcn_attention checkpoint, got {model.arch.kind}")
    if not model.arch.model.attention_enabled:
        raise ConfigError("attention export needs attention.enabled = true")
    _check_compatible(model, segs)
    n = len(model.arch.sensor_dims)
    per_segment = np.zeros((len(segs), n, n))
    for start in range(0, len(segs), batch_size):
        idx = np.arange(start, min(start + batch_size, len(segs)))
        maps = model.attention_maps(batch_segments(segs, idx, model.arch.model.self_loops))
        per_segment[idx] = maps.mean(axis=1)
    out: Dict[str, np.ndarray] = {}
    for c, name in enumerate(segs.class_names):
        members = segs.labels == c
        if members.any():
            out[name] = per_segment[members].mean(axis=0)
    return out


def export_attention(model: HarModel, segs: SegmentSet, out_dir: str) -> Dict[str, np.ndarray]:
    """Writes attention_<class>.csv per class, attention.csv with every block, and attention.svg."""
    maps = class_attention(model, segs)
    labels = sensor_labels(segs)
    os.makedirs(out_dir, exist_ok=True)
    blocks = []
    for name, m in maps.items():
        frame = pd.DataFrame(m, index=pd.Index(labels, name="sensor"), columns=labels)
        frame.to_csv(os.path.join(out_dir, f"attention_{slug(name)}.csv"), lineterminator="\n")
        block = frame.reset_index()
        block.insert(0, "class", name)
        blocks.append(block)
    if blocks:
        pd.concat(blocks, ignore_index=True).to_csv(os.path.join(out_dir, "attention.csv"), index=False,
                                                    lineterminator="\n")
        plotting.attention_heatmaps(maps, labels, os.path.join(out_dir, "attention.svg"))
    logger.info(f"Exported attention maps for {len(maps)} class(es) to {out_dir}")
    return maps


def embed_segments(model: HarModel, segs: SegmentSet, batch_size: int = PREDICT_BATCH) -> np.ndarray:
    _check_compatible(model, segs)
    chunks = [model.embed(batch_segments(segs, np.arange(s, min(s + batch_size, len(segs))),
                                         model.arch.model.self_loops)).data
              for s in range(0, len(segs), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, 0))


class PcaResult(NamedTuple):
    projection: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray


def pca_project(x: np.ndarray, n_components: int = 2) -> PcaResult:
    """
    PCA through the eigendecomposition of the sample covariance.

    Each component is sign-fixed so its largest-magnitude coordinate is
    positive. Components beyond the feature dimension are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError(f"PCA needs at least 2 rows, got shape {x.shape}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values, kind="stable")[::-1]
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order].T
    k = min(n_components, vectors.shape[0])
    components = np.zeros((n_components, x.shape[1]))
    variance = np.zeros(n_components)
    for i in range(k):
        v = vectors[i]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components[i] = v
        variance[i] = values[i]
    return PcaResult(xc @ components.T, components, mean, variance)


def export_features(model: HarModel, segs: SegmentSet, out_dir: str) -> PcaResult:
    """Writes features.csv (penultimate layer), projection.csv and projection.svg."""
    feats = embed_segments(model, segs)
    pca = pca_project(feats)
    os.makedirs(out_dir, exist_ok=True)
    meta = pd.DataFrame({
        "subject_id": segs.provenance[:, 0],
        "run_id": segs.provenance[:, 1],
        "start_index": segs.provenance[:, 2],
        "label": [segs.class_names[c] for c in segs.labels],
    })
    feature_frame = pd.concat([meta, pd.DataFrame(feats, columns=[f"f{i}" for i in range(feats.shape[1])])], axis=1)
    feature_frame.to_csv(os.path.join(out_dir, "features.csv"), index=False, lineterminator="\n")
    projection = pd.concat([meta, pd.DataFrame(pca.projection, columns=["pc1", "pc2"])], axis=1)
    projection.to_csv(os.path.join(out_dir, "projection.csv"), index=False, lineterminator="\n")
    plotting.projection_scatter(pca.projection, segs.labels, segs.class_names,
                                os.path.join(out_dir, "projection.svg"))
    logger.info(f"Exported {feats.shape[0]} feature rows of width {feats.shape[1]} to {out_dir}")
    return pca


def export_segments(segs: SegmentSet, out_dir: str, per_class: int = 1) -> List[str]:
    """Plots the first `per_class` segments of every class as segment_<class>_<k>.svg."""
    names = [channel_name(s, a) for s, a in segs.channel_layout]
    written = []
    for c, cls in enumerate(segs.class_names):
        for k, i in enumerate(np.flatnonzero(segs.labels == c)[:per_class]):
            subject, run, start = (int(v) for v in segs.provenance[i])
            path = os.path.join(out_dir, f"segment_{slug(cls)}_{k}.svg")
            plotting.segment_plot(segs.segments[i], names, f"{cls} (subject {subject}, run {run}, t0 {start})",
                                  path)
            written.append(path)
    logger.info(f"Exported {len(written)} segment plot(s) to {out_dir}")
    return written
