# hargnn/data_pipeline.py
"""
Ingestion and preparation of labeled wearable-sensor streams.

Raw CSV recordings are resampled (optionally), normalized channel-wise with
statistics fitted on the training subjects only, cut into overlapping
windows with majority labels, and partitioned by subject. A seeded generator
produces synthetic datasets in the same shape.
"""

import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, DimensionError
from .utils import write_json

logger = logging.getLogger(__name__)

META_FILE = "dataset.meta.json"
STATS_FILE = "normalization.json"
STD_FLOOR = 1e-8

REQUIRED_COLUMNS = ("subject_id", "run_id", "timestamp", "label")
CHANNEL_PATTERN = re.compile(r"^s(\d+)_(\w+)$")

# The seven activities of the hospital in-patient dataset
HOSPITAL_CLASS_NAMES = (
    "Lying", "Lying Down", "Standing Up", "Sitting", "Sitting Down", "Walking", "Getting Up",
)

ChannelLayout = Tuple[Tuple[int, str], ...]


def channel_name(sensor_id: int, axis: str) -> str:
    return f"s{sensor_id}_{axis}"


def parse_channel_columns(columns: Sequence[str]) -> ChannelLayout:
    """Turns `s<sensor>_<axis>` column names into a (sensor_id, axis) layout."""
    layout = []
    for col in columns:
        match = CHANNEL_PATTERN.match(col)
        if not match:
            raise DataError(f"column {col!r} does not follow the s<sensor>_<axis> naming")
        layout.append((int(match.group(1)), match.group(2)))
    validate_layout(tuple(layout))
    return tuple(layout)


def validate_layout(layout: ChannelLayout):
    """Each sensor must own one contiguous block of columns."""
    seen = set()
    previous = None
    for sensor_id, _ in layout:
        if sensor_id != previous:
            if sensor_id in seen:
                raise DataError(f"channels of sensor {sensor_id} are not contiguous in the layout")
            seen.add(sensor_id)
            previous = sensor_id


def sensor_widths(layout: ChannelLayout) -> List[Tuple[int, int]]:
    """Returns [(sensor_id, d_i)] in layout order."""
    widths: List[Tuple[int, int]] = []
    for sensor_id, _ in layout:
        if widths and widths[-1][0] == sensor_id:
            widths[-1] = (sensor_id, widths[-1][1] + 1)
        else:
            widths.append((sensor_id, 1))
    return widths


# --- Types ---

@dataclass(frozen=True)
class DatasetMeta:
    """Sidecar description of a dataset directory."""
    class_names: Tuple[str, ...]
    sample_rate_hz: float

    def to_json(self) -> dict:
        return {"class_names": list(self.class_names), "sample_rate_hz": self.sample_rate_hz}

    @classmethod
    def from_json(cls, data: dict) -> "DatasetMeta":
        try:
            names = tuple(str(n) for n in data["class_names"])
            rate = float(data["sample_rate_hz"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"invalid dataset meta: {e}") from None
        if not names or len(set(names)) != len(names):
            raise DataError("dataset meta must list unique class names")
        if rate <= 0:
            raise DataError(f"dataset meta sample_rate_hz must be positive, got {rate}")
        return cls(names, rate)


def load_meta(path: str) -> DatasetMeta:
    if not os.path.exists(path):
        raise DataError("dataset meta file not found", path=path)
    with open(path, encoding="utf-8") as f:
        try:
            return DatasetMeta.from_json(json.load(f))
        except json.JSONDecodeError as e:
            raise DataError(f"dataset meta is not valid JSON: {e}", path=path) from None


@dataclass(frozen=True, eq=False)
class SensorRecording:
    """One subject/run: an L x D channel matrix with per-timestamp labels."""
    subject_id: int
    run_id: int
    sample_rate_hz: float
    channels: np.ndarray
    labels: np.ndarray
    channel_layout: ChannelLayout
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.channels.ndim != 2:
            raise DimensionError("SensorRecording", self.channels.shape, detail="channels must be L x D")
        if self.labels.shape != (self.channels.shape[0],):
            raise DimensionError("SensorRecording", self.channels.shape, self.labels.shape)
        if len(self.channel_layout) != self.channels.shape[1]:
            raise DimensionError("SensorRecording", self.channels.shape, (len(self.channel_layout),),
                                 detail="layout width")
        if self.sample_rate_hz <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate_hz}")
        validate_layout(self.channel_layout)

    @property
    def length(self) -> int:
        return int(self.channels.shape[0])

    @property
    def channel_names(self) -> List[str]:
        return [channel_name(s, a) for s, a in self.channel_layout]

    def times(self) -> np.ndarray:
        if self.timestamps is not None:
            return self.timestamps
        return np.arange(self.length) / self.sample_rate_hz


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean and population standard deviation."""
    channels: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> Dict[str, Dict[str, float]]:
        return {ch: {"mean": float(m), "std": float(s)}
                for ch, m, s in zip(self.channels, self.mean, self.std)}

    @classmethod
    def from_json(cls, data: Dict[str, Dict[str, float]], channels: Sequence[str]) -> "NormalizationStats":
        missing = [c for c in channels if c not in data]
        if missing:
            raise DataError(f"normalization stats lack channels {missing}")
        mean = np.array([float(data[c]["mean"]) for c in channels])
        std = np.array([float(data[c]["std"]) for c in channels])
        if np.any(std <= 0):
            raise DataError("normalization std must be positive")
        return cls(tuple(channels), mean, std)


@dataclass(frozen=True, eq=False)
class SegmentSet:
    """
    Windowed tensor N x D x T with one label per window.

    `provenance` rows are (subject_id, run_id, start_index). `flags` carries
    non-fatal conditions such as an empty result.
    """
    segments: np.ndarray
    labels: np.ndarray
    window_len: int
    stride: int
    class_names: Tuple[str, ...]
    channel_layout: ChannelLayout
    provenance: np.ndarray
    normalization_stats: Optional[NormalizationStats] = None
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.segments.ndim != 3 or self.segments.shape[0] != n:
            raise DimensionError("SegmentSet", self.segments.shape, self.labels.shape)
        if n and self.segments.shape[2] != self.window_len:
            raise DimensionError("SegmentSet", self.segments.shape, detail=f"window_len {self.window_len}")
        if self.segments.shape[1] != len(self.channel_layout):
            raise DimensionError("SegmentSet", self.segments.shape, (len(self.channel_layout),))
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError(f"segment labels must lie in [0, {len(self.class_names)})")
        if self.normalization_stats is not None and len(self.normalization_stats.channels) != len(self.channel_layout):
            raise DimensionError("SegmentSet", (len(self.normalization_stats.channels),),
                                 (len(self.channel_layout),), detail="normalization stats width")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices: Sequence[int], flags: Tuple[str, ...] = ()) -> "SegmentSet":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, segments=self.segments[idx], labels=self.labels[idx],
                       provenance=self.provenance[idx], flags=tuple(flags))

    def with_stats(self, stats: NormalizationStats) -> "SegmentSet":
        return replace(self, normalization_stats=stats)

    @classmethod
    def empty(cls, window_len: int, stride: int, class_names: Sequence[str], layout: ChannelLayout,
              stats: Optional[NormalizationStats] = None, flags: Tuple[str, ...] = ()) -> "SegmentSet":
        return cls(np.zeros((0, len(layout), window_len)), np.zeros(0, dtype=np.int64), window_len, stride,
                   tuple(class_names), layout, np.zeros((0, 3), dtype=np.int64), stats, flags)

    @classmethod
    def concat(cls, sets: Sequence["SegmentSet"]) -> "SegmentSet":
        if not sets:
            raise DataError("cannot concatenate zero segment sets")
        first = sets[0]
        for s in sets[1:]:
            if (s.window_len, s.channel_layout, s.class_names) != (first.window_len, first.channel_layout,
                                                                    first.class_names):
                raise DataError("segment sets disagree on window length, layout or classes")
        flags = tuple(sorted({f for s in sets for f in s.flags}))
        return cls(np.concatenate([s.segments for s in sets]), np.concatenate([s.labels for s in sets]),
                   first.window_len, first.stride, first.class_names, first.channel_layout,
                   np.concatenate([s.provenance for s in sets]), first.normalization_stats, flags)


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint subject sets for the hold-out protocol."""
    train_subjects: FrozenSet[int]
    validation_subjects: FrozenSet[int]
    test_subjects: FrozenSet[int]

    def __post_init__(self):
        pairs = [("train", self.train_subjects, "validation", self.validation_subjects),
                 ("train", self.train_subjects, "test", self.test_subjects),
                 ("validation", self.validation_subjects, "test", self.test_subjects)]
        for name_a, a, name_b, b in pairs:
            overlap = set(a) & set(b)
            if overlap:
                raise ConfigError(f"split sets {name_a} and {name_b} overlap on subjects {sorted(overlap)}")
        if not self.train_subjects:
            raise ConfigError("train subject set must not be empty")

    def assign(self, subject_id: int) -> Optional[str]:
        if subject_id in self.train_subjects:
            return "train"
        if subject_id in self.validation_subjects:
            return "validation"
        if subject_id in self.test_subjects:
            return "test"
        return None


def default_split_spec() -> SplitSpec:
    """First eight subjects test, next three train, the rest (subject 12) validation."""
    return SplitSpec(frozenset(range(9, 12)), frozenset({12}), frozenset(range(1, 9)))


class SynthConfig(NamedTuple):
    """Parameters of the synthetic dataset generator."""
    n_subjects: int = 12
    n_classes: int = 7
    n_sensors: int = 2
    channels_per_sensor: int = 3
    sample_rate_hz: float = 10.0
    duration_s: float = 300.0
    noise_std: float = 0.3
    sensor_informativeness: Tuple[float, ...] = (1.0, 1.0)
    bout_min_s: float = 3.0
    bout_max_s: float = 10.0
    subject_jitter: float = 0.05
    class_priority: bool = True


# --- Ingestion ---

def _csv_files(path: str) -> List[str]:
    if os.path.isdir(path):
        files = sorted(os.path.join(path, f) for f in os.listdir(path) if f.endswith(".csv"))
        if not files:
            raise DataError("no CSV files in dataset directory", path=path)
        return files
    if not os.path.exists(path):
        raise DataError("dataset file not found", path=path)
    return [path]


def _meta_for(path: str) -> DatasetMeta:
    directory = path if os.path.isdir(path) else os.path.dirname(os.path.abspath(path))
    return load_meta(os.path.join(directory, META_FILE))


def _numeric_column(frame: pd.DataFrame, col: str, path: str, integer: bool = False) -> np.ndarray:
    raw = frame[col]
    arr = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64, na_value=np.nan)
    bad = ~np.isfinite(arr)
    if bad.any():
        pos = int(np.flatnonzero(bad)[0])
        raise DataError(f"non-numeric cell in column {col!r}: {raw.iloc[pos]!r}", path=path,
                        row=int(frame["_row"].iloc[pos]))
    if integer:
        frac = arr != np.round(arr)
        if frac.any():
            pos = int(np.flatnonzero(frac)[0])
            raise DataError(f"column {col!r} must hold integers, got {raw.iloc[pos]!r}", path=path,
                            row=int(frame["_row"].iloc[pos]))
        return arr.astype(np.int64)
    return arr


def load_recordings(path: str, meta: Optional[DatasetMeta] = None) -> List[SensorRecording]:
    """
    Reads one CSV file or a directory of CSV files into recordings.

    Returns one recording per (subject_id, run_id), ordered by that pair.
    Row numbers in errors are 1-based file lines (the header is line 1).
    """
    meta = meta or _meta_for(path)
    label_index = {name: i for i, name in enumerate(meta.class_names)}
    frames = []
    layout: Optional[ChannelLayout] = None
    for file_path in _csv_files(path):
        logger.info(f"Reading recordings from {file_path}")
        try:
            frame = pd.read_csv(file_path, dtype=str, keep_default_na=False)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DataError(f"unreadable CSV: {e}", path=file_path) from None
        missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
        if missing:
            raise DataError(f"missing column(s) {missing}", path=file_path, row=1)
        channel_cols = [c for c in frame.columns if c not in REQUIRED_COLUMNS]
        if not channel_cols:
            raise DataError("no sensor channel columns", path=file_path, row=1)
        try:
            file_layout = parse_channel_columns(channel_cols)
        except DataError as e:
            raise DataError(str(e), path=file_path, row=1) from None
        if layout is None:
            layout = file_layout
        elif layout != file_layout:
            raise DataError("channel columns differ from earlier files", path=file_path, row=1)
        frame["_row"] = np.arange(len(frame)) + 2
        frame["_file"] = file_path
        frames.append((file_path, frame, channel_cols))

    parsed = []
    for file_path, frame, channel_cols in frames:
        subjects = _numeric_column(frame, "subject_id", file_path, integer=True)
        runs = _numeric_column(frame, "run_id", file_path, integer=True)
        times = _numeric_column(frame, "timestamp", file_path)
        channels = np.column_stack([_numeric_column(frame, c, file_path) for c in channel_cols])
        labels = np.empty(len(frame), dtype=np.int64)
        for pos, token in enumerate(frame["label"]):
            idx = label_index.get(token)
            if idx is None:
                raise DataError(f"unknown label {token!r}", path=file_path, row=int(frame["_row"].iloc[pos]))
            labels[pos] = idx
        parsed.append((file_path, frame["_row"].to_numpy(), subjects, runs, times, channels, labels))

    groups: Dict[Tuple[int, int], List[int]] = {}
    rows = []
    for file_path, row_nums, subjects, runs, times, channels, labels in parsed:
        for i in range(len(subjects)):
            key = (int(subjects[i]), int(runs[i]))
            groups.setdefault(key, []).append(len(rows))
            rows.append((file_path, int(row_nums[i]), times[i], channels[i], labels[i]))

    recordings = []
    for (subject_id, run_id) in sorted(groups):
        members = [rows[i] for i in groups[(subject_id, run_id)]]
        ts = np.array([m[2] for m in members])
        steps = np.diff(ts)
        if np.any(steps <= 0):
            pos = int(np.flatnonzero(steps <= 0)[0]) + 1
            raise DataError(f"timestamps not strictly increasing for subject {subject_id} run {run_id}",
                            path=members[pos][0], row=members[pos][1])
        recordings.append(SensorRecording(
            subject_id=subject_id, run_id=run_id, sample_rate_hz=meta.sample_rate_hz,
            channels=np.array([m[3] for m in members], dtype=np.float64),
            labels=np.array([m[4] for m in members], dtype=np.int64),
            channel_layout=layout, timestamps=ts))
    logger.info(f"Loaded {len(recordings)} recording(s) with {len(layout or ())} channel(s)")
    return recordings


def write_recordings(recordings: Sequence[SensorRecording], path: str, class_names: Sequence[str],
                     layout: Optional[ChannelLayout] = None):
    """Writes recordings in the ingestion CSV schema; with no recordings only the header is written."""
    if not recordings:
        columns = list(REQUIRED_COLUMNS[:3]) + [channel_name(s, a) for s, a in layout or ()] + ["label"]
        pd.DataFrame(columns=columns).to_csv(path, index=False, lineterminator="\n")
        return
    parts = []
    for rec in recordings:
        frame = pd.DataFrame(rec.channels, columns=rec.channel_names)
        frame.insert(0, "timestamp", rec.times())
        frame.insert(0, "run_id", rec.run_id)
        frame.insert(0, "subject_id", rec.subject_id)
        frame["label"] = [class_names[i] for i in rec.labels]
        parts.append(frame)
    pd.concat(parts, ignore_index=True).to_csv(path, index=False, lineterminator="\n")


def write_meta(directory: str, meta: DatasetMeta):
    write_json(os.path.join(directory, META_FILE), meta.to_json())


# --- Preprocessing ---

def resample(rec: SensorRecording, target_hz: float) -> SensorRecording:
    """
    Linear interpolation onto a uniform grid at `target_hz`.

    Labels come from the nearest source sample. Equal rates return the input.
    """
    if target_hz <= 0:
        raise ConfigError(f"target rate must be positive, got {target_hz}")
    if target_hz == rec.sample_rate_hz:
        return rec
    if target_hz > rec.sample_rate_hz:
        raise ConfigError(f"upsampling from {rec.sample_rate_hz} Hz to {target_hz} Hz is not supported")
    step = rec.sample_rate_hz / target_hz
    n_out = int(np.floor((rec.length - 1) / step + 1e-9)) + 1
    positions = np.arange(n_out) * step
    source = np.arange(rec.length, dtype=np.float64)
    channels = np.column_stack([np.interp(positions, source, rec.channels[:, d])
                                for d in range(rec.channels.shape[1])])
    nearest = np.clip(np.rint(positions).astype(np.int64), 0, rec.length - 1)
    t0 = float(rec.times()[0])
    return replace(rec, sample_rate_hz=float(target_hz), channels=channels, labels=rec.labels[nearest],
                   timestamps=t0 + np.arange(n_out) / target_hz)


def fit_normalizer(recordings: Sequence[SensorRecording]) -> NormalizationStats:
    """Pools every timestamp of the given recordings per channel."""
    if not recordings:
        raise DataError("cannot fit normalization statistics on zero recordings")
    layout = recordings[0].channel_layout
    for rec in recordings[1:]:
        if rec.channel_layout != layout:
            raise DataError("recordings disagree on channel layout")
    pooled = np.concatenate([rec.channels for rec in recordings], axis=0)
    if pooled.shape[0] < 2:
        raise DataError("normalization needs at least 2 samples per channel")
    mean = pooled.mean(axis=0)
    std = np.maximum(pooled.std(axis=0), STD_FLOOR)
    return NormalizationStats(tuple(recordings[0].channel_names), mean, std)


def apply_normalizer(rec: SensorRecording, stats: NormalizationStats) -> SensorRecording:
    """(x - mean) / std per channel. Not idempotent."""
    if len(stats.channels) != rec.channels.shape[1]:
        raise DimensionError("apply_normalizer", rec.channels.shape, (len(stats.channels),))
    return replace(rec, channels=(rec.channels - stats.mean) / stats.std)


def majority_label(window_labels: np.ndarray) -> int:
    """
    Most frequent label in the window.

    Ties go to the label of the latest timestamp whose label is among the
    tied candidates, i.e. the final timestamp's label when it is tied.
    """
    counts = np.bincount(window_labels)
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1:
        return int(tied[0])
    for label in window_labels[::-1]:
        if label in tied:
            return int(label)
    return int(tied[0])  # pragma: no cover


def segment(rec: SensorRecording, window_len: int, stride: int, class_names: Sequence[str],
            stats: Optional[NormalizationStats] = None) -> SegmentSet:
    """
    Cuts windows starting at 0, stride, 2*stride, ... that fit inside the recording.

    Each segment is the D x T transpose of the window. A window longer than
    the recording yields an empty set flagged `window_exceeds_recording`.
    """
    if window_len < 1 or not 1 <= stride <= window_len:
        raise ConfigError(f"need window_len >= 1 and 1 <= stride <= window_len, got {window_len}, {stride}")
    if window_len > rec.length:
        logger.warning(f"Recording subject {rec.subject_id} run {rec.run_id} has {rec.length} samples, "
                       f"shorter than window {window_len}; no segments")
        return SegmentSet.empty(window_len, stride, class_names, rec.channel_layout, stats,
                                flags=("window_exceeds_recording",))
    starts = np.arange(0, rec.length - window_len + 1, stride)
    segments = np.stack([rec.channels[s:s + window_len].T for s in starts])
    labels = np.array([majority_label(rec.labels[s:s + window_len]) for s in starts], dtype=np.int64)
    provenance = np.column_stack([np.full(starts.size, rec.subject_id), np.full(starts.size, rec.run_id),
                                  starts]).astype(np.int64)
    return SegmentSet(segments, labels, window_len, stride, tuple(class_names), rec.channel_layout,
                      provenance, stats)


def segment_all(recordings: Sequence[SensorRecording], window_len: int, stride: int,
                class_names: Sequence[str], layout: ChannelLayout,
                stats: Optional[NormalizationStats] = None) -> SegmentSet:
    parts = [segment(rec, window_len, stride, class_names, stats) for rec in recordings]
    parts = [p for p in parts if len(p)]
    if not parts:
        return SegmentSet.empty(window_len, stride, class_names, layout, stats, flags=("empty",))
    return SegmentSet.concat(parts)


def split_by_subject(segs: SegmentSet, spec: SplitSpec) -> Tuple[SegmentSet, SegmentSet, SegmentSet]:
    """Partitions segments by provenance subject into (train, validation, test)."""
    buckets: Dict[str, List[int]] = {"train": [], "validation": [], "test": []}
    for i, subject_id in enumerate(segs.provenance[:, 0] if len(segs) else []):
        name = spec.assign(int(subject_id))
        if name is None:
            raise DataError(f"subject {int(subject_id)} is in no split set")
        buckets[name].append(i)
    out = []
    for name in ("train", "validation", "test"):
        flags: Tuple[str, ...] = ()
        if not buckets[name]:
            logger.warning(f"Split '{name}' is empty")
            flags = ("empty_split",)
        out.append(segs.subset(buckets[name], flags=flags))
    return out[0], out[1], out[2]


def split_recordings(recordings: Sequence[SensorRecording],
                     spec: SplitSpec) -> Dict[str, List[SensorRecording]]:
    buckets: Dict[str, List[SensorRecording]] = {"train": [], "validation": [], "test": []}
    for rec in recordings:
        name = spec.assign(rec.subject_id)
        if name is None:
            raise DataError(f"subject {rec.subject_id} is in no split set")
        buckets[name].append(rec)
    return buckets


@dataclass
class PreparedData:
    """Output of the pipeline driver."""
    recordings: Dict[str, List[SensorRecording]]
    segments: Dict[str, SegmentSet]
    stats: NormalizationStats
    class_names: Tuple[str, ...]
    channel_layout: ChannelLayout
    flags: List[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "channels": len(self.channel_layout),
            "window_len": next(iter(self.segments.values())).window_len,
            "stride": next(iter(self.segments.values())).stride,
            "class_names": list(self.class_names),
            "normalization": "population std (1/N), floored at 1e-8, fit on train split only",
            "flags": sorted(self.flags),
            "splits": {
                name: {
                    "subjects": sorted({r.subject_id for r in self.recordings[name]}),
                    "segments": len(segs),
                    "per_class": {c: int(n) for c, n in zip(self.class_names, segs.class_counts())},
                }
                for name, segs in self.segments.items()
            },
        }


def prepare_dataset(recordings: Sequence[SensorRecording], spec: SplitSpec, window_len: int, stride: int,
                    class_names: Sequence[str], target_hz: Optional[float] = None) -> PreparedData:
    """
    Split by subject, fit normalization on train only, apply to all, then segment.
    """
    if not recordings:
        raise DataError("no recordings to prepare")
    if target_hz:
        recordings = [resample(r, target_hz) for r in recordings]
    layout = recordings[0].channel_layout
    buckets = split_recordings(recordings, spec)
    if not buckets["train"]:
        raise DataError("training split has no recordings")
    stats = fit_normalizer(buckets["train"])
    normalized = {name: [apply_normalizer(r, stats) for r in recs] for name, recs in buckets.items()}
    flags = []
    segments = {}
    for name, recs in normalized.items():
        segments[name] = segment_all(recs, window_len, stride, class_names, layout, stats)
        if not len(segments[name]):
            logger.warning(f"Split '{name}' produced no segments")
            flags.append(f"empty_{name}")
    train_counts = segments["train"].class_counts()
    absent = [class_names[i] for i in np.flatnonzero(train_counts == 0)]
    if absent:
        logger.warning(f"Training split lacks classes {absent}")
        flags.append("train_missing_classes")
    return PreparedData(normalized, segments, stats, tuple(class_names), layout, flags)


# --- Synthesis ---

def synthetic_class_names(n_classes: int) -> Tuple[str, ...]:
    if n_classes <= len(HOSPITAL_CLASS_NAMES):
        return HOSPITAL_CLASS_NAMES[:n_classes]
    return tuple(f"class_{k}" for k in range(n_classes))


def _validate_synth(cfg: SynthConfig):
    problems = []
    for name in ("n_subjects", "n_classes", "n_sensors", "channels_per_sensor"):
        if int(getattr(cfg, name)) < 1:
            problems.append(f"{name} must be >= 1")
    if cfg.sample_rate_hz <= 0:
        problems.append("sample_rate_hz must be positive")
    if cfg.duration_s * cfg.sample_rate_hz < 1:
        problems.append("duration_s too short for one sample")
    if cfg.noise_std < 0:
        problems.append("noise_std must be >= 0")
    if len(cfg.sensor_informativeness) != cfg.n_sensors:
        problems.append(f"sensor_informativeness needs {cfg.n_sensors} entries")
    if any(v < 0 for v in cfg.sensor_informativeness):
        problems.append("sensor_informativeness entries must be >= 0")
    if not 0 < cfg.bout_min_s <= cfg.bout_max_s:
        problems.append("need 0 < bout_min_s <= bout_max_s")
    if cfg.subject_jitter < 0:
        problems.append("subject_jitter must be >= 0")
    if problems:
        raise ConfigError("invalid synthetic config: " + "; ".join(problems))


def class_waveform(class_idx: int, channel_idx: int, tau: np.ndarray) -> np.ndarray:
    """Noise-free signal of a class on one channel, `tau` seconds into a bout."""
    freq = 0.2 + 0.3 * class_idx + 0.07 * channel_idx
    phase = 2 * np.pi * ((0.37 * class_idx + 0.19 * channel_idx) % 1.0)
    offset = 0.8 * np.cos(2 * np.pi * ((0.29 * class_idx + 0.13 * channel_idx) % 1.0))
    return offset + np.sin(2 * np.pi * freq * tau + phase)


def priority_sensors(class_idx: int, n_sensors: int) -> Tuple[int, ...]:
    """
    0-based sensors whose channels carry a class's waveform.

    Every third class starting at 1 uses all sensors; the others are
    assigned one sensor in turn, so which sensor matters depends on the class.
    """
    if n_sensors == 1 or class_idx % 3 == 1:
        return tuple(range(n_sensors))
    return (class_idx % n_sensors,)


def decoy_class(class_idx: int, sensor: int, n_classes: int, n_sensors: int) -> int:
    """
    Class whose waveform `sensor` shows during a bout of `class_idx` when the
    sensor is not one of the class's priority sensors: the next class, in
    cyclic order, that uses that sensor. No two classes end up with the same
    waveform on every sensor.
    """
    for step in range(1, n_classes):
        other = (class_idx + step) % n_classes
        if sensor in priority_sensors(other, n_sensors):
            return other
    return class_idx


def synthesize(cfg: SynthConfig, seed: int) -> List[SensorRecording]:
    """
    Seeded synthetic dataset: one recording per subject made of activity bouts.

    Bout classes cycle through shuffled permutations of all classes; bout
    lengths are uniform in [bout_min_s, bout_max_s]. With `class_priority`
    the class waveform appears only on the sensors `priority_sensors` names
    for that class; each remaining sensor shows the waveform of the class
    `decoy_class` picks, so some classes are told apart only by combining
    sensors. Classes whose priority sensors all have zero informativeness
    move to the informative sensors. Without `class_priority` every sensor
    carries the class waveform. All channels are scaled by their sensor's
    informativeness, then get Gaussian noise.
    """
    _validate_synth(cfg)
    rng = np.random.default_rng(seed)
    rate = float(cfg.sample_rate_hz)
    n_samples = int(round(cfg.duration_s * rate))
    cps = cfg.channels_per_sensor
    d = cfg.n_sensors * cps
    layout = tuple((s + 1, axis) for s in range(cfg.n_sensors)
                   for axis in _axis_names(cps))
    gain = np.repeat(np.asarray(cfg.sensor_informativeness, dtype=np.float64), cps)
    min_len = max(1, int(round(cfg.bout_min_s * rate)))
    max_len = max(min_len, int(round(cfg.bout_max_s * rate)))
    informative = [s for s, v in enumerate(cfg.sensor_informativeness) if v > 0]

    recordings = []
    for subject in range(1, cfg.n_subjects + 1):
        amplitude = 1.0 + cfg.subject_jitter * rng.standard_normal()
        channels = np.empty((n_samples, d))
        labels = np.empty(n_samples, dtype=np.int64)
        order: List[int] = []
        pos = 0
        while pos < n_samples:
            if not order:
                order = list(rng.permutation(cfg.n_classes))
            cls = int(order.pop(0))
            length = min(int(rng.integers(min_len, max_len + 1)), n_samples - pos)
            tau = np.arange(length) / rate
            active: Sequence[int] = range(cfg.n_sensors)
            if cfg.class_priority:
                active = [s for s in priority_sensors(cls, cfg.n_sensors) if s in informative] or informative
            for ch in range(d):
                shown = cls if ch // cps in active else decoy_class(cls, ch // cps, cfg.n_classes, cfg.n_sensors)
                channels[pos:pos + length, ch] = amplitude * gain[ch] * class_waveform(shown, ch, tau)
            labels[pos:pos + length] = cls
            pos += length
        if cfg.noise_std > 0:
            channels = channels + cfg.noise_std * rng.standard_normal(channels.shape)
        recordings.append(SensorRecording(subject, 1, rate, channels, labels, layout,
                                          timestamps=np.arange(n_samples) / rate))
    logger.info(f"Synthesized {len(recordings)} subject(s), {cfg.n_classes} classes, {d} channels, seed {seed}")
    return recordings


def _axis_names(count: int) -> List[str]:
    base = ["x", "y", "z"]
    return base[:count] if count <= 3 else [f"c{k}" for k in range(count)]
