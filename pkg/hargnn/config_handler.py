# hargnn/config_handler.py
"""
Handles loading, validation, and access for run configuration.

Settings use dotted keys (`train.batch_size`). A config file may be flat
`key = value` lines (read as the [DEFAULT] section) or INI sections
(`[train]` + `batch_size = 100`); both resolve to the same keys. A
`config.lock.json` written by a previous run is accepted as well, which
makes any run replayable.
"""

import configparser
import json
import logging
import os
from typing import Dict, NamedTuple, Optional, Tuple

from .data_pipeline import SplitSpec, SynthConfig
from .errors import ConfigError
from .utils import write_json

LOCK_FILE = "config.lock.json"

# Default values; every default equals the published setting where one exists
DEFAULT_CONFIG: Dict[str, str] = {
    'log.level': 'INFO',
    'runtime.threads': '0',                 # 0 = one per CPU, capped by HARGNN_THREADS
    'runtime.deterministic': 'false',
    'synth.seed': '0',
    'synth.n_subjects': '12',
    'synth.n_classes': '7',
    'synth.n_sensors': '2',
    'synth.channels_per_sensor': '3',
    'synth.sample_rate_hz': '10',
    'synth.duration_s': '300',
    'synth.noise_std': '0.3',
    'synth.informativeness': '1,1',
    'synth.bout_min_s': '3',
    'synth.bout_max_s': '10',
    'synth.subject_jitter': '0.05',
    'synth.class_priority': 'true',
    'data.window_len': '24',
    'data.stride': '12',                    # 50% overlap of 24 samples
    'data.target_hz': '',                   # empty = keep the recorded rate
    'data.test_subjects': '1-8',
    'data.train_subjects': '9-11',
    'data.validation_subjects': '12',
    'model.kind': 'gcn_attention',
    'model.hidden': '16',
    'gcn.layers': '5',
    'gcn.self_loops': 'true',
    'attention.repeats': '1',
    'attention.enabled': 'true',
    'ragnn.lstm_hidden': '16',
    'ragnn.gat_layers': '2',
    'ragnn.gat_width': '16',
    'ragnn.leaky_slope': '0.2',
    'train.epochs': '100',
    'train.batch_size': '100',
    'train.learning_rate': '0.01',
    'train.beta1': '0.9',
    'train.beta2': '0.999',
    'train.adam_eps': '1e-8',
    'train.seed': '0',
    'train.class_weighting': 'false',
    'train.checkpoint_dir': 'runs',
    'train.validation_mode': 'segment_wise',
    'eval.mode': 'sample_wise',
    'eval.samplewise_stride': '1',
}

VALID_LOG_LEVELS = {'CRITICAL', 'ERROR', 'WARNING', 'INFO', 'DEBUG'}
VALID_MODEL_KINDS = {'gcn_attention', 'gcn', 'ragnn'}
VALID_EVAL_MODES = {'sample_wise', 'segment_wise'}
_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


class ModelConfig(NamedTuple):
    """Architecture settings shared by the three classifiers."""
    kind: str = 'gcn_attention'
    hidden: int = 16
    gcn_layers: int = 5
    self_loops: bool = True
    attention_repeats: int = 1
    attention_enabled: bool = True
    lstm_hidden: int = 16
    gat_layers: int = 2
    gat_width: int = 16
    leaky_slope: float = 0.2


class DataConfig(NamedTuple):
    window_len: int = 24
    stride: int = 12
    target_hz: Optional[float] = None
    split: Optional[SplitSpec] = None


class TrainConfig(NamedTuple):
    """Optimisation settings plus the architecture being trained."""
    model: ModelConfig = ModelConfig()
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    window_len: int = 24
    stride: int = 12
    class_weighting: bool = False
    checkpoint_dir: str = 'runs'
    validation_mode: str = 'segment_wise'
    deterministic: bool = False
    threads: int = 1

    @property
    def model_kind(self) -> str:
        return self.model.kind

    @property
    def hidden(self) -> int:
        return self.model.hidden

    @property
    def gcn_layers(self) -> int:
        return self.model.gcn_layers

    @property
    def self_loops(self) -> bool:
        return self.model.self_loops

    @property
    def attention_repeats(self) -> int:
        return self.model.attention_repeats


class EvalConfig(NamedTuple):
    mode: str = 'sample_wise'
    samplewise_stride: int = 1


class RunConfig(NamedTuple):
    """Fully resolved configuration of one command invocation."""
    synth: SynthConfig
    synth_seed: int
    data: DataConfig
    train: TrainConfig
    eval: EvalConfig
    log_level: str
    threads: int
    deterministic: bool
    values: Dict[str, str]

    def lock_dict(self) -> Dict[str, str]:
        return dict(sorted(self.values.items()))


# --- Value parsers ---

def parse_bool(key: str, raw: str) -> bool:
    token = raw.strip().lower()
    if token in _TRUE:
        return True
    if token in _FALSE:
        return False
    raise ConfigError(f"{key} must be a boolean, got {raw!r}")


def parse_subjects(key: str, raw: str) -> frozenset:
    """Parses lists like '1-8', '9,10,11' or '1-3,5'."""
    subjects = set()
    for part in raw.replace(' ', '').split(','):
        if not part:
            continue
        try:
            if '-' in part:
                lo, hi = (int(v) for v in part.split('-', 1))
                if hi < lo:
                    raise ValueError(part)
                subjects.update(range(lo, hi + 1))
            else:
                subjects.add(int(part))
        except ValueError:
            raise ConfigError(f"{key} has an invalid subject range {part!r}") from None
    return frozenset(subjects)


def _int(values: Dict[str, str], key: str, minimum: Optional[int] = None) -> int:
    try:
        value = int(values[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {values[key]!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _float(values: Dict[str, str], key: str, positive: bool = False) -> float:
    try:
        value = float(values[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {values[key]!r}") from None
    if positive and not value > 0:
        raise ConfigError(f"{key} must be positive, got {value}")
    return value


def _choice(values: Dict[str, str], key: str, choices: set, upper: bool = False) -> str:
    value = values[key].strip()
    value = value.upper() if upper else value.lower()
    if value not in choices:
        raise ConfigError(f"Invalid {key} '{value}'. Must be one of: {sorted(choices)}")
    return value


def build_run_config(values: Dict[str, str]) -> RunConfig:
    """Validates the dotted-key map and builds the typed configuration."""
    unknown = sorted(set(values) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {unknown}")

    try:
        informativeness = tuple(float(v) for v in values['synth.informativeness'].replace(' ', '').split(',') if v)
    except ValueError:
        raise ConfigError(f"synth.informativeness must be comma-separated numbers, got {values['synth.informativeness']!r}") from None
    synth = SynthConfig(
        n_subjects=_int(values, 'synth.n_subjects', 1),
        n_classes=_int(values, 'synth.n_classes', 1),
        n_sensors=_int(values, 'synth.n_sensors', 1),
        channels_per_sensor=_int(values, 'synth.channels_per_sensor', 1),
        sample_rate_hz=_float(values, 'synth.sample_rate_hz', positive=True),
        duration_s=_float(values, 'synth.duration_s', positive=True),
        noise_std=_float(values, 'synth.noise_std'),
        sensor_informativeness=informativeness,
        bout_min_s=_float(values, 'synth.bout_min_s', positive=True),
        bout_max_s=_float(values, 'synth.bout_max_s', positive=True),
        subject_jitter=_float(values, 'synth.subject_jitter'),
        class_priority=parse_bool('synth.class_priority', values['synth.class_priority']),
    )
    if len(informativeness) != synth.n_sensors:
        raise ConfigError(f"synth.informativeness needs {synth.n_sensors} values, got {len(informativeness)}")

    window_len = _int(values, 'data.window_len', 2)
    stride = _int(values, 'data.stride', 1)
    if stride > window_len:
        raise ConfigError(f"data.stride ({stride}) must not exceed data.window_len ({window_len})")
    target_raw = values['data.target_hz'].strip()
    target_hz = _float(values, 'data.target_hz', positive=True) if target_raw else None
    split = SplitSpec(parse_subjects('data.train_subjects', values['data.train_subjects']),
                      parse_subjects('data.validation_subjects', values['data.validation_subjects']),
                      parse_subjects('data.test_subjects', values['data.test_subjects']))
    data = DataConfig(window_len, stride, target_hz, split)

    model = ModelConfig(
        kind=_choice(values, 'model.kind', VALID_MODEL_KINDS),
        hidden=_int(values, 'model.hidden', 1),
        gcn_layers=_int(values, 'gcn.layers', 1),
        self_loops=parse_bool('gcn.self_loops', values['gcn.self_loops']),
        attention_repeats=_int(values, 'attention.repeats', 1),
        attention_enabled=parse_bool('attention.enabled', values['attention.enabled']),
        lstm_hidden=_int(values, 'ragnn.lstm_hidden', 1),
        gat_layers=_int(values, 'ragnn.gat_layers', 1),
        gat_width=_int(values, 'ragnn.gat_width', 1),
        leaky_slope=_float(values, 'ragnn.leaky_slope'),
    )

    deterministic = parse_bool('runtime.deterministic', values['runtime.deterministic'])
    threads = _int(values, 'runtime.threads', 0)
    train = TrainConfig(
        model=model,
        epochs=_int(values, 'train.epochs', 1),
        batch_size=_int(values, 'train.batch_size', 1),
        learning_rate=_float(values, 'train.learning_rate', positive=True),
        betas=(_float(values, 'train.beta1'), _float(values, 'train.beta2')),
        adam_eps=_float(values, 'train.adam_eps', positive=True),
        seed=_int(values, 'train.seed'),
        window_len=window_len,
        stride=stride,
        class_weighting=parse_bool('train.class_weighting', values['train.class_weighting']),
        checkpoint_dir=values['train.checkpoint_dir'].strip() or 'runs',
        validation_mode=_choice(values, 'train.validation_mode', VALID_EVAL_MODES),
        deterministic=deterministic,
        threads=threads,
    )
    if not all(0 <= b < 1 for b in train.betas):
        raise ConfigError(f"train.beta1/beta2 must lie in [0, 1), got {train.betas}")

    evaluation = EvalConfig(
        mode=_choice(values, 'eval.mode', VALID_EVAL_MODES),
        samplewise_stride=_int(values, 'eval.samplewise_stride', 1),
    )
    if evaluation.samplewise_stride > window_len:
        raise ConfigError("eval.samplewise_stride must not exceed data.window_len")

    return RunConfig(
        synth=synth,
        synth_seed=_int(values, 'synth.seed'),
        data=data,
        train=train,
        eval=evaluation,
        log_level=_choice(values, 'log.level', VALID_LOG_LEVELS, upper=True),
        threads=threads,
        deterministic=deterministic,
        values=dict(values),
    )


def _read_config_file(config_path: str) -> Dict[str, str]:
    if config_path.endswith('.json'):
        with open(config_path, encoding='utf-8') as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ConfigError(f"Lock file {config_path} must hold a JSON object")
        return {str(k): str(v) for k, v in data.items()}

    with open(config_path, encoding='utf-8') as f:
        text = f.read()
    first = next((ln.strip() for ln in text.splitlines()
                  if ln.strip() and not ln.strip().startswith(('#', ';'))), '')
    if not first.startswith('['):
        text = '[DEFAULT]\n' + text  # flat dotted-key file
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text, source=config_path)
    values = {k: v for k, v in parser.defaults().items()}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in parser.defaults():
                continue
            values[f"{section}.{key}"] = value
    return values


def load_config(config_path: Optional[str] = None,
                overrides: Optional[Dict[str, str]] = None) -> Optional[RunConfig]:
    """
    Loads and validates configuration.

    Values are resolved as: defaults, then the file (INI, flat dotted keys or
    lock JSON), then `overrides`. Returns None and logs the reason if the
    file is missing or any value is invalid.

    Args:
        config_path: Optional path to a config or lock file.
        overrides: Dotted-key values taking precedence over the file.

    Returns:
        A RunConfig, or None if an error occurs.
    """
    logger = logging.getLogger(__name__)
    values = DEFAULT_CONFIG.copy()

    if config_path:
        if not os.path.exists(config_path):
            logger.error(f"Configuration file not found: {config_path}")
            return None
        try:
            logger.info(f"Reading configuration from: {config_path}")
            values.update(_read_config_file(config_path))
        except (configparser.Error, json.JSONDecodeError, ConfigError) as e:
            logger.error(f"Error parsing configuration file {config_path}: {e}")
            return None

    for key, value in (overrides or {}).items():
        values[key.strip().lower()] = str(value)

    try:
        run_config = build_run_config(values)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return None
    except Exception as e:
        logger.error(f"Unexpected error loading configuration: {e}", exc_info=True)
        return None

    logger.debug(f"Configuration loaded: {run_config.lock_dict()}")
    return run_config


def write_lock(path: str, run_config: RunConfig):
    """Writes the resolved dotted-key map; `load_config(path)` replays it."""
    write_json(path, run_config.lock_dict())
