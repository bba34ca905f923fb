# hargnn/cli.py
"""
Command-line entry point: synth, prepare, train, evaluate, export and
reproduce-hospital.

Exit codes: 0 success, 1 usage or configuration error, 2 data or
checkpoint error, 3 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

from pubsub import pub

from . import __version__
from .checkpoint import load_checkpoint
from .config_handler import LOCK_FILE, RunConfig, load_config, write_lock
from .data_pipeline import (META_FILE, STATS_FILE, DatasetMeta, NormalizationStats, SegmentSet,
                            SensorRecording, load_meta, load_recordings, prepare_dataset, segment_all,
                            sensor_widths, synthesize, synthetic_class_names, write_meta, write_recordings)
from .errors import ConfigError, DataError, HargnnError, NumericError
from .evaluation import (EvalReport, evaluate_samplewise, evaluate_segments, export_attention, export_features,
                         export_segments, format_confusion, write_eval_report)
from .graph_builder import export_graphs
from .models import Architecture, HarModel, architecture_for
from .training import REPORT_FILE, TOPIC_EPOCH_END, EpochRecord, TrainReport, select_checkpoint, train
from .utils import setup_logging, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SPLITS = ("train", "validation", "test")
RECORDINGS_FILE = "recordings.csv"
SUMMARY_FILE = "summary.json"
COMPARISON_FILE = "comparison.json"
EXPORT_KINDS = ("attention", "features", "graphs", "segments")
MODEL_ORDER = ("gcn_attention", "gcn", "ragnn")
EVAL_DIR = "eval_test_sample_wise"


# --- Argument parsing ---

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (flat dotted keys, INI sections or a config.lock.json)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one dotted config key; repeatable")
    common.add_argument("--seed", type=int, help="seed for synthesis and training")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, byte-reproducible run")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR or CRITICAL")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="hargnn", description="Graph-based human activity recognition toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("prepare", parents=[common], help="split, normalize and segment a dataset")
    p.add_argument("--in", dest="in_dir", required=True, help="dataset directory or CSV file")
    p.add_argument("--out", required=True, help="prepared output directory")

    p = sub.add_parser("train", parents=[common], help="train a model on a prepared directory")
    p.add_argument("--data", required=True, help="prepared directory")
    p.add_argument("--out", help="checkpoint directory (overrides train.checkpoint_dir)")
    p.add_argument("--model", help="gcn_attention, gcn or ragnn")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or training run directory")
    p.add_argument("--data", required=True, help="prepared directory")
    p.add_argument("--mode", choices=("sample_wise", "segment_wise"), help="defaults to eval.mode")
    p.add_argument("--split", choices=("test", "validation"), default="test")
    p.add_argument("--out", help="report directory")
    p.add_argument("--model", help="model kind the checkpoint must have; defaults to model.kind")

    p = sub.add_parser("export", parents=[common], help="write figure data")
    p.add_argument("--what", required=True, choices=EXPORT_KINDS)
    p.add_argument("--checkpoint", help="checkpoint file or training run directory (attention, features)")
    p.add_argument("--data", required=True, help="prepared directory")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--per-class", type=int, default=1, help="examples per class for graphs/segments")
    p.add_argument("--out", required=True, help="export directory")

    p = sub.add_parser("reproduce-hospital", parents=[common],
                       help="prepare, train all three models and compare them sample-wise on test")
    p.add_argument("--in", dest="in_dir", required=True, help="dataset directory in the CSV schema")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip().lower()] = value.strip()
    if args.seed is not None:
        values["synth.seed"] = str(args.seed)
        values["train.seed"] = str(args.seed)
    if args.deterministic:
        values["runtime.deterministic"] = "true"
    if args.log_level:
        values["log.level"] = args.log_level
    if getattr(args, "model", None):
        values["model.kind"] = args.model
    if getattr(args, "epochs", None) is not None:
        values["train.epochs"] = str(args.epochs)
    if args.command == "train" and args.out:
        values["train.checkpoint_dir"] = args.out
    return values


# --- Prepared directory helpers ---

def _split_path(prepared_dir: str, split: str) -> str:
    return os.path.join(prepared_dir, f"{split}.csv")


def load_split(prepared_dir: str, split: str) -> Tuple[List[SensorRecording], DatasetMeta]:
    meta = load_meta(os.path.join(prepared_dir, META_FILE))
    return load_recordings(_split_path(prepared_dir, split), meta), meta


def load_stats(prepared_dir: str, recordings: Sequence[SensorRecording]) -> Optional[NormalizationStats]:
    path = os.path.join(prepared_dir, STATS_FILE)
    if not recordings or not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as f:
        return NormalizationStats.from_json(json.load(f), recordings[0].channel_names)


def split_segments(prepared_dir: str, split: str, run_config: RunConfig,
                   window_len: Optional[int] = None) -> Tuple[SegmentSet, List[SensorRecording]]:
    recordings, meta = load_split(prepared_dir, split)
    window = window_len or run_config.data.window_len
    layout = recordings[0].channel_layout if recordings else ()
    stats = load_stats(prepared_dir, recordings)
    segs = segment_all(recordings, window, min(run_config.data.stride, window), meta.class_names, layout, stats)
    return segs, recordings


def configured_architecture(prepared_dir: str, run_config: RunConfig) -> Architecture:
    """The architecture a training run with `run_config` on `prepared_dir` builds."""
    recordings, meta = load_split(prepared_dir, "train")
    layout = recordings[0].channel_layout if recordings else ()
    return architecture_for(run_config.train.model, [w for _, w in sensor_widths(layout)],
                            len(meta.class_names), run_config.data.window_len)


def resolve_checkpoint(path: str) -> str:
    """A run directory resolves to its selected checkpoint."""
    if os.path.isdir(path):
        report_path = os.path.join(path, REPORT_FILE)
        if not os.path.exists(report_path):
            raise ConfigError(f"{path} is a directory without {REPORT_FILE}")
        with open(report_path, encoding="utf-8") as f:
            return select_checkpoint(TrainReport.from_json(json.load(f), path))
    return path


# --- Commands ---

def cmd_synth(args: argparse.Namespace, run_config: RunConfig) -> int:
    recordings = synthesize(run_config.synth, run_config.synth_seed)
    class_names = synthetic_class_names(run_config.synth.n_classes)
    os.makedirs(args.out, exist_ok=True)
    write_recordings(recordings, os.path.join(args.out, RECORDINGS_FILE), class_names)
    write_meta(args.out, DatasetMeta(class_names, float(run_config.synth.sample_rate_hz)))
    write_lock(os.path.join(args.out, LOCK_FILE), run_config)
    if run_config.synth.n_classes == 1:
        logger.warning("Synthetic dataset has a single class")
        print("flag: single_class")
    print(f"Wrote {len(recordings)} recording(s), {len(class_names)} classes to {args.out}")
    return EXIT_OK


def run_prepare(in_dir: str, out_dir: str, run_config: RunConfig) -> dict:
    recordings = load_recordings(in_dir)
    meta = load_meta(os.path.join(in_dir if os.path.isdir(in_dir) else os.path.dirname(os.path.abspath(in_dir)),
                                  META_FILE))
    data = run_config.data
    prepared = prepare_dataset(recordings, data.split, data.window_len, data.stride, meta.class_names,
                               data.target_hz)
    os.makedirs(out_dir, exist_ok=True)
    for split in SPLITS:
        write_recordings(prepared.recordings[split], _split_path(out_dir, split), meta.class_names,
                         prepared.channel_layout)
    rate = data.target_hz or meta.sample_rate_hz
    write_meta(out_dir, DatasetMeta(meta.class_names, float(rate)))
    write_json(os.path.join(out_dir, STATS_FILE), prepared.stats.to_json())
    summary = prepared.summary()
    write_json(os.path.join(out_dir, SUMMARY_FILE), summary)
    write_lock(os.path.join(out_dir, LOCK_FILE), run_config)
    return summary


def cmd_prepare(args: argparse.Namespace, run_config: RunConfig) -> int:
    summary = run_prepare(args.in_dir, args.out, run_config)
    print(f"D={summary['channels']}  T={summary['window_len']}  stride={summary['stride']}")
    for split, info in summary["splits"].items():
        counts = ", ".join(f"{k}: {v}" for k, v in info["per_class"].items())
        print(f"{split:<10} subjects={info['subjects']} segments={info['segments']}  [{counts}]")
    for flag in summary["flags"]:
        print(f"flag: {flag}")
    return EXIT_OK


def _print_epoch(record: EpochRecord):
    val = "-" if record.validation_macro_f1 is None else f"{record.validation_macro_f1:.4f}"
    print(f"{record.epoch:>5}  {record.train_loss:>10.5f}  {record.train_macro_f1:>8.4f}  {val:>8}  "
          f"{record.wall_time:>8.2f}", flush=True)


def run_train(prepared_dir: str, run_config: RunConfig, echo: bool = True) -> TrainReport:
    cfg = run_config.train
    train_set, _ = split_segments(prepared_dir, "train", run_config)
    validation, validation_recs = split_segments(prepared_dir, "validation", run_config)
    if echo:
        print(f"{'epoch':>5}  {'loss':>10}  {'train_f1':>8}  {'val_f1':>8}  {'seconds':>8}")
        pub.subscribe(_print_epoch, TOPIC_EPOCH_END)
    try:
        return train(train_set, validation, cfg, validation_recs, run_config.lock_dict())
    finally:
        if echo:
            pub.unsubscribe(_print_epoch, TOPIC_EPOCH_END)


def cmd_train(args: argparse.Namespace, run_config: RunConfig) -> int:
    report = run_train(args.data, run_config)
    print(f"selected epoch {report.selected_epoch}: {report.selected_checkpoint_path}")
    return EXIT_OK


def run_evaluate(model: HarModel, prepared_dir: str, split: str, mode: str, run_config: RunConfig) -> EvalReport:
    window = model.arch.window_len
    segs, recordings = split_segments(prepared_dir, split, run_config, window)
    if not len(segs) and not recordings:
        raise DataError(f"split '{split}' is empty")
    if mode == "segment_wise":
        return evaluate_segments(model, segs)
    return evaluate_samplewise(model, recordings, window, segs.class_names,
                               stride=run_config.eval.samplewise_stride, threads=run_config.threads,
                               deterministic=run_config.deterministic)


def cmd_evaluate(args: argparse.Namespace, run_config: RunConfig) -> int:
    ckpt = resolve_checkpoint(args.checkpoint)
    model, _ = load_checkpoint(ckpt, expected=configured_architecture(args.data, run_config))
    mode = args.mode or run_config.eval.mode
    report = run_evaluate(model, args.data, args.split, mode, run_config)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(ckpt)), f"eval_{args.split}_{mode}")
    write_eval_report(report, out)
    write_lock(os.path.join(out, LOCK_FILE), run_config)
    print(f"{mode} macro-F1 on {args.split}: {report.macro_f1:.4f} (weighted {report.weighted_f1:.4f}, "
          f"{report.n_samples} samples)")
    print(format_confusion(report))
    for flag in report.flags:
        print(f"flag: {flag}")
    return EXIT_OK


def cmd_export(args: argparse.Namespace, run_config: RunConfig) -> int:
    if args.what in ("attention", "features"):
        if not args.checkpoint:
            raise ConfigError(f"--what {args.what} needs --checkpoint")
        model, _ = load_checkpoint(resolve_checkpoint(args.checkpoint))
        segs, _ = split_segments(args.data, args.split, run_config, model.arch.window_len)
        if args.what == "attention":
            export_attention(model, segs, args.out)
        else:
            export_features(model, segs, args.out)
    else:
        segs, _ = split_segments(args.data, args.split, run_config)
        if args.what == "graphs":
            export_graphs(segs, args.out, args.per_class, run_config.train.self_loops)
        else:
            export_segments(segs, args.out, args.per_class)
    write_lock(os.path.join(args.out, LOCK_FILE), run_config)
    print(f"Exported {args.what} to {args.out}")
    return EXIT_OK


def cmd_reproduce(args: argparse.Namespace, run_config: RunConfig) -> int:
    prepared_dir = os.path.join(args.out, "prepared")
    run_prepare(args.in_dir, prepared_dir, run_config)
    rows = []
    for kind in MODEL_ORDER:
        values = dict(run_config.values)
        values["model.kind"] = kind
        values["train.checkpoint_dir"] = os.path.join(args.out, kind)
        kind_config = load_config(overrides=values)
        if kind_config is None:
            raise ConfigError(f"could not build the configuration for {kind}")
        print(f"== {kind} ==")
        report = run_train(prepared_dir, kind_config)
        model, _ = load_checkpoint(select_checkpoint(report))
        result = run_evaluate(model, prepared_dir, "test", "sample_wise", kind_config)
        report_path, confusion_path = write_eval_report(result, os.path.join(args.out, kind, EVAL_DIR))
        rows.append({
            "model": kind,
            "macro_f1": result.macro_f1,
            "weighted_f1": result.weighted_f1,
            "selected_epoch": report.selected_epoch,
            "n_samples": result.n_samples,
            "eval_report": os.path.relpath(report_path, args.out),
            "confusion": os.path.relpath(confusion_path, args.out),
        })
    write_json(os.path.join(args.out, COMPARISON_FILE), {"models": rows})
    write_lock(os.path.join(args.out, LOCK_FILE), run_config)
    print(f"{'model':<15}{'macro_f1':>10}{'weighted_f1':>13}{'epoch':>7}")
    for row in rows:
        print(f"{row['model']:<15}{row['macro_f1']:>10.4f}{row['weighted_f1']:>13.4f}{row['selected_epoch']:>7}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
    "reproduce-hospital": cmd_reproduce,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        overrides = _overrides(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    run_config = load_config(args.config, overrides)
    if run_config is None:
        logging.critical("Failed to load configuration.")
        return EXIT_USAGE
    setup_logging(run_config.log_level)

    try:
        return COMMANDS[args.command](args, run_config)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except NumericError as e:
        logger.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except HargnnError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_DATA
