# hargnn/checkpoint.py
"""
Binary checkpoint codec.

Layout:
    b"HARGNN1\\0"                     magic, 8 bytes
    u64 little-endian                 header length in bytes
    UTF-8 JSON header                 sorted keys, no whitespace
    raw tensor data                   little-endian float64, in table order

The header holds `format_version`, `model_kind`, `config` (the architecture
echo), `meta` (free-form run information such as the epoch) and `tensors`, a
list of {name, dtype, shape, byte_offset, byte_len} with offsets relative to
the start of the data block.
"""

import json
import logging
import os
import struct
from collections import OrderedDict
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import CheckpointError, ConfigError
from .models import Architecture, HarModel, get_model

logger = logging.getLogger(__name__)

MAGIC = b"HARGNN1\x00"
FORMAT_VERSION = 1
DTYPE = "<f8"
_LEN = struct.Struct("<Q")


def encode(arch: Architecture, tensors: Mapping[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> bytes:
    """Serializes named tensors in the given order."""
    table = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name} holds non-finite values")
        blob = arr.tobytes()
        table.append({"name": name, "dtype": DTYPE, "shape": list(arr.shape),
                      "byte_offset": offset, "byte_len": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": arch.kind,
        "config": arch.to_json(),
        "meta": meta or {},
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return MAGIC + _LEN.pack(len(header_bytes)) + header_bytes + b"".join(blobs)


def decode(payload: bytes) -> Tuple[dict, "OrderedDict[str, np.ndarray]"]:
    """Parses a checkpoint into (header, name -> array). Raises CheckpointError on any inconsistency."""
    if len(payload) < len(MAGIC) + _LEN.size or payload[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (header_len,) = _LEN.unpack_from(payload, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    data_start = start + header_len
    if data_start > len(payload):
        raise CheckpointError(f"header length {header_len} exceeds file size {len(payload)}")
    try:
        header = json.loads(payload[start:data_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {header.get('format_version')!r}")

    data = memoryview(payload)[data_start:]
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header.get("tensors", []):
        try:
            name, dtype = entry["name"], entry["dtype"]
            shape = tuple(int(s) for s in entry["shape"])
            offset, length = int(entry["byte_offset"]), int(entry["byte_len"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"malformed tensor table entry {entry!r}: {e}") from None
        if dtype != DTYPE:
            raise CheckpointError(f"tensor {name} has unsupported dtype {dtype}")
        expected = int(np.prod(shape, dtype=np.int64)) * 8
        if length != expected or offset < 0 or offset + length > len(data):
            raise CheckpointError(f"tensor {name} byte range is inconsistent with shape {shape}")
        arr = np.frombuffer(data[offset:offset + length], dtype=DTYPE).reshape(shape)
        tensors[name] = arr.astype(np.float64, copy=True)
    return header, tensors


def save_checkpoint(path: str, model: HarModel, meta: Optional[Dict[str, Any]] = None):
    """Writes `model`'s parameters; raises CheckpointError if the path is not writable."""
    payload = encode(model.arch, model.state(), meta)
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from None
    logger.debug(f"Saved checkpoint {path} ({len(payload)} bytes)")


def read_checkpoint(path: str) -> Tuple[dict, "OrderedDict[str, np.ndarray]"]:
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    return decode(payload)


def load_checkpoint(path: str, expected: Optional[Architecture] = None) -> Tuple[HarModel, dict]:
    """
    Rebuilds the model stored at `path`.

    When `expected` is given the stored architecture must equal it. Every
    tensor shape is checked against the shapes the architecture implies.

    Returns:
        (model, header)
    """
    header, tensors = read_checkpoint(path)
    arch = Architecture.from_json(header.get("config", {}))
    if header.get("model_kind") != arch.kind:
        raise CheckpointError(f"header model_kind {header.get('model_kind')!r} disagrees with config {arch.kind!r}")
    if expected is not None and arch != expected:
        raise CheckpointError(f"checkpoint architecture {arch.to_json()} does not match the configured "
                              f"{expected.to_json()}")
    try:
        model = get_model(arch)
    except ConfigError as e:
        raise CheckpointError(f"checkpoint describes an unusable model: {e}") from None
    model.load_state(tensors)
    logger.info(f"Loaded {arch.kind} checkpoint from {path}")
    return model, header
