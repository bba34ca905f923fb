# hargnn/errors.py
"""
Exception types raised by the HARGNN toolkit.

Library code raises these; the command-line layer maps them to exit codes.
"""

from typing import Optional, Sequence


class HargnnError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(HargnnError, ValueError):
    """Raised when tensor shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        shape_txt = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shape_txt}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DataError(HargnnError, ValueError):
    """Raised for malformed datasets; carries file and row context when known."""

    def __init__(self, message: str, path: Optional[str] = None, row: Optional[int] = None):
        self.path = path
        self.row = row
        where = []
        if path:
            where.append(f"file {path}")
        if row is not None:
            where.append(f"row {row}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)


class ConfigError(HargnnError, ValueError):
    """Raised for invalid or conflicting configuration values."""


class CheckpointError(HargnnError, ValueError):
    """Raised when a checkpoint is malformed or does not match the architecture."""


class NumericError(HargnnError, ArithmeticError):
    """Raised when training produces a non-finite loss."""


class TapeError(HargnnError, RuntimeError):
    """Raised when a computation tape is replayed after backward."""
