# tests/test_utils.py

import io
import json
import logging

import pytest

from hargnn.utils import THREADS_ENV_VAR, dumps_json, resolve_threads, setup_logging, write_json


@pytest.fixture
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


def test_setup_logging_format(restore_root_logger):
    stream = io.StringIO()
    setup_logging("debug", stream)
    logging.getLogger("hargnn.training").info("epoch done")
    line = stream.getvalue().strip().splitlines()[-1]
    assert " - MainThread - INFO - hargnn.training - epoch done" in line
    assert logging.getLogger().level == logging.DEBUG
    assert logging.getLogger("matplotlib").level == logging.WARNING


def test_setup_logging_invalid_level_falls_back_to_info(restore_root_logger):
    stream = io.StringIO()
    setup_logging("LOUD", stream)
    assert logging.getLogger().level == logging.INFO
    assert "Unknown log level 'LOUD'" in stream.getvalue()


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
    assert resolve_threads(4, deterministic=True) == 1
    assert resolve_threads(3) == 3
    assert resolve_threads(0) >= 1
    monkeypatch.setenv(THREADS_ENV_VAR, "2")
    assert resolve_threads(8) == 2
    assert resolve_threads(1) == 1
    monkeypatch.setenv(THREADS_ENV_VAR, "many")
    assert resolve_threads(5) == 5


def test_json_output_is_sorted_and_stable(tmp_path):
    data = {"b": [1, 2], "a": {"z": 1.5, "y": None}}
    text = dumps_json(data)
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
    path = tmp_path / "nested" / "out.json"
    write_json(str(path), data)
    assert path.read_text(encoding="utf-8") == text
    assert json.loads(text) == data


def test_json_rejects_nan():
    with pytest.raises(ValueError):
        dumps_json({"loss": float("nan")})
