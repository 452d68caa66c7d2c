import io
import json
import logging
import pytest
from src.config import Config, configure_logging
from src.exceptions import ValidationError


def test_defaults():
    config = Config()
    assert config.rtol == 1e-10
    assert config.seed == 0
    assert config.log_level == "INFO"
    assert config.log_format == "text"


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("STATESPACE_RTOL", "1e-8")
    monkeypatch.setenv("STATESPACE_SEED", "42")
    monkeypatch.setenv("STATESPACE_LOG_FORMAT", "JSON")
    config = Config()
    assert config.rtol == 1e-8
    assert config.seed == 42
    assert config.log_format == "json"


@pytest.mark.parametrize("key,value", [
    ("STATESPACE_RTOL", "fast"),
    ("STATESPACE_RTOL", "0"),
    ("STATESPACE_SEED", "-1"),
    ("STATESPACE_LOG_LEVEL", "LOUD"),
    ("STATESPACE_LOG_FORMAT", "xml"),
])
def test_invalid_environment(monkeypatch, key, value):
    monkeypatch.setenv(key, value)
    with pytest.raises(ValidationError) as info:
        Config()
    assert info.value.field == key


def test_json_log_records():
    stream = io.StringIO()
    configure_logging("INFO", "json", stream)
    logging.getLogger("statespace.test").info("solved")
    record = json.loads(stream.getvalue().splitlines()[-1])
    assert record["message"] == "solved"
    assert record["levelname"] == "INFO"


def test_single_root_handler():
    configure_logging("DEBUG", "text")
    configure_logging("WARNING", "text")
    root = logging.getLogger()
    assert len(root.handlers) == 1
    assert root.level == logging.WARNING
