import json
import numpy as np
import pytest
from pathlib import Path

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def config_dir():
    return CONFIG_DIR


@pytest.fixture
def write_config(tmp_path):
    """Write a run config dict (or raw text) and return its path."""
    def _write(data, name="run.json"):
        path = tmp_path / name
        path.write_text(data if isinstance(data, str) else json.dumps(data), encoding="utf-8")
        return str(path)
    return _write


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("STATESPACE_RTOL", "STATESPACE_OUT_DIR", "STATESPACE_SEED",
                "STATESPACE_LOG_LEVEL", "STATESPACE_LOG_FORMAT"):
        monkeypatch.delenv(key, raising=False)
