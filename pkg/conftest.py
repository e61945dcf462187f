import copy
import json
import os

import pytest

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), 'data', 'fixtures')


@pytest.fixture
def fixtures_dir():
    return FIXTURES_DIR


@pytest.fixture
def base_config():
    with open(os.path.join(FIXTURES_DIR, 'experiment.json'), 'r', encoding='utf-8') as f:
        return json.load(f)


@pytest.fixture
def write_config(tmp_path):
    """Write a config dict (or raw text) into tmp_path and return its path."""

    def _write(config, name='config.json'):
        path = tmp_path / name
        text = config if isinstance(config, str) else json.dumps(copy.deepcopy(config), indent=2)
        path.write_text(text, encoding='utf-8')
        return str(path)

    return _write


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path, monkeypatch):
    monkeypatch.setenv('APPROX_SENSE_LOG_DIR', str(tmp_path / 'logs'))
    monkeypatch.delenv('APPROX_SENSE_THREADS', raising=False)
