import copy
import logging
import os
from typing import Any, Dict, List

import yaml

from core.errors import ConfigError, UnknownSuiteError

logger = logging.getLogger(__name__)


class SuiteManager:
    SUITES_DIR = os.path.join(os.path.dirname(__file__), '..', 'data', 'suites')
    SUITES_FILE = 'suites.yaml'

    _suites: Dict[str, Dict[str, Any]] = {}

    @classmethod
    def load_suites(cls):
        cls._suites = cls._load_yaml(cls.SUITES_FILE)
        logger.debug("Loaded %d suite definitions", len(cls._suites))

    @classmethod
    def _load_yaml(cls, filename):
        file_path = os.path.join(cls.SUITES_DIR, filename)
        if not os.path.exists(file_path):
            return {}
        with open(file_path, 'r', encoding='utf-8') as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Could not parse suite definitions {file_path}: {e}", {"path": file_path})
        if not isinstance(data, dict):
            raise ConfigError(f"Suite definitions in {file_path} must be a mapping", {"path": file_path})
        return data

    @classmethod
    def list_suites(cls) -> List[str]:
        return sorted(cls._suites)

    @classmethod
    def get_suite(cls, name: str, **overrides) -> Dict[str, Any]:
        """Suite parameters with ``None`` overrides ignored."""
        if name not in cls._suites:
            raise UnknownSuiteError(f"Unknown suite: {name}", {"suite": name, "available": cls.list_suites()})
        params = copy.deepcopy(cls._suites[name])
        params.update({k: v for k, v in overrides.items() if v is not None})
        return params


# Load suite definitions when the module is imported
SuiteManager.load_suites()
