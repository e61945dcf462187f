import hashlib
import json
import logging
import math
import os
from typing import Any, Dict, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

SeedKey = Union[int, str]

DEFAULT_LOG_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'data', 'logs')


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("seed keys must be integers or strings")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be nonnegative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')


def derive_seed(root: int, *keys: SeedKey) -> int:
    """Counter-based split of a 64-bit root seed.

    The derived seed depends only on ``root`` and the key path, never on the
    order in which trials are scheduled.
    """
    seq = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(_key_to_int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *keys: SeedKey) -> np.random.Generator:
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.Generator(np.random.PCG64(int(seed)))


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays (recursively) into plain Python values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return None
        return value
    return value


def canonical_json(value: Any) -> str:
    return json.dumps(to_jsonable(value), sort_keys=True, indent=2, allow_nan=False) + "\n"


def inputs_digest(inputs: Dict[str, Any]) -> str:
    payload = json.dumps(to_jsonable(inputs), sort_keys=True, separators=(',', ':'), allow_nan=False)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def write_json(path: str, value: Any) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(canonical_json(value))
    return path


def resolve_threads(cli_value: Optional[int] = None) -> int:
    """Worker count: CLI flag first, then APPROX_SENSE_THREADS, then 1."""
    if cli_value is not None:
        threads = int(cli_value)
    else:
        raw = os.getenv('APPROX_SENSE_THREADS', '1')
        try:
            threads = int(raw)
        except ValueError:
            logger.warning("Ignoring non-integer APPROX_SENSE_THREADS=%r", raw)
            threads = 1
    return max(1, threads)


def setup_error_logging(log_dir: Optional[str] = None) -> str:
    """Attach a file handler writing ERROR records to ``errors.log``."""
    log_dir = log_dir or os.getenv('APPROX_SENSE_LOG_DIR', DEFAULT_LOG_DIR)
    os.makedirs(log_dir, exist_ok=True)

    error_log_file = os.path.join(log_dir, 'errors.log')
    root = logging.getLogger()
    for handler in root.handlers:
        if isinstance(handler, logging.FileHandler) and handler.baseFilename == os.path.abspath(error_log_file):
            return error_log_file

    file_handler = logging.FileHandler(error_log_file)
    file_handler.setLevel(logging.ERROR)
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    file_handler.setFormatter(formatter)
    root.addHandler(file_handler)
    return error_log_file
