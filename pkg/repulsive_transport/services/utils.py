import hashlib
import json
import math
from pathlib import Path

import numpy as np
import yaml

from repulsive_transport.exceptions import InputError, SchemaError


def sanitize_for_json(data):
    """Convert numpy values and non-finite floats recursively to JSON-safe objects."""
    if isinstance(data, np.ndarray):
        return [sanitize_for_json(v) for v in data.tolist()]
    if isinstance(data, np.generic):
        data = data.item()
    if isinstance(data, float):
        if math.isinf(data):
            return "inf" if data > 0 else "-inf"
        if math.isnan(data):
            return "nan"
        return data
    if isinstance(data, dict):
        return {str(k): sanitize_for_json(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [sanitize_for_json(i) for i in data]
    return data


def canonical_json(data):
    return json.dumps(sanitize_for_json(data), sort_keys=True, separators=(",", ":"))


def config_hash(config):
    """sha256 hex digest of the canonical JSON form of ``config``."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def format_value(value):
    """Extended reals for terminal output; infinity is spelled ``inf``."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(f"{value:.12g}"))


def read_text(path):
    try:
        return Path(path).read_text()
    except OSError as e:
        raise InputError(f"Cannot read {path}: {e.strerror or e}")


def read_structured(path):
    """JSON or YAML document (by suffix) as plain Python data."""
    text = read_text(path)
    try:
        if Path(path).suffix.lower() in (".yaml", ".yml"):
            return yaml.safe_load(text)
        return json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise SchemaError(f"Cannot parse {path}: {e}", code="parse_error")


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(sanitize_for_json(data), indent=2))
    return path
