"""
CSV and JSON writers shared by every scenario.

CSV files start with a ``# schema: <name>`` comment, then a header line, then rows
with 17 significant digits so a round trip through text is lossless.
"""

import hashlib
import json
import logging
import os
import platform
from typing import Dict, Mapping

import numpy as np
import scipy

logger = logging.getLogger(__name__)

CSV_FORMAT = "%.17g"


def write_csv(path: str, schema: str, columns: Mapping[str, np.ndarray]) -> int:
    """Write equally long columns to ``path`` and return the number of data rows."""
    names = list(columns)
    if not names:
        raise ValueError("write_csv needs at least one column")
    data = np.column_stack([np.asarray(columns[name], dtype=float).ravel() for name in names])
    with open(path, "w") as fh:
        fh.write(f"# schema: {schema}\n")
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, data, fmt=CSV_FORMAT, delimiter=",")
    logger.info(f"Wrote {data.shape[0]} rows to {path}")
    return int(data.shape[0])


def read_csv(path: str) -> Dict[str, np.ndarray]:
    with open(path) as fh:
        first = fh.readline()
        header = fh.readline() if first.startswith("#") else first
    names = header.strip().split(",")
    skip = 2 if first.startswith("#") else 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(names)}


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def versions() -> dict:
    from qbm import __version__

    return {
        "qbm": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_json(path: str, payload: dict):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(f"Wrote {path}")


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
