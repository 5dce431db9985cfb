"""CSV, JSON and binary snapshot writers.

Snapshot layout (little endian)::

    b"SPDE"  u32 version  u32 n  u32 dims[n]  u32 M_t  u32 stride
    float64 values, one row-major lattice per stored step
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "NORM_COLUMNS",
    "REFINEMENT_COLUMNS",
    "format_value",
    "write_csv",
    "write_json",
    "write_snapshots",
    "read_snapshots",
]

NORM_COLUMNS = ("scenario", "pipeline", "h", "dt", "K", "M", "norm_kind", "p", "value", "ci_halfwidth", "poisoned")
REFINEMENT_COLUMNS = NORM_COLUMNS + ("growth_ratio", "classification")
SNAPSHOT_MAGIC = b"SPDE"
SNAPSHOT_VERSION = 1


def format_value(v) -> str:
    """Shortest round-trip text for floats; empty for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return repr(f)
    return str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c)) for c in columns])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else format_value(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_snapshots(path, values, num_steps: int, stride: int) -> Path:
    """Dump stored levels ``values`` (levels, *dims) in the snapshot layout."""
    v = np.ascontiguousarray(values, dtype="<f8")
    dims = v.shape[1:]
    header = SNAPSHOT_MAGIC + struct.pack(f"<II{len(dims)}III", SNAPSHOT_VERSION, len(dims), *dims,
                                          int(num_steps), int(stride))
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(v.tobytes(order="C"))
    return path


def read_snapshots(path):
    """Inverse of write_snapshots: returns ``(values, num_steps, stride)``."""
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not an SPDE snapshot file")
    version, n = struct.unpack_from("<II", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    off = 12
    dims = struct.unpack_from(f"<{n}I", data, off)
    off += 4 * n
    num_steps, stride = struct.unpack_from("<II", data, off)
    off += 8
    vals = np.frombuffer(data, dtype="<f8", offset=off).reshape((-1,) + tuple(dims))
    return vals.copy(), num_steps, stride
