"""Output helpers: config hashing, CSV with a metadata line, JSON documents."""
from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form of a resolved configuration (first 16 hex digits)."""
    blob = json.dumps(_plain(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_csv(path, header, rows, meta: dict) -> str:
    """Write ``# <meta json>`` then the header row and the data rows."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(_plain(meta), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return str(path)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _cell(v):
    try:
        return float(v)
    except ValueError:
        return v


def read_csv(path) -> tuple[dict, list, np.ndarray]:
    """Read a file written by :func:`write_csv`: ``(meta, header, data)``.

    ``data`` is a float array, or an object array when a column holds text.
    """
    with open(path) as fh:
        first = fh.readline()
        meta = json.loads(first[2:]) if first.startswith("# ") else {}
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[_cell(v) for v in r] for r in reader]
    numeric = all(isinstance(v, float) for r in rows for v in r)
    data = np.asarray(rows, dtype=float if numeric else object).reshape(-1, len(header))
    return meta, header, data


def write_json(path, doc: dict) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_plain(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)


def write_table(path_stem, header, rows, meta: dict, fmt: str = "csv") -> str:
    """Write a table as CSV or as JSON ``{"meta":..., "columns":..., "rows":...}``."""
    if fmt == "json":
        return write_json(path_stem + ".json", {"meta": meta, "columns": list(header),
                                                "rows": [list(r) for r in rows]})
    return write_csv(path_stem + ".csv", header, rows, meta)
