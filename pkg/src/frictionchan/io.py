"""Output files with a metadata header (config hash, version, seed).

CSV files start with ``# key: value`` lines followed by a column header row;
JSON files hold ``{"metadata": ..., "result": ...}``.  The ``timestamp``
metadata field is the only non-deterministic content.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__

__all__ = [
    "config_hash",
    "make_metadata",
    "write_csv",
    "read_csv",
    "write_json",
    "read_json",
    "write_char_csv",
    "strip_timestamp",
]


def config_hash(config: Mapping) -> str:
    """sha256 of the canonical JSON encoding of a nested str-keyed mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def make_metadata(config: Mapping, seed: Optional[int], scenario: str, **extra) -> dict:
    meta = {
        "scenario": scenario,
        "version": __version__,
        "config_hash": config_hash(config),
        "seed": seed,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(extra)
    return meta


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows, meta: Mapping) -> Path:
    """Write a table; floats use ``repr`` so values round-trip exactly."""
    path = Path(path)
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != len(columns):
        raise ValueError(f"rows of shape {rows.shape} do not match {len(columns)} columns")
    with path.open("w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path) -> tuple:
    """(metadata dict of strings, column names, float array)."""
    meta = {}
    body = []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition(": ")
                meta[k] = v
            else:
                body.append(line)
    rows = list(csv.reader(body))
    cols = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    return meta, cols, data.reshape(-1, len(cols))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    return v


def write_json(path, record: Mapping, meta: Mapping) -> Path:
    path = Path(path)
    doc = {"metadata": dict(meta), "result": _jsonable(record)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_char_csv(path, chi, meta: Mapping) -> Path:
    """Characteristic function as long-format rows (P, X, Re, Im)."""
    P, X = np.meshgrid(chi.P, chi.X, indexing="ij")
    v = np.asarray(chi.values)
    rows = np.column_stack([P.ravel(), X.ravel(), v.real.ravel(), v.imag.ravel()])
    return write_csv(path, ["P", "X", "re", "im"], rows, meta)


def strip_timestamp(text: str) -> str:
    """File contents with the timestamp field removed, for reproducibility checks."""
    out = []
    for line in text.splitlines(keepends=True):
        s = line.strip()
        if s.startswith("# timestamp:") or s.startswith('"timestamp":'):
            continue
        out.append(line)
    return "".join(out)
