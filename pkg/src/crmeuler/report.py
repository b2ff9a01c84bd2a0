"""Deterministic JSON/CSV emission and run provenance."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import math
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .stochint import CONVENTION


def jsonable(obj):
    """Recursively convert numpy scalars/arrays, complex and dataclasses."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "to_json"):
        return jsonable(obj.to_json())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def manifest_hash(manifest: dict) -> str:
    canon = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def header(kind: str, manifest: dict, seed) -> dict:
    return {
        "experiment": kind,
        "manifest_sha256": manifest_hash(manifest),
        "version": __version__,
        "seed": seed,
        "convention": CONVENTION,
    }


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def write_json(path, obj):
    return write_text(path, dumps(obj))


def write_csv(path, columns, rows):
    return write_text(path, csv_text(columns, rows))


def write_provenance(out_dir, manifest: dict, workers: int, started: _dt.datetime, extra=None):
    """Timestamps and host details live here, apart from the reproducible outputs."""
    d = {
        "manifest_sha256": manifest_hash(manifest),
        "version": __version__,
        "workers": workers,
        "started": started.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pid": os.getpid(),
    }
    if extra:
        d.update(extra)
    return write_json(Path(out_dir) / "provenance.json", d)
