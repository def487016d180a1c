"""CSV traces with a JSON sidecar manifest.

Every row is written and flushed before control returns to the caller, so a
run that dies mid-way leaves a readable CSV behind; the manifest is rewritten
on close with ``status`` set to ``complete`` or ``failed``.  Floats are written
with 17 significant digits, which makes traces from identical runs compare
byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

SCHEMA_VERSION = 1


class TraceError(ValueError):
    pass


def _fmt(x):
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


class FlowTrace:
    """Append-only table whose first column is strictly increasing.

    Parameters
    ----------
    path : path-like
        CSV file; the manifest goes to ``<stem>.manifest.json`` next to it.
    columns : list of str
        Column schema; ``columns[0]`` is the index (``t`` for flows, ``k`` for sweeps).
    run_id, config_hash, code_version : str
        Recorded in the manifest.
    """

    def __init__(self, path, columns, run_id, config_hash, code_version, extra=None):
        self.path = Path(path)
        self.manifest_path = self.path.with_name(self.path.stem + ".manifest.json")
        self.columns = list(columns)
        self.run_id = run_id
        self.config_hash = config_hash
        self.code_version = code_version
        self.extra = dict(extra or {})
        self.n_rows = 0
        self._last = -math.inf
        self._start = time.perf_counter()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)
        self._fh.flush()
        self._write_manifest("running")

    def append(self, row):
        if len(row) != len(self.columns):
            raise TraceError(f"row has {len(row)} entries, schema has {len(self.columns)}")
        if not row[0] > self._last:
            raise TraceError(f"{self.columns[0]} must increase strictly ({row[0]} after {self._last})")
        self._last = row[0]
        self._writer.writerow([_fmt(x) for x in row])
        self._fh.flush()
        self.n_rows += 1

    __call__ = append

    def close(self, status="complete", error=None, summary=None):
        if self._fh.closed:
            return
        self._fh.close()
        if summary:
            self.extra["summary"] = summary
        self._write_manifest(status, error)

    def _write_manifest(self, status, error=None):
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "columns": self.columns,
            "rows": self.n_rows,
            "status": status,
            "wall_time": time.perf_counter() - self._start,
            "csv": self.path.name,
        }
        if error is not None:
            manifest["error"] = error
        manifest.update(self.extra)
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
        tmp.replace(self.manifest_path)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            self.close("complete")
        else:
            self.close("failed", error=f"{exc_type.__name__}: {exc}")
        return False


def read_trace(path):
    """Return ``(columns, rows)`` with rows as tuples of floats."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [tuple(float(x) for x in r) for r in reader]
    return columns, rows


def _json_default(obj):
    try:
        import numpy as np

        if isinstance(obj, np.generic):
            return obj.item()
        if isinstance(obj, np.ndarray):
            return obj.tolist()
    except ImportError:  # pragma: no cover
        pass
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
