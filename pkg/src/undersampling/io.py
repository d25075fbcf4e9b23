"""CSV and JSON persistence.

Run logs hold one row per improvement event::

    config_id,function_id,run_id,evaluations,best_precision

Performance tables hold one row per stored AOC sample::

    config_id,sample_index,aoc_value

Floats are written with ``repr`` so they round-trip exactly, and every file
is written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
import warnings
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .perf import RunTrajectory
from .store import PerformanceTable

RUN_LOG_COLUMNS = ("config_id", "function_id", "run_id", "evaluations", "best_precision")
TABLE_COLUMNS = ("config_id", "sample_index", "aoc_value")


class RunCountWarning(UserWarning):
    """Configurations in a run log do not all have the same number of runs."""


def fmt(value) -> str:
    """Deterministic text for a CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if v != v:
            return "nan"
        return repr(v)
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_bytes(path, csv_bytes(header, rows))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _rows(path, columns: Sequence[str]):
    """Yield ``(line_number, row)`` after checking the header."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header {','.join(columns)}") from None
        except csv.Error as exc:
            raise DataError(f"{path}:1: {exc}") from None
        if [h.strip() for h in header] != list(columns):
            raise DataError(f"{path}:1: expected header {','.join(columns)}, got {','.join(header)}")
        try:
            for row in reader:
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(columns):
                    raise DataError(f"{path}:{reader.line_num}: expected {len(columns)} fields, got {len(row)}")
                yield reader.line_num, [c.strip() for c in row]
        except csv.Error as exc:
            raise DataError(f"{path}:{reader.line_num}: {exc}") from None


def _int(text: str, what: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{where}: {what} {text!r} is not an integer") from None


def _float(text: str, what: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{where}: {what} {text!r} is not a number") from None
    if not np.isfinite(v):
        raise DataError(f"{where}: {what} must be finite")
    return v


# --------------------------------------------------------------------------
# run logs

def read_run_log(path) -> list[RunTrajectory]:
    """Parse a run log into trajectories, in order of first appearance.

    Rows of a run need not be contiguous but must be in increasing
    evaluation order. Emits :class:`RunCountWarning` when configurations
    of a function have different numbers of runs.
    """
    points: dict[tuple, list] = {}
    for line, (cid, fid, rid, ev, prec) in _rows(path, RUN_LOG_COLUMNS):
        where = f"{path}:{line}"
        if not cid or not fid or not rid:
            raise DataError(f"{where}: empty identifier")
        key = (cid, fid, rid)
        e = _int(ev, "evaluations", where)
        p = _float(prec, "best_precision", where)
        if e < 1:
            raise DataError(f"{where}: evaluations must be >= 1")
        if p < 0:
            raise DataError(f"{where}: best_precision must be nonnegative")
        pts = points.setdefault(key, [])
        if pts:
            pe, pp = pts[-1]
            if e <= pe:
                raise DataError(f"{where}: evaluations must increase within run {rid!r} of {cid!r}")
            if p > pp:
                raise DataError(f"{where}: best_precision increased within run {rid!r} of {cid!r}")
        pts.append((e, p))
    if not points:
        raise DataError(f"{path}: no data rows")
    runs = [RunTrajectory.from_points(pts, *key) for key, pts in points.items()]
    per_fn: dict[str, Counter] = {}
    for cid, fid, _ in points:
        per_fn.setdefault(fid, Counter())[cid] += 1
    for fid, counts in per_fn.items():
        if len(set(counts.values())) > 1:
            detail = ", ".join(f"{c}={n}" for c, n in sorted(counts.items()))
            warnings.warn(f"function {fid!r}: unequal run counts ({detail})", RunCountWarning, stacklevel=2)
    return runs


def write_run_log(path, runs: Iterable[RunTrajectory]) -> None:
    rows = ((r.config_id, r.function_id, r.run_id, e, p)
            for r in runs for e, p in zip(r.evaluations, r.precisions))
    write_csv(path, RUN_LOG_COLUMNS, rows)


# --------------------------------------------------------------------------
# performance tables

def read_table(path, function_id: str | None = None) -> PerformanceTable:
    """Load a table CSV; every config must have sample indices ``0..n-1`` exactly once."""
    values: dict[str, dict[int, float]] = {}
    for line, (cid, idx, val) in _rows(path, TABLE_COLUMNS):
        where = f"{path}:{line}"
        if not cid:
            raise DataError(f"{where}: empty config_id")
        i = _int(idx, "sample_index", where)
        v = _float(val, "aoc_value", where)
        if i < 0:
            raise DataError(f"{where}: sample_index must be nonnegative")
        if v < 0:
            raise DataError(f"{where}: aoc_value must be nonnegative")
        slot = values.setdefault(cid, {})
        if i in slot:
            raise DataError(f"{where}: duplicate sample_index {i} for config {cid!r}")
        slot[i] = v
    if not values:
        raise DataError(f"{path}: no data rows")
    entries = {}
    for cid, slot in values.items():
        n = len(slot)
        if set(slot) != set(range(n)):
            missing = sorted(set(range(max(slot) + 1)) - set(slot))
            raise DataError(f"{path}: config {cid!r} is missing sample indices {missing[:10]}")
        entries[cid] = [slot[i] for i in range(n)]
    nominal = max(len(v) for v in entries.values())
    return PerformanceTable(function_id or Path(path).stem, entries, nominal)


def table_rows(table: PerformanceTable):
    for cid in table.config_ids:
        for i, v in enumerate(table.samples(cid)):
            yield cid, i, float(v)


def write_table(path, table: PerformanceTable) -> None:
    write_csv(path, TABLE_COLUMNS, table_rows(table))


# --------------------------------------------------------------------------
# manifests

def manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_manifest(path, manifest: dict) -> None:
    atomic_write_bytes(path, manifest_bytes(manifest))


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data
