"""CSV and JSON writers.  Floats are written with 17 significant digits so
identical arrays always give identical bytes."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def _grid_rows(times: np.ndarray, arr, n_paths: int, prefix=()):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim < 2:
        arr = arr.reshape(-1, 1)
    arr = np.broadcast_to(arr, (times.size, max(arr.shape[1], 1)))
    n_paths = min(n_paths, arr.shape[1])
    for p in range(n_paths):
        col = arr[:, p]
        for k in range(times.size):
            yield (*prefix, p, k, fmt(times[k]), fmt(col[k]))


def write_paths_csv(path, times, arr, n_paths: int) -> Path:
    """``path,step,time,value`` rows for the first ``n_paths`` paths of a grid array.

    Compact arrays (one column) are written once, as path 0.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "step", "time", "value"])
        w.writerows(_grid_rows(np.asarray(times), arr, n_paths))
    return path


def write_components_csv(path, times, components: Mapping[str, np.ndarray], n_paths: int) -> Path:
    """``component,path,step,time,value`` rows, components in the given order."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "path", "step", "time", "value"])
        for name, arr in components.items():
            w.writerows(_grid_rows(np.asarray(times), arr, n_paths, (name,)))
    return path


def write_table_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_paths_csv(path) -> dict:
    """Inverse of :func:`write_paths_csv`: ``{path_index: values by step}``."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["path"]), []).append(float(row["value"]))
    return {k: np.array(v) for k, v in out.items()}
