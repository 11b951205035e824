"""Report and table writers: fixed 17-digit floats, atomic replace-on-write."""

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"


def fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        return "inf" if x > 0 else "-inf" if x < 0 else "nan"
    return "%.17g" % x


def _to_json(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_to_json(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)) or (isinstance(obj, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_to_json(v, indent, level + 1) for v in seq) + "]"
        items = [pad + _to_json(v, indent, level + 1) for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # non-finite values have no JSON literal; keep them readable as strings
        return fmt_float(x) if math.isfinite(x) else json.dumps(fmt_float(x))
    if isinstance(obj, Path):
        return json.dumps(str(obj))
    return json.dumps(str(obj))


def dumps(obj, indent=2):
    return _to_json(obj, indent, 0) + "\n"


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_text(path, dumps({"schema_version": SCHEMA_VERSION, **obj}))


def csv_text(header, rows):
    lines = [",".join(header)]
    for row in np.atleast_2d(np.asarray(rows, dtype=float)):
        lines.append(",".join(fmt_float(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))


def param_names(k):
    return [f"u{i}" for i in range(k)]


def ambient_names(N, prefix="x"):
    return [f"{prefix}{i}" for i in range(N)]
