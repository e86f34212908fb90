"""Atomic file output and fixed-precision number formatting."""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

DIGITS = 17


def fmt(x: float) -> str:
    return format(float(x), f".{DIGITS}g")


def dumps(obj, indent: int | None = None, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits; non-finite floats become null."""
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = "," if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_string(str(k))}:{'' if indent is None else ' '}{dumps(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        # numeric rows stay on one line
        if indent is not None and all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[" + sep.join(f"{pad}{dumps(v, indent, _level + 1)}" for v in seq) + end + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return "null" if obj is None else ("true" if obj else "false")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return _string(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _string(s: str) -> str:
    import json

    return json.dumps(s)


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=folder)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
