"""Serialization helpers: 17-significant-digit floats, deterministic JSON,
and atomic file writes (write to a temp file, then rename)."""

from __future__ import annotations

import json
import math
import os
import tempfile


def fmt17(x: float) -> str:
    """Format a float with up to 17 significant digits (round-trip exact)."""
    if isinstance(x, float) and not math.isfinite(x):
        raise ValueError(f"non-finite value not serializable: {x!r}")
    return format(float(x), ".17g")


def dumps17(obj, indent: int | None = None) -> str:
    """JSON text with floats rendered by fmt17 and dict order preserved."""
    pieces: list[str] = []
    _write(obj, pieces, indent, 0)
    return "".join(pieces)


def _write(obj, out: list[str], indent, depth) -> None:
    nl = "" if indent is None else "\n" + " " * (indent * (depth + 1))
    close_nl = "" if indent is None else "\n" + " " * (indent * depth)
    sep = "," if indent is None else ","
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, float):
        out.append(fmt17(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(sep)
            out.append(nl)
            out.append(json.dumps(str(k), ensure_ascii=False))
            out.append(": ")
            _write(v, out, indent, depth + 1)
        out.append(close_nl + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(sep)
            out.append(nl)
            _write(v, out, indent, depth + 1)
        out.append(close_nl + "]")
    else:
        raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
