"""Deterministic text serialization: every float is written with 17 significant
digits so artifacts round-trip bit-exactly and identical configs produce
byte-identical files."""

from __future__ import annotations

import json

import numpy as np


def fmt17(value) -> str:
    """Render a scalar with 17 significant digits (exact float64 round-trip)."""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def dumps17(obj) -> str:
    """json.dumps with floats rendered via fmt17 and stable key order."""
    return _encode(obj)


def _encode(obj) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt17(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ", ".join(json.dumps(str(k)) + ": " + _encode(v) for k, v in items) + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_csv(path, header: list[str], rows, comment: str | None = None) -> None:
    """Write rows of scalars as CSV, 17 significant digits, optional leading # comment."""
    lines = []
    if comment is not None:
        lines.append("# " + comment)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(fmt17(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
