"""Versioned text format for model parameters.

Header lines are ``key=value`` (all metadata precedes the arrays); each
array section starts with ``[array <name> <dim0> <dim1> ...]`` followed by
whitespace-separated rows printed with %.17g, which round-trips float64
exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

FORMAT_TAG = "nbrec-params-1"


def save_params(path, kind, meta, arrays):
    """Write ``meta`` (str/int/float values) and named float64 arrays."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"format={FORMAT_TAG}\n")
        fh.write(f"kind={kind}\n")
        for key in sorted(meta):
            fh.write(f"{key}={meta[key]}\n")
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype=np.float64)
            dims = " ".join(str(d) for d in arr.shape) or "0"
            fh.write(f"[array {name} {dims}]\n")
            flat = arr.reshape(-1)
            for start in range(0, len(flat), 8):
                fh.write(" ".join(f"{x:.17g}" for x in flat[start:start + 8]))
                fh.write("\n")


def load_params(path):
    """Read a parameter file; returns (kind, meta dict, arrays dict)."""
    meta, arrays = {}, {}
    kind = None
    current = None  # [name, shape, buffer]
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != f"format={FORMAT_TAG}":
            raise DataError(f"{path}: unsupported format header {first!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("[array "):
                if current is not None:
                    _finish(arrays, current)
                parts = line[1:-1].split()
                current = [parts[1], tuple(int(d) for d in parts[2:]), []]
            elif current is None:
                if "=" not in line:
                    raise DataError(f"{path}: malformed header line {line!r}")
                key, value = line.split("=", 1)
                if key == "kind":
                    kind = value
                else:
                    meta[key] = value
            else:
                current[2].extend(float(x) for x in line.split())
    if current is not None:
        _finish(arrays, current)
    return kind, meta, arrays


def _finish(arrays, current):
    name, shape, buf = current
    arr = np.array(buf, dtype=np.float64)
    expected = int(np.prod(shape))
    if len(arr) != expected:
        raise DataError(f"array {name}: expected {expected} values, got {len(arr)}")
    arrays[name] = arr.reshape(shape)
