"""Deterministic artifact writers: binary path dumps, CSV tables, JSON with 17 significant digits."""
from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RKSD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")  # magic, version, n, N, M


def write_bundle(path, array):
    """Dump an ``(M, N+1, n)`` array: header then little-endian doubles in row-major order."""
    a = np.ascontiguousarray(array, dtype="<f8")
    if a.ndim != 3:
        raise ValueError("expected an (M, N+1, n) array")
    M, N1, n = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, N1 - 1, M))
        fh.write(a.tobytes(order="C"))


def read_bundle(path):
    with open(path, "rb") as fh:
        magic, version, n, N, M = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != MAGIC:
            raise ValueError(f"{path}: not an RKSD file")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(M, N + 1, n)


def fmt(x):
    """17 significant digits; integers and non-finite values spelled plainly."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(o, indent, level):
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," if indent else ", "
    if isinstance(o, dict):
        if not o:
            yield "{}"
            return
        yield "{"
        for i, (k, v) in enumerate(o.items()):
            yield (sep if i else "") + pad + json.dumps(k) + ": "
            yield from _encode(v, indent, level + 1)
        yield end + "}"
    elif isinstance(o, list):
        if not o:
            yield "[]"
            return
        yield "["
        for i, v in enumerate(o):
            yield (sep if i else "") + pad
            yield from _encode(v, indent, level + 1)
        yield end + "]"
    elif isinstance(o, float) and not isinstance(o, bool):
        # NaN/inf are not JSON; they become strings so the file stays parseable
        yield fmt(o) if math.isfinite(o) else json.dumps(fmt(o))
    else:
        yield json.dumps(o)


def dumps_json(obj):
    return "".join(_encode(_jsonable(obj), 2, 0)) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
