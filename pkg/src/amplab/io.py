"""Deterministic CSV/JSON emission and run manifests."""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["format_value", "write_csv", "write_json", "sha256_file", "write_manifest", "OutputSet"]


def format_value(v) -> str:
    """17 significant digits for reals (round-trip safe); ``inf``/``nan`` spelled out."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> Path:
    """Comma-separated, '.' decimal, mandatory header, ``\\n`` line ends."""
    header = list(header)
    if not header:
        raise ValueError("CSV header is mandatory")
    lines = [",".join(header)]
    for row in rows:
        row = list(row)
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        lines.append(",".join(format_value(v) for v in row))
    path = Path(path)
    _atomic_write(path, ("\n".join(lines) + "\n").encode())
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else format_value(v)
    if isinstance(obj, slice):
        return [obj.start, obj.stop]
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    _atomic_write(path, (text + "\n").encode())
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class OutputSet:
    """Files emitted by one run, in emission order."""

    def __init__(self, root):
        self.root = Path(root)
        self.files: list[Path] = []

    def csv(self, name, header, rows) -> Path:
        p = write_csv(self.root / name, header, rows)
        self.files.append(p)
        return p

    def json(self, name, obj) -> Path:
        p = write_json(self.root / name, obj)
        self.files.append(p)
        return p


def write_manifest(outputs: OutputSet, **fields) -> Path:
    """``manifest.json`` listing every output with its digest, written atomically."""
    entries = [
        {"path": p.name, "bytes": p.stat().st_size, "sha256": sha256_file(p)} for p in outputs.files
    ]
    return write_json(outputs.root / "manifest.json", dict(fields, files=entries))
