"""Output persistence: CSV, JSON summaries, binary trajectory dumps,
and the reproducibility manifest.

All numeric output is formatted deterministically (shortest round-trip
float representation), so identical (config, seed) runs produce byte-
identical files regardless of worker count.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "fmt_float",
    "write_csv",
    "write_json",
    "write_vspd",
    "read_vspd",
    "sha256_file",
    "write_manifest",
]

_MAGIC = b"VSPD"
_VERSION = 1


def fmt_float(x):
    return repr(float(x))


def write_csv(path, header, rows):
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(fmt_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in row)
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, payload):
    path = Path(path)
    path.write_text(json.dumps(_jsonify(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_vspd(path, array):
    """Binary trajectory dump: magic "VSPD", u32 version, u32 ndim,
    u32 shape entries, little-endian float64 payload."""
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())
    return path


def read_vspd(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a VSPD file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported VSPD version {version}")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(shape)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, config_json, version, wall_time, outputs):
    out_dir = Path(out_dir)
    manifest = {
        "config_hash": hashlib.sha256(config_json.encode()).hexdigest(),
        "library_version": version,
        "wall_time_s": wall_time,
        "outputs": [
            {
                "name": Path(p).name,
                "sha256": sha256_file(p),
                "bytes": Path(p).stat().st_size,
            }
            for p in outputs
        ],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
