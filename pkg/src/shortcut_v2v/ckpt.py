"""Single-file checkpoint container: named float32 arrays plus a manifest.

Layout: an 8-byte magic, a little-endian uint32 format version, a
little-endian uint32 header length, a UTF-8 JSON header, then the raw array
payload. The header records the manifest (arbitrary JSON config values) and,
for every array, its name, shape, and byte offset into the payload. Arrays
are stored little-endian float32 in C order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"SV2VCKPT"
_VERSION = 1


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    """Write named arrays and a JSON-serializable manifest to ``path``."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"manifest": manifest, "arrays": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns ``(arrays, manifest)``.

    Raises ``IOError`` with a diagnostic on a missing, truncated, or
    foreign file.
    """
    path = Path(path)
    if not path.is_file():
        raise IOError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(_MAGIC) + 8 or raw[: len(_MAGIC)] != _MAGIC:
        raise IOError(f"not a checkpoint file (bad magic): {path}")
    version, header_len = struct.unpack_from("<II", raw, len(_MAGIC))
    if version != _VERSION:
        raise IOError(f"unsupported checkpoint version {version} in {path}")
    start = len(_MAGIC) + 8
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IOError(f"corrupt checkpoint header in {path}: {exc}") from exc
    payload = raw[start + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = entry["offset"] + 4 * count
        if end > len(payload):
            raise IOError(f"truncated checkpoint payload in {path}")
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=entry["offset"]
        ).reshape(shape).copy()
    return arrays, header["manifest"]
