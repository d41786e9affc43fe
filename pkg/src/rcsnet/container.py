"""GTC1 binary tensor container.

Layout: 8-byte magic ``GTC1\\0\\0\\0\\0``, a 4-byte little-endian header
length, a JSON header (version, dtype fixed at "f32le", shape, axis names,
optional channel semantics and normalization stats), then the raw
little-endian float32 payload in row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"GTC1\x00\x00\x00\x00"
VERSION = 1


def write_tensor(path, array: np.ndarray, axis_names=None,
                 channel_semantics=None, norm_stats=None) -> None:
    array = np.asarray(array, dtype=np.float32)
    header = {
        "version": VERSION,
        "dtype": "f32le",
        "shape": list(array.shape),
        "axis_names": list(axis_names) if axis_names else ["d%d" % i for i in range(array.ndim)],
    }
    if channel_semantics is not None:
        header["channel_semantics"] = list(channel_semantics)
    if norm_stats is not None:
        header["norm_stats"] = norm_stats
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_tensor(path):
    """Return (float32 array, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValidationError(f"{path}: not a GTC1 container")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("dtype") != "f32le":
            raise ValidationError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        shape = tuple(int(s) for s in header["shape"])
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(count * 4)
        if len(payload) != count * 4:
            raise ValidationError(f"{path}: truncated payload")
        array = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return np.ascontiguousarray(array, dtype=np.float32), header
