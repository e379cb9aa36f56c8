"""Binary checkpoint files for named parameter arrays plus a JSON metadata blob.

Layout (all integers little-endian):

    bytes 0..3    magic b"PHCK"
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..11   metadata length in bytes, uint32
    ...           metadata, UTF-8 JSON
    next 4        parameter count, uint32
    per parameter:
        uint16    name length in bytes
        ...       name, UTF-8
        uint8     dtype code: 0 = float32, 1 = float64
        uint8     rank
        uint32*   shape
        ...       payload, little-endian floats, C order

Writes go through a temporary file in the target directory followed by an
atomic rename, so a crashed writer never leaves a half-written checkpoint
behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"PHCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointVersionError(CheckpointError):
    """Bad magic bytes or an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The file ended before the declared content did."""


class CheckpointMismatchError(CheckpointError):
    """Stored parameter names or shapes do not fit the receiving model."""


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Atomically write named float arrays and optional JSON metadata."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", VERSION, len(meta_bytes)))
            f.write(meta_bytes)
            f.write(struct.pack("<I", len(params)))
            for name, arr in params.items():
                arr = np.asarray(arr)
                if arr.dtype not in _DTYPE_CODES:
                    raise ValueError(f"parameter {name!r} has unsupported dtype {arr.dtype}")
                name_bytes = name.encode("utf-8")
                f.write(struct.pack("<H", len(name_bytes)))
                f.write(name_bytes)
                f.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise CheckpointTruncatedError(f"checkpoint ended while reading {what}")
    return data


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (parameters, metadata)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointVersionError(f"{path}: not a checkpoint file (bad magic)")
        version, meta_len = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != VERSION:
            raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, "parameter count"))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            dtype_code, ndim = struct.unpack("<BB", _read_exact(f, 2, "dtype/rank"))
            if dtype_code not in _DTYPES:
                raise CheckpointMismatchError(f"{path}: parameter {name!r} has unknown dtype code {dtype_code}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"shape of {name!r}"))
            dtype = _DTYPES[dtype_code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            payload = _read_exact(f, nbytes, f"payload of {name!r}")
            params[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        return params, meta
