"""Binary gradient trace files.

Layout, all little-endian::

    offset  size  field
    0       4     magic b"SIDG"
    4       2     format version (u16, currently 1)
    6       2     element type tag (u16): 0 = float32, 1 = float64
    8       8     dimension (u64)
    16      dim * element size   raw values
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import TraceFormatError

MAGIC = b"SIDG"
VERSION = 1
_HEADER = struct.Struct("<4sHHQ")
HEADER_SIZE = _HEADER.size
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def write_trace(path, values, dtype=None) -> None:
    """Write a 1-D vector; ``dtype`` defaults to the array's own float type."""
    arr = np.asarray(values)
    if dtype is not None:
        arr = arr.astype(dtype)
    elif arr.dtype not in _TAGS:
        arr = arr.astype(np.float64)
    arr = arr.reshape(-1)
    tag = _TAGS[np.dtype(arr.dtype)]
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, tag, arr.size))
        f.write(arr.astype(_DTYPES[tag], copy=False).tobytes())


def read_trace_raw(path) -> np.ndarray:
    """Read the payload in its stored precision."""
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        head = f.read(HEADER_SIZE)
        if len(head) < HEADER_SIZE:
            raise TraceFormatError(f"{path}: truncated header ({len(head)} bytes)")
        magic, version, tag, dim = _HEADER.unpack(head)
        if magic != MAGIC:
            raise TraceFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise TraceFormatError(f"{path}: unsupported format version {version}")
        if tag not in _DTYPES:
            raise TraceFormatError(f"{path}: unknown element type tag {tag}")
        dt = _DTYPES[tag]
        expected = HEADER_SIZE + dim * dt.itemsize
        if size != expected:
            raise TraceFormatError(f"{path}: payload is {size - HEADER_SIZE} bytes, header implies {dim * dt.itemsize}")
        payload = np.fromfile(f, dtype=dt, count=dim)
    return payload.astype(dt.newbyteorder("="), copy=False)


def read_trace(path) -> np.ndarray:
    """Read a trace widened to float64."""
    return read_trace_raw(path).astype(np.float64)
