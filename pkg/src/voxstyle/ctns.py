"""CTNS: a tiny bit-exact binary tensor container.

Layout (little-endian):
  magic   4 bytes  "CTNS"
  version u32      currently 1
  dtype   u8       0 = float32, 1 = uint8, 2 = int32
  ndim    u8
  dims    u32 * ndim
  payload row-major array bytes
  crc32   u32      of the payload

Round trips are byte-identical; readers verify magic, version, dtype,
payload length, and CRC before returning the array.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError

MAGIC = b"CTNS"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<i4")}
_CODE_FOR_KIND = {"f": 0, "u": 1, "i": 2}


def _code_for(array: np.ndarray) -> int:
    kind = array.dtype.kind
    if kind not in _CODE_FOR_KIND:
        raise FormatError(f"unsupported dtype {array.dtype} for CTNS")
    return _CODE_FOR_KIND[kind]


def write_ctns(path, array: np.ndarray) -> None:
    """Write an array as CTNS; float arrays are stored as float32,
    integer arrays as int32, uint8 stays uint8."""
    array = np.asarray(array)
    code = _code_for(array)
    array = np.ascontiguousarray(array.astype(_DTYPE_CODES[code], copy=False))
    payload = array.tobytes()
    header = MAGIC + struct.pack("<IBB", VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    crc = struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    Path(path).write_bytes(header + payload + crc)


def read_ctns(path) -> np.ndarray:
    """Read and validate a CTNS file; raises FormatError/ChecksumError."""
    blob = Path(path).read_bytes()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a CTNS file")
    version, code, ndim = struct.unpack_from("<IBB", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported CTNS version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    off = 10
    if len(blob) < off + 4 * ndim + 4:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", blob, off)
    off += 4 * ndim
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    nbytes = count * dtype.itemsize
    if len(blob) != off + nbytes + 4:
        raise FormatError(f"{path}: payload length mismatch "
                          f"(expected {nbytes} bytes for dims {dims})")
    payload = blob[off:off + nbytes]
    (crc_stored,) = struct.unpack_from("<I", blob, off + nbytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise ChecksumError(f"{path}: payload CRC mismatch")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
