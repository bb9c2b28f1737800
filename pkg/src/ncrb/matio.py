"""NCRBMAT1 binary matrix files.

Layout (little endian)::

    b"NCRBMAT1"  u32 rows  u32 cols  u8 flag
    flag 0: rows*cols f64, row-major
    flag 1: u64 count + u64 row offsets, u64 count + u32 column indices,
            u64 count + f64 values
"""
from __future__ import annotations

import struct

import numpy as np

from .linalg import SparseSym

MAGIC = b"NCRBMAT1"


class FormatError(ValueError):
    pass


def _write_array(fh, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    fh.write(struct.pack("<Q", arr.size))
    fh.write(arr.astype(np.dtype(dtype).newbyteorder("<"), copy=False).tobytes())


def _read_array(fh, dtype):
    (count,) = struct.unpack("<Q", fh.read(8))
    dt = np.dtype(dtype).newbyteorder("<")
    buf = fh.read(count * dt.itemsize)
    if len(buf) != count * dt.itemsize:
        raise FormatError("truncated array")
    return np.frombuffer(buf, dtype=dt).astype(dtype)


def write_matrix(path, A) -> None:
    with open(path, "wb") as fh:
        if isinstance(A, SparseSym):
            fh.write(MAGIC + struct.pack("<IIB", A.n, A.n, 1))
            _write_array(fh, A.indptr, np.uint64)
            _write_array(fh, A.indices, np.uint32)
            _write_array(fh, A.data, np.float64)
            return
        A = np.asarray(A, dtype=np.float64)
        if A.ndim == 1:
            A = A[:, None]
        if A.ndim != 2:
            raise FormatError("only 1-D and 2-D arrays can be written")
        fh.write(MAGIC + struct.pack("<IIB", A.shape[0], A.shape[1], 0))
        fh.write(np.ascontiguousarray(A).astype("<f8", copy=False).tobytes())


def read_matrix(path):
    """Return a dense ``ndarray`` (flag 0) or a :class:`SparseSym` (flag 1)."""
    with open(path, "rb") as fh:
        head = fh.read(17)
        if len(head) != 17 or head[:8] != MAGIC:
            raise FormatError(f"{path}: not an NCRBMAT1 file")
        rows, cols, flag = struct.unpack("<IIB", head[8:])
        if flag == 0:
            buf = fh.read(rows * cols * 8)
            if len(buf) != rows * cols * 8:
                raise FormatError(f"{path}: truncated dense payload")
            return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(rows, cols)
        if flag == 1:
            indptr = _read_array(fh, np.uint64).astype(np.int64)
            indices = _read_array(fh, np.uint32).astype(np.int64)
            data = _read_array(fh, np.float64)
            if rows != cols or len(indptr) != rows + 1 or len(indices) != len(data):
                raise FormatError(f"{path}: inconsistent sparse payload")
            return SparseSym(indptr, indices, data, rows)
        raise FormatError(f"{path}: unknown storage flag {flag}")
