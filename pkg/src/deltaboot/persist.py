"""Binary checkpoints for parameter vectors, eigenpairs and other fp64 arrays.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic, one per record kind
    8       4     u32 format version
    12      8     u64 payload length in fp64 values
    20      8*L   payload, fp64 little-endian
    20+8L   4     u32 CRC-32 of bytes [0, 20 + 8L)

Every payload starts with ``ndim`` followed by the dimensions, stored as
fp64, then the array data in C order.  Eigenpair records hold the
eigenvalues, residuals and eigenvectors back to back.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .delta import EigenPairs
from .errors import CheckpointError
from .netcore import ParamVector

VERSION = 1
HEADER = struct.Struct("<8sIQ")
MAGIC_PARAMS = b"DBPARAMS"
MAGIC_EIGEN = b"DBEIGENS"
MAGIC_GRADS = b"DBGRADS\x00"
MAGIC_ARRAY = b"DBARRAY\x00"


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return np.concatenate([[arr.ndim], arr.shape, arr.ravel()]).astype("<f8")


def write_record(path, magic, arrays):
    payload = np.concatenate([_encode(a) for a in arrays]) if arrays else np.empty(0, "<f8")
    head = HEADER.pack(magic, VERSION, payload.size)
    crc = zlib.crc32(payload.tobytes(), zlib.crc32(head))
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(payload.tobytes())
        fh.write(struct.pack("<I", crc))
    return path


def _read_header(buf, path, magic):
    if len(buf) < HEADER.size + 4:
        raise CheckpointError(f"{path}: file too short for a checkpoint")
    found, version, length = HEADER.unpack_from(buf)
    if found != magic:
        raise CheckpointError(f"{path}: magic {found!r}, expected {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if len(buf) != HEADER.size + 8 * length + 4:
        raise CheckpointError(f"{path}: truncated or oversized ({len(buf)} bytes for {length} values)")
    return length


def read_record(path, magic, count):
    """Return the ``count`` arrays stored in a record, verifying the checksum."""
    buf = Path(path).read_bytes()
    length = _read_header(buf, path, magic)
    end = HEADER.size + 8 * length
    (crc,) = struct.unpack_from("<I", buf, end)
    if zlib.crc32(buf[:end]) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    payload = np.frombuffer(buf, dtype="<f8", count=length, offset=HEADER.size)
    arrays = []
    pos = 0
    for _ in range(count):
        ndim = int(payload[pos])
        shape = tuple(int(s) for s in payload[pos + 1 : pos + 1 + ndim])
        pos += 1 + ndim
        size = int(np.prod(shape)) if shape else 1
        arrays.append(payload[pos : pos + size].reshape(shape).astype(np.float64))
        pos += size
    if pos != length:
        raise CheckpointError(f"{path}: payload has {length - pos} trailing values")
    return arrays


def save_params(path, params):
    return write_record(path, MAGIC_PARAMS, [params.values])


def load_params(path, spec):
    (values,) = read_record(path, MAGIC_PARAMS, 1)
    if values.shape != (spec.num_params,):
        raise CheckpointError(f"{path}: holds {values.size} parameters, network has {spec.num_params}")
    return ParamVector(values, spec.offsets)


def save_eigenpairs(path, pairs):
    return write_record(path, MAGIC_EIGEN, [pairs.values, pairs.residuals, pairs.vectors])


def load_eigenpairs(path, name=None):
    values, residuals, vectors = read_record(path, MAGIC_EIGEN, 3)
    return EigenPairs(values, vectors, residuals, name or Path(path).stem)


def save_array(path, arr):
    return write_record(path, MAGIC_ARRAY, [arr])


def load_array(path):
    return read_record(path, MAGIC_ARRAY, 1)[0]


def save_grads(path, grads):
    return write_record(path, MAGIC_GRADS, [grads])


def load_grads(path, mmap=True):
    """Load a gradient cache; with ``mmap`` the rows stay on disk (no checksum pass)."""
    if not mmap:
        return read_record(path, MAGIC_GRADS, 1)[0]
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size + 24)
    size = Path(path).stat().st_size
    found, version, length = HEADER.unpack_from(head)
    if found != MAGIC_GRADS or version != VERSION or size != HEADER.size + 8 * length + 4:
        raise CheckpointError(f"{path}: not a valid gradient cache")
    ndim, n, p = np.frombuffer(head, dtype="<f8", count=3, offset=HEADER.size)
    if int(ndim) != 2:
        raise CheckpointError(f"{path}: gradient cache must be two-dimensional")
    return np.memmap(path, dtype="<f8", mode="r", offset=HEADER.size + 24, shape=(int(n), int(p)))
