"""
IDX files: a 4-byte magic ``0x00 0x00 <type> <ndim>``, ``ndim`` big-endian u32 dimensions, then the values in
big-endian order. Files ending in ``.gz`` are read and written compressed.
"""

import gzip
import struct
from pathlib import Path

import numpy as np

from engine.exceptions import DatasetError


IDX_TYPES = {
    0x08: np.dtype('u1'),
    0x09: np.dtype('i1'),
    0x0B: np.dtype('>i2'),
    0x0C: np.dtype('>i4'),
    0x0D: np.dtype('>f4'),
    0x0E: np.dtype('>f8'),
}
TYPE_CODES = {(dtype.kind, dtype.itemsize): code for code, dtype in IDX_TYPES.items()}


def _open(path, mode):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == '.gz' else path.open(mode)


def parse_idx(payload, source='<bytes>'):
    """Decode an IDX byte string into an array of native byte order."""

    if len(payload) < 4:
        raise DatasetError(f"{source}: too short for an IDX header")
    zero, type_code, ndim = struct.unpack('>HBB', payload[:4])
    if zero != 0 or type_code not in IDX_TYPES:
        raise DatasetError(f"{source}: bad IDX magic {payload[:4].hex()}")
    header = 4 + 4 * ndim
    if len(payload) < header:
        raise DatasetError(f"{source}: truncated IDX dimensions")
    shape = struct.unpack(f'>{ndim}I', payload[4:header])
    dtype = IDX_TYPES[type_code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) - header != expected:
        raise DatasetError(f"{source}: {len(payload) - header} data bytes for shape {shape}, expected {expected}")
    data = np.frombuffer(payload, dtype=dtype, offset=header).reshape(shape)
    return data.astype(dtype.newbyteorder('='))


def read_idx(path):
    try:
        with _open(path, 'rb') as handle:
            payload = handle.read()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read IDX file: {exc.strerror or exc}") from None
    return parse_idx(payload, source=str(path))


def encode_idx(array):
    array = np.asarray(array)
    code = TYPE_CODES.get((array.dtype.kind, array.dtype.itemsize))
    if code is None:
        raise DatasetError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack('>HBB', 0, code, array.ndim) + struct.pack(f'>{array.ndim}I', *array.shape)
    return header + np.ascontiguousarray(array, dtype=IDX_TYPES[code]).tobytes()


def write_idx(path, array):
    with _open(path, 'wb') as handle:
        handle.write(encode_idx(array))
    return Path(path)
