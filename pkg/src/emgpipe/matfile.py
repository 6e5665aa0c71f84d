"""Minimal MAT-file level 5 reader.

Supports exactly what NINAPRO files need: real 2-D numeric arrays (double,
single, and integer classes, logical allowed), optionally wrapped in
``miCOMPRESSED`` elements. Anything else is reported as unsupported when a
caller asks for it; unrelated variables of other classes are skipped.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptStreamError, FormatError, UnsupportedFeatureError, VariableLookupError

HEADER_BYTES = 128
MAGIC = b"MATLAB 5.0 MAT-file"

MI_MATRIX = 14
MI_COMPRESSED = 15

# miXXX data type -> numpy base dtype (endianness applied at read time)
MI_DTYPES = {
    1: "i1", 2: "u1", 3: "i2", 4: "u2", 5: "i4", 6: "u4",
    7: "f4", 9: "f8", 12: "i8", 13: "u8",
}

MX_CLASS_NAMES = {
    1: "cell", 2: "struct", 3: "object", 4: "char", 5: "sparse",
    6: "double", 7: "single", 8: "int8", 9: "uint8", 10: "int16",
    11: "uint16", 12: "int32", 13: "uint32", 14: "int64", 15: "uint64",
    16: "function", 17: "opaque",
}
NUMERIC_CLASSES = set(range(6, 16))

FLAG_COMPLEX = 0x0800


class _Unsupported:
    def __init__(self, reason):
        self.reason = reason


class MatVariables(dict):
    """Name -> array mapping; unsupported variables are kept as markers."""

    def get_array(self, name: str) -> np.ndarray:
        if name not in self:
            raise VariableLookupError(f"variable {name!r} not found; have {sorted(self)}")
        value = self[name]
        if isinstance(value, _Unsupported):
            raise UnsupportedFeatureError(f"variable {name!r}: {value.reason}")
        return value


def read_mat(source) -> MatVariables:
    """Parse a MAT v5 file (path or bytes) into :class:`MatVariables`."""
    data = source if isinstance(source, (bytes, bytearray, memoryview)) else Path(source).read_bytes()
    data = bytes(data)
    endian = _parse_header(data)
    out = MatVariables()
    pos = HEADER_BYTES
    while pos + 8 <= len(data):
        mtype, payload, pos = _read_element(data, pos, endian)
        if mtype == MI_COMPRESSED:
            inner = _inflate(payload)
            itype, ipayload, _ = _read_element(inner, 0, endian)
            mtype, payload = itype, ipayload
        if mtype == MI_MATRIX:
            name, value = _parse_matrix(payload, endian)
            out[name] = value
    return out


def _parse_header(data: bytes) -> str:
    if len(data) < HEADER_BYTES or not data.startswith(MAGIC):
        raise FormatError("not a MAT v5 file: bad header text")
    marker = data[126:128]
    if marker == b"IM":
        endian = "<"
    elif marker == b"MI":
        endian = ">"
    else:
        raise FormatError(f"bad endian indicator {marker!r}")
    (version,) = struct.unpack(endian + "H", data[124:126])
    if version != 0x0100:
        raise FormatError(f"unsupported MAT version 0x{version:04x}")
    return endian


def _read_element(data: bytes, pos: int, endian: str):
    if pos + 8 > len(data):
        raise FormatError(f"truncated element tag at byte {pos}")
    (first,) = struct.unpack_from(endian + "I", data, pos)
    if first >> 16:
        # small data element: type and size share the first word
        mtype, nbytes = first & 0xFFFF, first >> 16
        if nbytes > 4:
            raise FormatError(f"small element at byte {pos} claims {nbytes} bytes")
        return mtype, data[pos + 4:pos + 4 + nbytes], pos + 8
    mtype = first
    (nbytes,) = struct.unpack_from(endian + "I", data, pos + 4)
    start = pos + 8
    end = start + nbytes
    if end > len(data):
        raise FormatError(f"element at byte {pos} overruns file ({nbytes} bytes)")
    if mtype == MI_COMPRESSED:
        return mtype, data[start:end], end
    return mtype, data[start:end], start + ((nbytes + 7) // 8) * 8


def _inflate(payload: bytes) -> bytes:
    # MATLAB writes zlib-wrapped streams; bare DEFLATE is accepted too
    for wbits in (zlib.MAX_WBITS, -zlib.MAX_WBITS):
        try:
            d = zlib.decompressobj(wbits)
            out = d.decompress(payload)
            if d.eof:
                return out
        except zlib.error:
            continue
    raise CorruptStreamError("compressed element could not be inflated")


def _numeric(mtype: int, payload: bytes, endian: str) -> np.ndarray:
    if mtype not in MI_DTYPES:
        raise UnsupportedFeatureError(f"unsupported data type miTYPE={mtype}")
    dt = np.dtype(MI_DTYPES[mtype]).newbyteorder(endian)
    if len(payload) % dt.itemsize:
        raise FormatError("numeric element size is not a multiple of its item size")
    return np.frombuffer(payload, dtype=dt)


def _parse_matrix(payload: bytes, endian: str):
    pos = 0
    ftype, fdata, pos = _read_element(payload, pos, endian)
    if ftype != 6 or len(fdata) < 8:
        raise FormatError("array flags sub-element missing")
    flags = struct.unpack_from(endian + "I", fdata, 0)[0]
    mx_class = flags & 0xFF
    dtype_, ddata, pos = _read_element(payload, pos, endian)
    dims = _numeric(dtype_, ddata, endian).astype(np.int64)
    ntype, ndata, pos = _read_element(payload, pos, endian)
    name = bytes(ndata).decode("ascii", errors="replace")

    cls = MX_CLASS_NAMES.get(mx_class, f"class {mx_class}")
    if mx_class not in NUMERIC_CLASSES:
        return name, _Unsupported(f"unsupported MATLAB class '{cls}'")
    if flags & FLAG_COMPLEX:
        return name, _Unsupported(f"complex {cls} arrays are not supported")
    if len(dims) != 2:
        return name, _Unsupported(f"{len(dims)}-D {cls} arrays are not supported")
    rtype, rdata, pos = _read_element(payload, pos, endian)
    values = _numeric(rtype, rdata, endian).astype(np.float64)
    n_expected = int(np.prod(dims))
    if values.size != n_expected:
        raise FormatError(f"variable {name!r}: {values.size} values for dims {tuple(dims)}")
    # column-major on disk
    return name, values.reshape(tuple(dims), order="F")
