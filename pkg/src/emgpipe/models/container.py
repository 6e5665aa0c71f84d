"""Binary model container.

Layout::

    b"EMGPMODL"                      magic
    u64 little-endian                header length
    JSON header (sorted keys)        kind, version, schema hash, seed, ...
    repeated: u64 length + bytes     one section per state array, header order
    u64                              BLAKE2b-64 of everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, IntegrityError, VersionError

MAGIC = b"EMGPMODL"
FORMAT_VERSION = 1


def _checksum(blob: bytes) -> bytes:
    return hashlib.blake2b(blob, digest_size=8).digest()


def encode(header: dict, state: dict) -> bytes:
    names = sorted(state)
    arrays = [np.ascontiguousarray(state[k]) for k in names]
    arrays = [a.astype(a.dtype.newbyteorder("<")) for a in arrays]
    header = dict(header)
    header["version"] = header.get("version", FORMAT_VERSION)
    header["sections"] = [{"name": k, "dtype": a.dtype.str, "shape": list(a.shape)} for k, a in zip(names, arrays)]
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(hbytes)), hbytes]
    for a in arrays:
        raw = a.tobytes(order="C")
        parts += [struct.pack("<Q", len(raw)), raw]
    blob = b"".join(parts)
    return blob + _checksum(blob)


def decode(blob: bytes):
    if len(blob) < len(MAGIC) + 16 or not blob.startswith(MAGIC):
        raise FormatError("not a model container")
    body, tail = blob[:-8], blob[-8:]
    if _checksum(body) != tail:
        raise IntegrityError("model container checksum mismatch")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    header = json.loads(body[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("version", 0) > FORMAT_VERSION:
        raise VersionError(f"container version {header['version']} is newer than supported {FORMAT_VERSION}")
    state = {}
    for sec in header["sections"]:
        (n,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        arr = np.frombuffer(body[pos:pos + n], dtype=np.dtype(sec["dtype"])).reshape(sec["shape"])
        state[sec["name"]] = arr.copy()
        pos += n
    if pos != len(body):
        raise FormatError("trailing bytes in model container")
    return header, state


def write(path, header: dict, state: dict) -> None:
    Path(path).write_bytes(encode(header, state))


def read(path):
    return decode(Path(path).read_bytes())
