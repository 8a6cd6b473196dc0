"""Bit-exact binary tensor container.

Layout: 8-byte magic "PI3TENSR", uint32 little-endian version (= 1), uint32
little-endian header length, UTF-8 JSON header, then the payload. The header
lists entries as {"name", "dtype", "shape", "byte_offset"} with dtype one of
f32/f64/u8. Offsets are relative to the payload start, ascending and
non-overlapping; tensor data is row-major little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BadMagic, BadVersion, BoundsViolation, CorruptHeader, InvalidConfig

MAGIC = b"PI3TENSR"
VERSION = 1

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u8": np.dtype("u1"),
}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64", np.dtype(np.uint8): "u8"}


def write_container(entries: dict) -> bytes:
    """Serialize named arrays; read_container(write_container(x)) == x."""
    header = []
    chunks = []
    offset = 0
    seen = set()
    for name, arr in entries.items():
        if name in seen:
            raise InvalidConfig(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # note: would promote 0-d to 1-d
        dtype_name = _DTYPE_NAMES.get(arr.dtype)
        if dtype_name is None:
            raise InvalidConfig(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        data = arr.astype(_DTYPES[dtype_name], copy=False).tobytes(order="C")
        header.append(
            {
                "name": name,
                "dtype": dtype_name,
                "shape": list(arr.shape),
                "byte_offset": offset,
            }
        )
        chunks.append(data)
        offset += len(data)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(header_bytes))
    out += header_bytes
    for chunk in chunks:
        out += chunk
    return bytes(out)


def read_container(data: bytes) -> dict:
    """Parse container bytes into an ordered name -> ndarray mapping."""
    if len(data) < 16 or data[:8] != MAGIC:
        raise BadMagic(f"bad magic {data[:8]!r}")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise BadVersion(f"unsupported container version {version}")
    (header_len,) = struct.unpack_from("<I", data, 12)
    if 16 + header_len > len(data):
        raise CorruptHeader(f"header length {header_len} exceeds file size {len(data)}")
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, list):
        raise CorruptHeader("header must be a JSON array of entries")

    payload = data[16 + header_len :]
    out = {}
    prev_end = 0
    last_offset = -1
    for entry in header:
        try:
            name = entry["name"]
            dtype_name = entry["dtype"]
            shape = tuple(int(v) for v in entry["shape"])
            offset = int(entry["byte_offset"])
        except (TypeError, KeyError, ValueError) as exc:
            raise CorruptHeader(f"malformed header entry {entry!r}") from exc
        if not isinstance(name, str) or name in out:
            raise CorruptHeader(f"missing or duplicate tensor name {name!r}")
        if dtype_name not in _DTYPES:
            raise CorruptHeader(f"unknown dtype {dtype_name!r}")
        if any(v < 0 for v in shape):
            raise CorruptHeader(f"negative dimension in shape {shape}")
        dtype = _DTYPES[dtype_name]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset <= last_offset:
            raise BoundsViolation(f"offsets not ascending at tensor {name!r}")
        if offset < prev_end:
            raise BoundsViolation(f"tensor {name!r} overlaps the previous one")
        if offset + nbytes > len(payload):
            raise BoundsViolation(
                f"tensor {name!r} spans [{offset}, {offset + nbytes}) beyond payload {len(payload)}"
            )
        arr = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=offset)
        out[name] = arr.reshape(shape).copy()
        prev_end = offset + nbytes
        last_offset = offset
    return out


def write_container_file(path, entries: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(write_container(entries))


def read_container_file(path) -> dict:
    with open(path, "rb") as fh:
        return read_container(fh.read())
