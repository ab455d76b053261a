"""Versioned binary containers and CSV reports.

Layout of a container file (all integers little-endian uint32)::

    magic (4 bytes) | version | header length | header (canonical JSON, utf-8)
    | array count | per array: name length, name, ndim, dims..., float64 LE data
"""
from __future__ import annotations

import csv
import io
import json
import struct
from typing import Iterable, Mapping

import numpy as np

from .config import canonical_json
from .exceptions import FormatError

FORMAT_VERSION = 1

_U32 = struct.Struct("<I")


def _u32(n: int) -> bytes:
    return _U32.pack(n)


def encode(magic: bytes, header: dict, arrays: Mapping[str, np.ndarray]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    buf = io.BytesIO()
    head = canonical_json(header).encode("utf-8")
    buf.write(magic + _u32(FORMAT_VERSION) + _u32(len(head)) + head)
    buf.write(_u32(len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw_name = name.encode("utf-8")
        buf.write(_u32(len(raw_name)) + raw_name + _u32(arr.ndim))
        for dim in arr.shape:
            buf.write(_u32(dim))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("container is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode(magic: bytes, data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(data)
    if r.take(4) != magic:
        raise FormatError(f"not a {magic.decode()} container")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    header = json.loads(r.take(r.u32()).decode("utf-8"))
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise FormatError("trailing bytes after container payload")
    return header, arrays


def write_file(path, magic: bytes, header: dict, arrays: Mapping[str, np.ndarray]) -> bytes:
    payload = encode(magic, header, arrays)
    with open(path, "wb") as fh:
        fh.write(payload)
    return payload


def read_file(path, magic: bytes):
    with open(path, "rb") as fh:
        return decode(magic, fh.read())


# -- CSV ---------------------------------------------------------------------

def write_csv(path_or_buf, rows: Iterable[Mapping], columns: list[str], config_json: str | None = None):
    """CSV preceded by ``# format_version`` and ``# config`` comment lines."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        if config_json is not None:
            fh.write(f"# config={config_json}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})
    finally:
        if own:
            fh.close()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def read_csv(path) -> tuple[dict, list[dict]]:
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            meta[key] = value
        else:
            body.append(line)
    if meta.get("format_version") != str(FORMAT_VERSION):
        raise FormatError(f"unsupported CSV format version {meta.get('format_version')!r}")
    return meta, list(csv.DictReader(body))
