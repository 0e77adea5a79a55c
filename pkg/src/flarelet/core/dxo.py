"""Data Exchange Object: the typed payload carried inside every Shareable.

A DXO is an ordered map of named tensors (or, for collections, named child
DXOs) plus a scalar metadata map.  Tensors are numpy arrays restricted to
float32 / float64 / int64.

Binary layout (format version 1):

    [1 byte]  format version = 1
    [4 bytes] header length, big-endian
    [bytes]   header: UTF-8 JSON {kind, meta, entries:[...]}
    [bytes]   raw little-endian tensor data, depth-first entry order

The layout is canonical: encoding the same DXO always yields the same bytes.
"""

from __future__ import annotations

import json
import math
import os
from enum import Enum
from typing import Optional, Union

import numpy as np

FORMAT_VERSION = 1
_DEFAULT_MAX_PAYLOAD = 1 << 30


class DxoKind(str, Enum):
    WEIGHTS = "WEIGHTS"
    WEIGHT_DIFF = "WEIGHT_DIFF"
    METRICS = "METRICS"
    STATISTICS = "STATISTICS"
    COLLECTION = "COLLECTION"


_DTYPE_NAMES = {
    np.dtype(np.float32): "F32",
    np.dtype(np.float64): "F64",
    np.dtype(np.int64): "I64",
}
_NAME_DTYPES = {name: dt for dt, name in _DTYPE_NAMES.items()}

MetaValue = Union[str, int, float, bool]


class EncodeError(ValueError):
    """Raised when a DXO cannot be serialized."""


class DecodeError(ValueError):
    """Raised when bytes do not decode to a valid DXO.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def max_payload_bytes() -> int:
    """Configured payload cap; FLARELET_MAX_PAYLOAD overrides the 1 GiB default."""
    raw = os.environ.get("FLARELET_MAX_PAYLOAD")
    if raw:
        try:
            return int(raw)
        except ValueError:
            pass
    return _DEFAULT_MAX_PAYLOAD


def as_tensor(value) -> np.ndarray:
    """Coerce ``value`` to a C-contiguous tensor of an allowed dtype."""
    arr = np.asarray(value)
    if arr.dtype not in _DTYPE_NAMES:
        if np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        elif np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.int64)
        else:
            raise EncodeError(f"unsupported tensor dtype {arr.dtype}")
    return np.ascontiguousarray(arr)


class Dxo:
    """Typed payload: kind + ordered name->tensor map + scalar meta map."""

    __slots__ = ("kind", "data", "meta")

    def __init__(self, kind, data=None, meta=None):
        self.kind = DxoKind(kind)
        self.data: dict = {}
        if data:
            for name, value in data.items():
                self.data[name] = value if isinstance(value, Dxo) else as_tensor(value)
        self.meta: dict = dict(meta) if meta else {}

    def validate(self) -> None:
        """Check the structural invariants; raise EncodeError on violation."""
        self._validate(depth=0)

    def _validate(self, depth: int) -> None:
        for key, value in self.meta.items():
            if not isinstance(key, str) or not key:
                raise EncodeError("meta keys must be non-empty strings")
            if not isinstance(value, (str, int, float, bool)):
                raise EncodeError(f"meta value for {key!r} is not a scalar")
            if isinstance(value, float) and not math.isfinite(value):
                raise EncodeError(f"meta value for {key!r} must be finite")
        for name, value in self.data.items():
            if not isinstance(name, str) or not name:
                raise EncodeError("entry names must be non-empty strings")
            if isinstance(value, Dxo):
                if self.kind is not DxoKind.COLLECTION:
                    raise EncodeError("nested DXOs require kind=COLLECTION")
                if depth >= 2:
                    raise EncodeError("COLLECTION nests at most 2 levels")
                value._validate(depth + 1)
            else:
                if self.kind is DxoKind.COLLECTION:
                    raise EncodeError("COLLECTION entries must be DXOs")
                if value.dtype not in _DTYPE_NAMES:
                    raise EncodeError(f"unsupported dtype {value.dtype}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dxo):
            return NotImplemented
        if self.kind != other.kind or self.meta != other.meta:
            return False
        if list(self.data.keys()) != list(other.data.keys()):
            return False
        for name, value in self.data.items():
            theirs = other.data[name]
            if isinstance(value, Dxo) or isinstance(theirs, Dxo):
                if value != theirs:
                    return False
            else:
                if value.dtype != theirs.dtype or value.shape != theirs.shape:
                    return False
                if value.tobytes() != theirs.tobytes():
                    return False
        return True

    def __repr__(self) -> str:
        return f"Dxo(kind={self.kind.value}, entries={list(self.data)}, meta={self.meta})"


def _header_dict(dxo: Dxo) -> dict:
    entries = []
    for name, value in dxo.data.items():
        if isinstance(value, Dxo):
            child = _header_dict(value)
            child["name"] = name
            entries.append(child)
        else:
            entries.append({"name": name, "dtype": _DTYPE_NAMES[value.dtype],
                            "shape": list(value.shape)})
    return {"kind": dxo.kind.value, "meta": dict(sorted(dxo.meta.items())),
            "entries": entries}


def _tensor_chunks(dxo: Dxo, out: list) -> None:
    for value in dxo.data.values():
        if isinstance(value, Dxo):
            _tensor_chunks(value, out)
        else:
            if value.dtype.byteorder == ">":
                value = value.astype(value.dtype.newbyteorder("<"))
            out.append(value.tobytes(order="C"))


def dxo_encode(dxo: Dxo, max_bytes: Optional[int] = None) -> bytes:
    """Serialize a DXO to canonical bytes; EncodeError if invalid or oversize."""
    dxo.validate()
    header = json.dumps(_header_dict(dxo), separators=(",", ":"),
                        allow_nan=False).encode("utf-8")
    chunks: list = []
    _tensor_chunks(dxo, chunks)
    body = b"".join(chunks)
    total = 5 + len(header) + len(body)
    cap = max_bytes if max_bytes is not None else max_payload_bytes()
    if total > cap:
        raise EncodeError(f"encoded DXO is {total} bytes, exceeds cap {cap}")
    return bytes([FORMAT_VERSION]) + len(header).to_bytes(4, "big") + header + body


def _parse_entries(header: dict, buf: bytes, pos: int, depth: int) -> tuple:
    kind_raw = header.get("kind")
    try:
        kind = DxoKind(kind_raw)
    except ValueError:
        raise DecodeError(f"unknown DXO kind {kind_raw!r}", pos)
    meta = header.get("meta")
    entries = header.get("entries")
    if not isinstance(meta, dict) or not isinstance(entries, list):
        raise DecodeError("malformed DXO header", pos)
    for key, value in meta.items():
        if not isinstance(key, str) or not key:
            raise DecodeError("meta keys must be non-empty strings", pos)
        if not isinstance(value, (str, int, float, bool)):
            raise DecodeError("meta values must be scalars", pos)
    data: dict = {}
    for entry in entries:
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
            raise DecodeError("malformed entry", pos)
        name = entry["name"]
        if not name or name in data:
            raise DecodeError(f"bad or duplicate entry name {name!r}", pos)
        if "kind" in entry:
            if kind is not DxoKind.COLLECTION:
                raise DecodeError("nested entry outside COLLECTION", pos)
            if depth >= 2:
                raise DecodeError("COLLECTION nests at most 2 levels", pos)
            child, pos = _parse_entries(entry, buf, pos, depth + 1)
            data[name] = child
        else:
            if kind is DxoKind.COLLECTION:
                raise DecodeError("COLLECTION entries must be DXOs", pos)
            dtype = _NAME_DTYPES.get(entry.get("dtype"))
            shape = entry.get("shape")
            if dtype is None:
                raise DecodeError(f"unknown dtype {entry.get('dtype')!r}", pos)
            if (not isinstance(shape, list)
                    or any(not isinstance(d, int) or isinstance(d, bool) or d < 0
                           for d in shape)):
                raise DecodeError("bad shape", pos)
            count = 1
            for d in shape:
                count *= d
            nbytes = count * dtype.itemsize
            if pos + nbytes > len(buf):
                raise DecodeError("buffer truncated mid-tensor", len(buf))
            arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
            data[name] = arr.reshape(shape).copy()
            pos += nbytes
    dxo = Dxo(kind)
    dxo.data = data
    dxo.meta = meta
    return dxo, pos


def dxo_decode(buf: bytes) -> Dxo:
    """Exact inverse of dxo_encode; DecodeError (with offset) on any defect."""
    if len(buf) < 5:
        raise DecodeError("buffer shorter than fixed prefix", len(buf))
    if buf[0] != FORMAT_VERSION:
        raise DecodeError(f"unsupported format version {buf[0]}", 0)
    header_len = int.from_bytes(buf[1:5], "big")
    if 5 + header_len > len(buf):
        raise DecodeError("buffer truncated mid-header", len(buf))
    try:
        header = json.loads(buf[5:5 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DecodeError("header is not valid JSON", 5)
    if not isinstance(header, dict):
        raise DecodeError("header is not a JSON object", 5)
    dxo, pos = _parse_entries(header, buf, 5 + header_len, depth=0)
    if pos != len(buf):
        raise DecodeError(f"{len(buf) - pos} trailing bytes after tensor data", pos)
    return dxo
