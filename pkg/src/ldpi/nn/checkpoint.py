"""Binary checkpoint format (magic "LDPM").

Layout, all integers little-endian:

  magic        4s  = b"LDPM"
  version      u32 = 1
  header_len   u32, header JSON (graph/arch/sample config, json-able only)
  params       u32 count, then records
  buffers      u32 count, then records
  optimizer    u8 kind (0 none / 1 sgd / 2 adam); if kind: u64 t,
               u32 count, then records
  center       u8 present; if present: one record

One record: u16 name length, name (utf-8), u8 dtype tag (0 f32 / 1 f64),
u8 rank, u32 per dim, then raw little-endian values. Tensor bytes are
written verbatim, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO, Optional

import numpy as np

from ..errors import CorruptCheckpoint

MAGIC = b"LDPM"
VERSION = 1

_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

OPT_NONE, OPT_SGD, OPT_ADAM = 0, 1, 2


def _write_record(stream: BinaryIO, name: str, arr: np.ndarray):
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.float32:
        arr = arr.astype("<f4", copy=False)
    elif arr.dtype == np.float64:
        arr = arr.astype("<f8", copy=False)
    tag = _DTYPE_TAGS.get(arr.dtype)
    if tag is None:
        raise CorruptCheckpoint(f"unsupported dtype {arr.dtype} for {name!r}")
    encoded = name.encode("utf-8")
    stream.write(struct.pack("<H", len(encoded)))
    stream.write(encoded)
    stream.write(struct.pack("<BB", tag, arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    stream.write(arr.tobytes())


def _read_exact(stream: BinaryIO, size: int) -> bytes:
    data = stream.read(size)
    if len(data) < size:
        raise CorruptCheckpoint("checkpoint cut short")
    return data


def _read_record(stream: BinaryIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(stream, 2))
    name = _read_exact(stream, name_len).decode("utf-8")
    tag, rank = struct.unpack("<BB", _read_exact(stream, 2))
    if tag not in _TAG_DTYPES:
        raise CorruptCheckpoint(f"unknown dtype tag {tag}")
    dims = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank))
    dtype = _TAG_DTYPES[tag]
    count = 1
    for d in dims:
        count *= d
    arr = np.frombuffer(_read_exact(stream, count * dtype.itemsize), dtype=dtype)
    return name, arr.reshape(dims).copy()


def _write_section(stream: BinaryIO, tensors: dict):
    stream.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        _write_record(stream, name, tensors[name])


def _read_section(stream: BinaryIO) -> dict:
    (count,) = struct.unpack("<I", _read_exact(stream, 4))
    return dict(_read_record(stream) for _ in range(count))


def save_checkpoint(stream: BinaryIO, header: dict, params: dict, buffers: dict,
                    optimizer: Optional[tuple] = None,
                    center: Optional[np.ndarray] = None):
    """Write a checkpoint. ``optimizer`` is (kind, t, tensors) or None."""
    stream.write(MAGIC)
    stream.write(struct.pack("<I", VERSION))
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    stream.write(struct.pack("<I", len(blob)))
    stream.write(blob)
    _write_section(stream, params)
    _write_section(stream, buffers)
    if optimizer is None:
        stream.write(struct.pack("<B", OPT_NONE))
    else:
        kind, t, tensors = optimizer
        stream.write(struct.pack("<BQ", kind, t))
        _write_section(stream, tensors)
    if center is None:
        stream.write(struct.pack("<B", 0))
    else:
        stream.write(struct.pack("<B", 1))
        _write_record(stream, "center", center)


def load_checkpoint(stream: BinaryIO):
    """Read a checkpoint; returns (header, params, buffers, optimizer, center)."""
    if _read_exact(stream, 4) != MAGIC:
        raise CorruptCheckpoint("not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(stream, 4))
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", _read_exact(stream, 4))
    header = json.loads(_read_exact(stream, hlen).decode("utf-8"))
    params = _read_section(stream)
    buffers = _read_section(stream)
    (kind,) = struct.unpack("<B", _read_exact(stream, 1))
    optimizer = None
    if kind != OPT_NONE:
        (t,) = struct.unpack("<Q", _read_exact(stream, 8))
        optimizer = (kind, t, _read_section(stream))
    (has_center,) = struct.unpack("<B", _read_exact(stream, 1))
    center = None
    if has_center:
        name, center = _read_record(stream)
        if name != "center":
            raise CorruptCheckpoint(f"unexpected trailing record {name!r}")
    return header, params, buffers, optimizer, center
