"""Sample preprocessing: anonymize, truncate/pad, normalize.

A flow's first n packets become one flat vector of n*l values in [0, 1]:
per packet, the source/destination address bytes are zeroed in place
(offsets preserved so transport headers stay at protocol-defined
positions), the packet is cut or zero-padded to l bytes, and bytes divide
by 255. Ethernet headers never reach this layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional

import numpy as np

from .errors import CorruptCheckpoint, TooShort
from .flow import FlowKey, FlowSampleRaw

PAPER_SETTINGS = ((4, 60), (6, 100), (8, 150))

_SRC_ADDR = slice(12, 16)
_DST_ADDR = slice(16, 20)


@dataclass(frozen=True)
class SampleConfig:
    """Packet window shape: n packets per sample, l bytes per packet."""

    n: int = 4
    l: int = 60

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.l < 20:
            raise ValueError(f"l must cover an IPv4 header (>= 20), got {self.l}")

    @property
    def dim(self) -> int:
        return self.n * self.l


@dataclass(frozen=True, eq=False)
class SampleVector:
    """Fixed-length normalized float vector for one flow."""

    values: np.ndarray
    key: Optional[FlowKey] = None
    first_ts: int = 0


def anonymize_packet(ip_bytes: bytes) -> bytes:
    """Zero the 4-byte source and destination address fields in place.

    Input must start at the IPv4 header; length and all other bytes are
    unchanged, so the operation is idempotent.
    """
    if len(ip_bytes) < 20:
        raise TooShort(f"need >= 20 IP bytes, got {len(ip_bytes)}")
    out = bytearray(ip_bytes)
    out[_SRC_ADDR] = b"\x00\x00\x00\x00"
    out[_DST_ADDR] = b"\x00\x00\x00\x00"
    return bytes(out)


def to_sample(raw: FlowSampleRaw, cfg: SampleConfig) -> SampleVector:
    """Build the model input vector from a raw flow sample.

    Pure and deterministic; padding entries become all-zero segments.
    """
    if len(raw.packets) != cfg.n:
        raise ValueError(f"expected {cfg.n} packet entries, got {len(raw.packets)}")
    values = np.zeros(cfg.dim, dtype=np.float32)
    for i, pkt in enumerate(raw.packets):
        if i >= raw.real_count or len(pkt) == 0:
            continue
        cleaned = anonymize_packet(pkt)[:cfg.l]
        seg = np.frombuffer(cleaned, dtype=np.uint8).astype(np.float32)
        values[i * cfg.l: i * cfg.l + len(seg)] = seg / np.float32(255.0)
    values.flags.writeable = False
    return SampleVector(values=values, key=raw.key, first_ts=raw.first_ts)


# --- dataset container -----------------------------------------------------
#
# Binary layout (all integers little-endian):
#   magic   4s   = b"LDDS"
#   version u16  = 1
#   n       u16
#   l       u16
#   count   u64
#   labels  u8[count]          (0 benign / 1 anomalous)
#   values  f32[count * n * l] (row-major, one row per sample)

_DS_MAGIC = b"LDDS"
_DS_HDR = struct.Struct("<4sHHHQ")


def save_dataset(stream: BinaryIO, X: np.ndarray, labels: np.ndarray,
                 cfg: SampleConfig) -> int:
    """Write a sample matrix with labels; returns bytes written."""
    X = np.ascontiguousarray(X, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if X.ndim != 2 or X.shape[1] != cfg.dim:
        raise ValueError(f"X must be (count, {cfg.dim}), got {X.shape}")
    if labels.shape != (X.shape[0],):
        raise ValueError("one label per sample required")
    stream.write(_DS_HDR.pack(_DS_MAGIC, 1, cfg.n, cfg.l, X.shape[0]))
    stream.write(labels.tobytes())
    stream.write(X.tobytes())
    return _DS_HDR.size + labels.nbytes + X.nbytes


def load_dataset(stream: BinaryIO) -> tuple[SampleConfig, np.ndarray, np.ndarray]:
    """Read a dataset container; returns (cfg, X, labels)."""
    hdr = stream.read(_DS_HDR.size)
    if len(hdr) < _DS_HDR.size:
        raise CorruptCheckpoint("dataset header cut short")
    magic, version, n, l, count = _DS_HDR.unpack(hdr)
    if magic != _DS_MAGIC:
        raise CorruptCheckpoint(f"not a dataset file (magic {magic!r})")
    if version != 1:
        raise CorruptCheckpoint(f"unsupported dataset version {version}")
    cfg = SampleConfig(n=n, l=l)
    labels = np.frombuffer(stream.read(count), dtype=np.uint8)
    if labels.size != count:
        raise CorruptCheckpoint("dataset labels cut short")
    raw = stream.read(count * cfg.dim * 4)
    X = np.frombuffer(raw, dtype="<f4")
    if X.size != count * cfg.dim:
        raise CorruptCheckpoint("dataset values cut short")
    return cfg, X.reshape(count, cfg.dim).copy(), labels.copy()
