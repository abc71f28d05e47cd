"""Frame parsing and classic pcap file I/O.

Only Ethernet (linktype 1) and IPv4 are dissected; everything the engine
cannot model maps to :class:`Skip` so a capture stream never aborts on a
single bad frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

from .errors import BadMagic, IoFailure, TruncatedFile

ETHERNET = 1  # pcap DLT_EN10MB
ETH_HEADER_LEN = 14
ETHERTYPE_IPV4 = 0x0800
SNAPLEN = 65535

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17
TRACKED_PROTOCOLS = frozenset((PROTO_ICMP, PROTO_TCP, PROTO_UDP))

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_ACK = 0x10

# Minimum transport header bytes needed to extract ports/flags.
_MIN_TRANSPORT = {PROTO_TCP: 20, PROTO_UDP: 8, PROTO_ICMP: 4}


@dataclass(frozen=True)
class RawRecord:
    """One captured link-layer frame plus its capture timestamp."""

    ts_micros: int
    data: bytes


@dataclass(frozen=True)
class Skip:
    """Marker for frames the pipeline ignores; carries the reason."""

    reason: str


@dataclass(frozen=True)
class ParsedPacket:
    """A frame decomposed into link/IP/transport views.

    For ICMP, ``src_port``/``dst_port`` carry the ICMP type and code so
    distinct ICMP conversations key apart. ``ip_total_bytes`` spans from
    the IP header to the frame end.
    """

    ts_micros: int
    link_type: int
    ip_offset: int
    ip_version: int
    protocol: int
    src_ip: bytes
    dst_ip: bytes
    src_port: int
    dst_port: int
    tcp_flags: int
    ip_total_bytes: bytes

    @property
    def tracked(self) -> bool:
        return self.protocol in TRACKED_PROTOCOLS


def ip_to_str(ip: bytes) -> str:
    return ".".join(str(b) for b in ip)


def str_to_ip(text: str) -> bytes:
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"not a dotted quad: {text!r}")
    out = bytes(int(p) for p in parts)
    if any(int(p) > 255 or int(p) < 0 for p in parts):
        raise ValueError(f"not a dotted quad: {text!r}")
    return out


def parse_packet(rec: RawRecord, link_type: int = ETHERNET) -> ParsedPacket | Skip:
    """Parse a raw frame into a :class:`ParsedPacket`.

    Non-IPv4 ethertypes, fragments with nonzero offset, and frames shorter
    than their declared headers all return :class:`Skip`, never raise.
    """
    if link_type != ETHERNET:
        raise ValueError(f"unsupported link type {link_type}")
    frame = rec.data
    if len(frame) < ETH_HEADER_LEN:
        return Skip("short ethernet header")
    ethertype = (frame[12] << 8) | frame[13]
    if ethertype != ETHERTYPE_IPV4:
        return Skip(f"ethertype 0x{ethertype:04x}")
    ip = frame[ETH_HEADER_LEN:]
    if len(ip) < 20:
        return Skip("short ipv4 header")
    version = ip[0] >> 4
    if version != 4:
        return Skip(f"ip version {version}")
    ihl = (ip[0] & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        return Skip("bad ihl")
    frag = ((ip[6] << 8) | ip[7]) & 0x1FFF
    if frag != 0:
        return Skip("non-first fragment")
    protocol = ip[9]
    src_ip = ip[12:16]
    dst_ip = ip[16:20]

    src_port = dst_port = 0
    tcp_flags = 0
    if protocol in TRACKED_PROTOCOLS:
        need = _MIN_TRANSPORT[protocol]
        if len(ip) < ihl + need:
            return Skip("short transport header")
        if protocol == PROTO_ICMP:
            src_port = ip[ihl]       # icmp type
            dst_port = ip[ihl + 1]   # icmp code
        else:
            src_port = (ip[ihl] << 8) | ip[ihl + 1]
            dst_port = (ip[ihl + 2] << 8) | ip[ihl + 3]
            if protocol == PROTO_TCP:
                tcp_flags = ip[ihl + 13]

    return ParsedPacket(
        ts_micros=rec.ts_micros,
        link_type=link_type,
        ip_offset=ETH_HEADER_LEN,
        ip_version=4,
        protocol=protocol,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        tcp_flags=tcp_flags,
        ip_total_bytes=ip,
    )


_GLOBAL_HDR = struct.Struct("<IHHiIII")
_REC_HDR_LE = struct.Struct("<IIII")
_REC_HDR_BE = struct.Struct(">IIII")


class PcapReader:
    """Iterator over the records of a classic pcap stream.

    Accepts both byte orders (magic 0xa1b2c3d4 written either way) and
    honors snaplen truncation: the stored length is what is yielded.
    """

    def __init__(self, stream: BinaryIO):
        magic = stream.read(4)
        if magic == b"\xd4\xc3\xb2\xa1":
            self._rec = _REC_HDR_LE
            rest_fmt = "<HHiIII"
        elif magic == b"\xa1\xb2\xc3\xd4":
            self._rec = _REC_HDR_BE
            rest_fmt = ">HHiIII"
        else:
            raise BadMagic(f"unrecognized magic {magic.hex()}")
        rest = stream.read(20)
        if len(rest) < 20:
            raise TruncatedFile("global header cut short")
        (self.version_major, self.version_minor, _tz, _sig,
         self.snaplen, self.link_type) = struct.unpack(rest_fmt, rest)
        self._stream = stream

    def __iter__(self) -> Iterator[RawRecord]:
        while True:
            hdr = self._stream.read(16)
            if not hdr:
                return
            if len(hdr) < 16:
                raise TruncatedFile("record header cut short")
            ts_sec, ts_usec, incl_len, _orig_len = self._rec.unpack(hdr)
            body = self._stream.read(incl_len)
            if len(body) < incl_len:
                raise TruncatedFile("record body cut short")
            yield RawRecord(ts_micros=ts_sec * 1_000_000 + ts_usec, data=body)


def read_pcap(stream: BinaryIO) -> Iterator[RawRecord]:
    """Yield records from a classic pcap stream in file order."""
    return iter(PcapReader(stream))


def write_pcap(records: Iterable[RawRecord], stream: BinaryIO,
               link_type: int = ETHERNET) -> int:
    """Write records as classic little-endian pcap; returns bytes written.

    Output is byte-deterministic for identical input.
    """
    try:
        stream.write(_GLOBAL_HDR.pack(0xA1B2C3D4, 2, 4, 0, 0, SNAPLEN, link_type))
        written = _GLOBAL_HDR.size
        for rec in records:
            if len(rec.data) > SNAPLEN:
                raise IoFailure(f"record exceeds snaplen: {len(rec.data)}")
            ts_sec, ts_usec = divmod(rec.ts_micros, 1_000_000)
            stream.write(_REC_HDR_LE.pack(ts_sec, ts_usec, len(rec.data), len(rec.data)))
            stream.write(rec.data)
            written += 16 + len(rec.data)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return written
