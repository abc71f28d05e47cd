"""Unidirectional 5-tuple flow tracking.

Flows are keyed without endpoint canonicalization: a request and its reply
belong to different flows, so a sample is always attributable to exactly
one source address. Each flow contributes at most one sample, built from
its first ``n`` packets (zero-padded when the flow ends or idles out
early).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .errors import CapacityExceeded
from .packet import PROTO_TCP, TCP_FIN, TCP_RST, ParsedPacket

DEFAULT_IDLE_TIMEOUT_S = 60.0
DEFAULT_MAX_FLOWS = 65536


class FlowKey(NamedTuple):
    src_ip: bytes
    dst_ip: bytes
    src_port: int
    dst_port: int
    protocol: int


class FlowStatus(enum.Enum):
    COLLECTING = "collecting"
    SAMPLED = "sampled"
    EXPIRED = "expired"


@dataclass
class FlowState:
    key: FlowKey
    first_ts: int
    last_ts: int
    packets: list = field(default_factory=list)
    status: FlowStatus = FlowStatus.COLLECTING


@dataclass(frozen=True)
class FlowSampleRaw:
    """First-n-packets window of one flow; the unit the model consumes.

    ``packets`` always holds exactly n entries; entries beyond
    ``real_count`` are empty byte strings marking padding.
    """

    key: FlowKey
    packets: tuple
    real_count: int
    first_ts: int


def flow_key(pkt: ParsedPacket) -> FlowKey:
    return FlowKey(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, pkt.protocol)


class FlowTracker:
    """Single-writer flow table emitting one FlowSampleRaw per flow.

    Exactly one thread may call :meth:`observe` / :meth:`expire`; emitted
    samples are immutable and safe to hand elsewhere.
    """

    def __init__(self, n: int, idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S,
                 max_flows: int = DEFAULT_MAX_FLOWS):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.idle_timeout_us = int(idle_timeout_s * 1_000_000)
        self.max_flows = max_flows
        self._flows: dict[FlowKey, FlowState] = {}
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._flows)

    def _emit(self, state: FlowState, status: FlowStatus) -> FlowSampleRaw:
        state.status = status
        real = len(state.packets)
        padded = tuple(state.packets) + (b"",) * (self.n - real)
        return FlowSampleRaw(key=state.key, packets=padded,
                             real_count=real, first_ts=state.first_ts)

    def _evict_oldest(self) -> list[FlowSampleRaw]:
        # Oldest-first eviction; collecting flows emit what they have,
        # already-sampled flows just drop.
        emitted = []
        while len(self._flows) > self.max_flows:
            collecting = [s for s in self._flows.values()
                          if s.status is FlowStatus.COLLECTING]
            if collecting:
                victim = min(collecting, key=lambda s: s.first_ts)
                emitted.append(self._emit(victim, FlowStatus.EXPIRED))
            else:
                victim = min(self._flows.values(), key=lambda s: s.first_ts)
            del self._flows[victim.key]
            self.evictions += 1
        return emitted

    def observe(self, pkt: ParsedPacket) -> Optional[FlowSampleRaw]:
        """Feed one tracked packet; returns the flow's sample when complete.

        A flow completes on its n-th packet, or early on TCP FIN/RST
        (zero-padded). Packets for already-sampled flows only refresh
        ``last_ts``. Raises :class:`CapacityExceeded` when the table
        overflows; the exception carries the evicted samples plus this
        packet's own emission.
        """
        if not pkt.tracked:
            raise ValueError(f"untracked protocol {pkt.protocol}")
        key = flow_key(pkt)
        state = self._flows.get(key)
        overflow = False
        if state is None:
            overflow = len(self._flows) + 1 > self.max_flows
            state = FlowState(key=key, first_ts=pkt.ts_micros, last_ts=pkt.ts_micros)
            self._flows[key] = state

        state.last_ts = pkt.ts_micros
        result = None
        if state.status is FlowStatus.COLLECTING:
            state.packets.append(pkt.ip_total_bytes)
            finished = len(state.packets) >= self.n
            if pkt.protocol == PROTO_TCP and pkt.tcp_flags & (TCP_FIN | TCP_RST):
                finished = True
            if finished:
                result = self._emit(state, FlowStatus.SAMPLED)

        if overflow:
            evicted = self._evict_oldest()
            raise CapacityExceeded(
                f"open-flow table exceeded {self.max_flows}",
                evicted=evicted, result=result)
        return result

    def expire(self, now: int) -> list[FlowSampleRaw]:
        """Emit and drop flows idle longer than the timeout, oldest first."""
        emitted = []
        dead = [s for s in self._flows.values()
                if now - s.last_ts > self.idle_timeout_us]
        for state in dead:
            if state.status is FlowStatus.COLLECTING:
                emitted.append(self._emit(state, FlowStatus.EXPIRED))
            del self._flows[state.key]
        emitted.sort(key=lambda s: s.first_ts)
        return emitted

    def flush(self) -> list[FlowSampleRaw]:
        """Force-expire everything still open (end of a replayed capture)."""
        if not self._flows:
            return []
        horizon = max(s.last_ts for s in self._flows.values())
        return self.expire(horizon + self.idle_timeout_us + 1)
