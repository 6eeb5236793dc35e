"""Group packets into bidirectional flows with timeout and TCP-termination rules."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import OutOfOrderTimestamp
from .packets import PROTO_NUMBER, PacketRecord, TcpFlags, Transport

DEFAULT_FLOW_TIMEOUT_US = 600_000_000
# a half-closed TCP flow is considered finished after this much silence
HALF_CLOSE_SILENCE_US = 1_000_000

Endpoint = tuple[str, int]


@dataclass(frozen=True)
class FlowKey:
    """Direction-independent flow identity: two endpoints plus transport."""

    endpoint_a: Endpoint
    endpoint_b: Endpoint
    protocol: Transport


def canonical_key(pkt: PacketRecord) -> FlowKey:
    a = (pkt.src_ip, pkt.src_port)
    b = (pkt.dst_ip, pkt.dst_port)
    if b < a:
        a, b = b, a
    return FlowKey(a, b, pkt.protocol)


class FlowPacket(NamedTuple):
    timestamp: int
    total_length: int
    transport_header_length: int
    payload_length: int
    tcp_flags: TcpFlags
    tcp_window: int | None


class Termination(enum.Enum):
    TIMEOUT = "TIMEOUT"
    TCP_FIN = "TCP_FIN"
    TCP_RST = "TCP_RST"
    END_OF_CAPTURE = "END_OF_CAPTURE"


@dataclass
class FlowState:
    """Accumulating per-direction packet lists; forward = sent by the initiator."""

    key: FlowKey
    initiator: Endpoint
    responder: Endpoint
    start_ts: int
    last_ts: int
    fwd_packets: list[FlowPacket] = field(default_factory=list)
    bwd_packets: list[FlowPacket] = field(default_factory=list)
    termination: Termination | None = None
    fin_fwd: bool = False
    fin_bwd: bool = False

    @property
    def protocol(self) -> Transport:
        return self.key.protocol

    @property
    def flow_id(self) -> str:
        src, dst = self.initiator, self.responder
        proto = PROTO_NUMBER[self.key.protocol]
        return f"{src[0]}-{dst[0]}-{src[1]}-{dst[1]}-{proto}-{self.start_ts}"

    @property
    def packet_count(self) -> int:
        return len(self.fwd_packets) + len(self.bwd_packets)


def _flow_packet(pkt: PacketRecord) -> FlowPacket:
    return FlowPacket(
        pkt.timestamp,
        pkt.total_length,
        pkt.transport_header_length,
        len(pkt.payload),
        pkt.tcp_flags,
        pkt.tcp_window,
    )


class FlowAssembler:
    """Single-writer flow table; requires packets in non-decreasing time order."""

    def __init__(self, flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US):
        self.flow_timeout_us = flow_timeout_us
        self._table: dict[FlowKey, FlowState] = {}
        self._last_ts: int | None = None

    def ingest(self, pkt: PacketRecord) -> list[FlowState]:
        """Add one packet; returns any flows this packet completed."""
        if self._last_ts is not None and pkt.timestamp < self._last_ts:
            raise OutOfOrderTimestamp(
                f"packet at {pkt.timestamp} after {self._last_ts}; sort the capture first"
            )
        self._last_ts = pkt.timestamp

        key = canonical_key(pkt)
        completed: list[FlowState] = []
        flow = self._table.get(key)

        if flow is not None and pkt.timestamp - flow.start_ts > self.flow_timeout_us:
            completed.append(self._complete(key, Termination.TIMEOUT))
            flow = None
        elif (
            flow is not None
            and (flow.fin_fwd or flow.fin_bwd)
            and pkt.timestamp - flow.last_ts >= HALF_CLOSE_SILENCE_US
        ):
            completed.append(self._complete(key, Termination.TCP_FIN))
            flow = None

        if flow is None:
            flow = FlowState(
                key=key,
                initiator=(pkt.src_ip, pkt.src_port),
                responder=(pkt.dst_ip, pkt.dst_port),
                start_ts=pkt.timestamp,
                last_ts=pkt.timestamp,
            )
            self._table[key] = flow

        forward = (pkt.src_ip, pkt.src_port) == flow.initiator
        (flow.fwd_packets if forward else flow.bwd_packets).append(_flow_packet(pkt))
        flow.last_ts = pkt.timestamp

        if pkt.protocol is Transport.TCP:
            fin_both_before = flow.fin_fwd and flow.fin_bwd
            if TcpFlags.RST in pkt.tcp_flags:
                completed.append(self._complete(key, Termination.TCP_RST))
            elif fin_both_before and pkt.tcp_flags & (TcpFlags.ACK | TcpFlags.FIN):
                completed.append(self._complete(key, Termination.TCP_FIN))
            elif TcpFlags.FIN in pkt.tcp_flags:
                if forward:
                    flow.fin_fwd = True
                else:
                    flow.fin_bwd = True
        return completed

    def flush(self) -> list[FlowState]:
        """Complete every open flow (END_OF_CAPTURE); idempotent once drained."""
        flows = sorted(self._table.values(), key=lambda f: (f.start_ts, f.flow_id))
        for flow in flows:
            flow.termination = Termination.END_OF_CAPTURE
        self._table.clear()
        return flows

    def _complete(self, key: FlowKey, termination: Termination) -> FlowState:
        flow = self._table.pop(key)
        flow.termination = termination
        return flow


def assemble_flows(
    packets: Iterable[PacketRecord], flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US
) -> list[FlowState]:
    """Run the assembler over a sorted packet stream; flows ordered by start time."""
    assembler = FlowAssembler(flow_timeout_us)
    flows: list[FlowState] = []
    for pkt in packets:
        flows.extend(assembler.ingest(pkt))
    flows.extend(assembler.flush())
    flows.sort(key=lambda f: (f.start_ts, f.flow_id))
    return flows
