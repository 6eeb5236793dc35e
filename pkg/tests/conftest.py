"""Shared builders for tests: hand-rolled frames and random flows."""
from __future__ import annotations

import random
import struct

import pytest

from camsieve.flows import FlowKey, FlowPacket, FlowState, Termination
from camsieve.packets import TcpFlags, Transport


def ipv4_frame(
    src_ip="10.0.0.1",
    dst_ip="10.0.0.2",
    proto=17,
    transport=b"",
    src_mac=b"\xaa" * 6,
    dst_mac=b"\xbb" * 6,
    vlan=None,
    frag_offset=0,
    ihl_words=5,
    total_length=None,
) -> bytes:
    """Ethernet+IPv4 frame assembled field by field from the RFC offsets."""
    if total_length is None:
        total_length = ihl_words * 4 + len(transport)
    ip = struct.pack(
        "!BBHHHBBH4s4s",
        (4 << 4) | ihl_words,
        0,
        total_length,
        0x1234,
        frag_offset & 0x1FFF,
        64,
        proto,
        0,
        bytes(int(o) for o in src_ip.split(".")),
        bytes(int(o) for o in dst_ip.split(".")),
    )
    ip += b"\x00" * (ihl_words * 4 - 20)
    if vlan is not None:
        tag = struct.pack("!HHH", 0x8100, vlan, 0x0800)
        return dst_mac + src_mac + tag + ip + transport
    return dst_mac + src_mac + struct.pack("!H", 0x0800) + ip + transport


def udp_segment(src_port=5000, dst_port=6000, payload=b"") -> bytes:
    return struct.pack("!HHHH", src_port, dst_port, 8 + len(payload), 0) + payload


def tcp_segment(
    src_port=5000, dst_port=6000, flags=TcpFlags.ACK, window=8192,
    payload=b"", data_offset_words=5, seq=1, ack=1,
) -> bytes:
    header = struct.pack(
        "!HHIIBBHHH",
        src_port, dst_port, seq, ack,
        data_offset_words << 4, int(flags), window, 0, 0,
    )
    header += b"\x00" * (data_offset_words * 4 - 20)
    return header + payload


def write_pcap_bytes(frames, magic=0xA1B2C3D4, order="<", subsec_scale=1) -> bytes:
    """Minimal pcap writer independent of the package's own."""
    out = struct.pack(order + "IHHiIII", magic, 2, 4, 0, 0, 65535, 1)
    for ts_us, frame in frames:
        out += struct.pack(
            order + "IIII",
            ts_us // 1_000_000,
            (ts_us % 1_000_000) * subsec_scale,
            len(frame),
            len(frame),
        )
        out += frame
    return out


def make_flow(fwd_packets, bwd_packets, protocol=Transport.UDP,
              initiator=("10.0.0.1", 5000), responder=("10.0.0.2", 6000)) -> FlowState:
    """FlowState built directly, bypassing the assembler."""
    a, b = sorted([initiator, responder])
    all_ts = [p.timestamp for p in fwd_packets + bwd_packets]
    flow = FlowState(
        key=FlowKey(a, b, protocol),
        initiator=initiator,
        responder=responder,
        start_ts=min(all_ts),
        last_ts=max(all_ts),
        fwd_packets=list(fwd_packets),
        bwd_packets=list(bwd_packets),
        termination=Termination.END_OF_CAPTURE,
    )
    return flow


def random_flow(rng: random.Random) -> FlowState:
    """Random mixed TCP/UDP flow of up to 20 packets; first packet is forward."""
    tcp = rng.random() < 0.5
    n = rng.randint(1, 20)
    times = sorted(rng.randint(0, 30_000_000) for _ in range(n))
    times[0] = 0  # pin the start so the first packet is forward

    fwd, bwd = [], []
    for i, ts in enumerate(times):
        forward = True if i == 0 else rng.random() < 0.6
        payload_len = rng.choice([0, 0, rng.randint(1, 1500)])
        if tcp:
            header_len = rng.choice([20, 24, 32, 40])
            flags = TcpFlags(rng.randint(0, 255))
            window = rng.randint(0, 65535)
        else:
            header_len, flags, window = 8, TcpFlags(0), None
        pkt = FlowPacket(ts, payload_len + header_len + 34, header_len, payload_len, flags, window)
        (fwd if forward else bwd).append(pkt)
    return make_flow(fwd, bwd, Transport.TCP if tcp else Transport.UDP)


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
