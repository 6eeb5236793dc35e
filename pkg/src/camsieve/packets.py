"""pcap reading and Ethernet/IP/TCP/UDP decoding into normalized packet records.

Only classic pcap is supported (both endiannesses, micro- and nanosecond
timestamp resolution). pcapng files are rejected at the magic check.
"""
from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

from .errors import MalformedCapture

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = 101

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = (0x8100, 0x88A8)

IPPROTO_TCP = 6
IPPROTO_UDP = 17

# magic -> (byte order, divisor turning the subsecond field into microseconds)
_PCAP_MAGICS = {
    0xA1B2C3D4: ("<", 1),
    0xD4C3B2A1: (">", 1),
    0xA1B23C4D: ("<", 1000),
    0x4D3CB2A1: (">", 1000),
}


class Transport(enum.Enum):
    TCP = "TCP"
    UDP = "UDP"
    OTHER = "OTHER"  # never emitted by decode_packet; kept for completeness


PROTO_NUMBER = {Transport.TCP: 6, Transport.UDP: 17}


class TcpFlags(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWE = 0x80  # congestion-window-reduced bit, named as in the CSV schema


@dataclass(frozen=True)
class PacketRecord:
    """One decoded TCP or UDP packet, timestamp in microseconds since epoch."""

    timestamp: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: Transport
    total_length: int  # bytes on the wire (pcap orig_len, link header included)
    transport_header_length: int
    payload: bytes
    tcp_flags: TcpFlags = TcpFlags(0)
    tcp_window: int | None = None


class CapturedFrame(NamedTuple):
    timestamp: int  # microseconds
    link_type: int
    data: bytes
    wire_length: int


def open_capture(path: str | Path) -> Iterator[CapturedFrame]:
    """Yield raw frames from a pcap file in file order.

    Timestamps are converted to microseconds (nanosecond captures are
    truncated). Raises MalformedCapture on a bad magic number or a record
    cut short by file truncation; frames before the cut are still yielded.
    """
    with open(path, "rb") as fh:
        header = fh.read(24)
        if len(header) < 24:
            raise MalformedCapture(f"{path}: file shorter than a pcap global header")
        magic_le = struct.unpack("<I", header[:4])[0]
        if magic_le not in _PCAP_MAGICS:
            raise MalformedCapture(f"{path}: unrecognized magic 0x{magic_le:08X}")
        order, subsec_div = _PCAP_MAGICS[magic_le]
        link_type = struct.unpack(order + "I", header[20:24])[0]

        while True:
            rec = fh.read(16)
            if not rec:
                return
            if len(rec) < 16:
                raise MalformedCapture(f"{path}: truncated record header")
            ts_sec, ts_frac, incl_len, orig_len = struct.unpack(order + "IIII", rec)
            data = fh.read(incl_len)
            if len(data) < incl_len:
                raise MalformedCapture(f"{path}: truncated record body")
            ts_us = ts_sec * 1_000_000 + ts_frac // subsec_div
            yield CapturedFrame(ts_us, link_type, data, orig_len)


def decode_packet(
    raw_frame: bytes,
    link_type: int,
    timestamp: int = 0,
    wire_length: int | None = None,
) -> PacketRecord | None:
    """Decode one frame; returns None (skip) for anything that is not IP+TCP/UDP.

    Total by design: ARP, ICMP, unknown ethertypes, non-first IP fragments
    and malformed headers all skip rather than raise. 802.1Q tags are
    unwrapped transparently.
    """
    if wire_length is None:
        wire_length = len(raw_frame)

    if link_type == LINKTYPE_ETHERNET:
        if len(raw_frame) < 14:
            return None
        ethertype = struct.unpack("!H", raw_frame[12:14])[0]
        offset = 14
        tags = 0
        while ethertype in ETHERTYPE_VLAN and tags < 4:
            if len(raw_frame) < offset + 4:
                return None
            ethertype = struct.unpack("!H", raw_frame[offset + 2 : offset + 4])[0]
            offset += 4
            tags += 1
        if ethertype == ETHERTYPE_IPV4:
            return _decode_ipv4(raw_frame[offset:], timestamp, wire_length)
        if ethertype == ETHERTYPE_IPV6:
            return _decode_ipv6(raw_frame[offset:], timestamp, wire_length)
        return None

    if link_type == LINKTYPE_RAW_IP:
        if not raw_frame:
            return None
        version = raw_frame[0] >> 4
        if version == 4:
            return _decode_ipv4(raw_frame, timestamp, wire_length)
        if version == 6:
            return _decode_ipv6(raw_frame, timestamp, wire_length)
        return None

    return None


def _decode_ipv4(data: bytes, timestamp: int, wire_length: int) -> PacketRecord | None:
    if len(data) < 20 or data[0] >> 4 != 4:
        return None
    header_len = (data[0] & 0x0F) * 4
    if header_len < 20 or len(data) < header_len:
        return None
    total_len = struct.unpack("!H", data[2:4])[0]
    frag_word = struct.unpack("!H", data[6:8])[0]
    if frag_word & 0x1FFF:  # non-first fragments carry no transport header
        return None
    proto = data[9]
    src = str(ipaddress.IPv4Address(data[12:16]))
    dst = str(ipaddress.IPv4Address(data[16:20]))
    end = min(len(data), total_len) if total_len >= header_len else len(data)
    return _decode_transport(data[header_len:end], proto, src, dst, timestamp, wire_length)


def _decode_ipv6(data: bytes, timestamp: int, wire_length: int) -> PacketRecord | None:
    if len(data) < 40 or data[0] >> 4 != 6:
        return None
    payload_len = struct.unpack("!H", data[4:6])[0]
    next_header = data[6]
    src = str(ipaddress.IPv6Address(data[8:24]))
    dst = str(ipaddress.IPv6Address(data[24:40]))
    end = min(len(data), 40 + payload_len) if payload_len else len(data)
    offset = 40

    # walk the common extension-header chain; anything exotic is a skip
    while next_header not in (IPPROTO_TCP, IPPROTO_UDP):
        if next_header in (0, 43, 60):  # hop-by-hop, routing, destination opts
            if end < offset + 8:
                return None
            ext_len = (data[offset + 1] + 1) * 8
            next_header = data[offset]
            offset += ext_len
        elif next_header == 44:  # fragment header
            if end < offset + 8:
                return None
            frag_off = struct.unpack("!H", data[offset + 2 : offset + 4])[0] >> 3
            if frag_off:
                return None
            next_header = data[offset]
            offset += 8
        else:
            return None
        if offset > end:
            return None
    return _decode_transport(data[offset:end], next_header, src, dst, timestamp, wire_length)


def _decode_transport(
    data: bytes, proto: int, src: str, dst: str, timestamp: int, wire_length: int
) -> PacketRecord | None:
    if proto == IPPROTO_UDP:
        if len(data) < 8:
            return None
        src_port, dst_port, udp_len = struct.unpack("!HHH", data[:6])
        end = min(len(data), udp_len) if udp_len >= 8 else len(data)
        return PacketRecord(
            timestamp=timestamp,
            src_ip=src,
            dst_ip=dst,
            src_port=src_port,
            dst_port=dst_port,
            protocol=Transport.UDP,
            total_length=wire_length,
            transport_header_length=8,
            payload=data[8:end],
        )
    if proto == IPPROTO_TCP:
        if len(data) < 20:
            return None
        src_port, dst_port = struct.unpack("!HH", data[:4])
        header_len = (data[12] >> 4) * 4
        if header_len < 20 or len(data) < header_len:
            return None
        flags = TcpFlags(data[13])
        window = struct.unpack("!H", data[14:16])[0]
        return PacketRecord(
            timestamp=timestamp,
            src_ip=src,
            dst_ip=dst,
            src_port=src_port,
            dst_port=dst_port,
            protocol=Transport.TCP,
            total_length=wire_length,
            transport_header_length=header_len,
            payload=data[header_len:],
            tcp_flags=flags,
            tcp_window=window,
        )
    return None


def read_packets(path: str | Path) -> Iterator[PacketRecord]:
    """Decode every TCP/UDP packet in a capture, skipping everything else."""
    for frame in open_capture(path):
        record = decode_packet(frame.data, frame.link_type, frame.timestamp, frame.wire_length)
        if record is not None:
            yield record


def read_packets_sorted(path: str | Path) -> list[PacketRecord]:
    """All decodable packets, stably sorted by timestamp for flow assembly."""
    return sorted(read_packets(path), key=lambda p: p.timestamp)
