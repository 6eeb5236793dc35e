"""Payload heuristics for real-time media protocols.

These classifiers produce diagnostic hints for reports only; nothing here
feeds the flow feature vector or the model. RTP detection on arbitrary
ports is inherently weak evidence, since the payload types above 95 are
dynamically assigned and ordinary UDP data can look like a valid header.
"""
from __future__ import annotations

import enum
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .errors import InsufficientRtp
from .flows import FlowState
from .packets import Transport

RTCP_STANDARD_TYPES = frozenset({200, 201, 202, 203, 204})
RTCP_FEEDBACK_TYPES = frozenset({205, 206})  # transport/payload-specific feedback

QUIC_PORT = 443
IPSEC_NAT_T_PORT = 4500
ZOOM_PORT = 8801
MEET_PORT = 19305


@dataclass(frozen=True)
class RtpHeader:
    """Fixed 12-byte RTP header.

     0                   1                   2                   3
     0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |V=2|P|X|  CC   |M|     PT      |       sequence number         |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |                           timestamp                           |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |             synchronization source (SSRC) identifier         |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    """

    version: int
    padding: bool
    extension: bool
    csrc_count: int
    marker: bool
    payload_type: int
    sequence: int
    timestamp: int
    ssrc: int


@dataclass(frozen=True)
class RtcpHeader:
    """First 32 bits of an RTCP packet: V|P|RC/FMT|PT|length."""

    version: int
    padding: bool
    report_info: int  # raw 5-bit field; meaning depends on the packet type
    packet_type: int
    length_words: int


class MuxClass(enum.Enum):
    RTP = "RTP"
    RTCP = "RTCP"
    NEITHER = "NEITHER"


class HintKind(enum.Enum):
    RTP = "RTP"
    RTCP = "RTCP"
    QUIC_LONG = "QUIC_LONG"
    QUIC_SHORT = "QUIC_SHORT"
    IPSEC_NAT_T = "IPSEC_NAT_T"
    UNKNOWN = "UNKNOWN"


class MediaType(enum.Enum):
    AUDIO = "AUDIO"
    VIDEO = "VIDEO"
    UNKNOWN = "UNKNOWN"


class Confidence(enum.Enum):
    STRONG = "STRONG"
    WEAK = "WEAK"


class AppContext(enum.Enum):
    SKYPE = "SKYPE"
    TEAMS = "TEAMS"
    MEET = "MEET"
    GENERIC = "GENERIC"


@dataclass(frozen=True)
class ProtocolHint:
    kind: HintKind
    media: MediaType = MediaType.UNKNOWN
    codec_note: str = ""
    confidence: Confidence = Confidence.WEAK


def parse_rtp_header(payload: bytes) -> RtpHeader | None:
    """Decode the fixed RTP header; None for short payloads or version != 2."""
    if len(payload) < 12:
        return None
    b0, b1 = payload[0], payload[1]
    if b0 >> 6 != 2:
        return None
    sequence, timestamp, ssrc = struct.unpack("!HII", payload[2:12])
    return RtpHeader(
        version=2,
        padding=bool(b0 & 0x20),
        extension=bool(b0 & 0x10),
        csrc_count=b0 & 0x0F,
        marker=bool(b1 & 0x80),
        payload_type=b1 & 0x7F,
        sequence=sequence,
        timestamp=timestamp,
        ssrc=ssrc,
    )


def parse_rtcp_header(payload: bytes) -> RtcpHeader | None:
    """Decode the common RTCP prefix; accepts types 200-204 plus 205/206 feedback."""
    if len(payload) < 4:
        return None
    b0, pt = payload[0], payload[1]
    if b0 >> 6 != 2 or pt not in RTCP_STANDARD_TYPES | RTCP_FEEDBACK_TYPES:
        return None
    return RtcpHeader(
        version=2,
        padding=bool(b0 & 0x20),
        report_info=b0 & 0x1F,
        packet_type=pt,
        length_words=struct.unpack("!H", payload[2:4])[0],
    )


def demux_rtp_rtcp(payload: bytes) -> MuxClass:
    """Separate multiplexed RTP from RTCP on a shared port.

    Version bits must equal 2. Bit 4 of the first byte is 1 for RTP; when it
    is 0 the second byte must additionally carry a known RTCP packet type,
    which guards against mistaking ordinary data for RTCP.
    """
    if len(payload) < 2:
        return MuxClass.NEITHER
    b0 = payload[0]
    if b0 >> 6 != 2:
        return MuxClass.NEITHER
    if b0 & 0x10:
        return MuxClass.RTP
    if payload[1] in RTCP_STANDARD_TYPES | RTCP_FEEDBACK_TYPES:
        return MuxClass.RTCP
    return MuxClass.NEITHER


# per-application payload-type tables; values outside them fall through to
# the dynamic-range rule (96-127 can carry either audio or video)
_MEDIA_TABLES: dict[AppContext, dict[int, tuple[MediaType, str]]] = {
    AppContext.SKYPE: {
        9: (MediaType.AUDIO, "G.722"),
        122: (MediaType.VIDEO, "Skype video"),
        123: (MediaType.VIDEO, "Skype video"),
    },
    AppContext.TEAMS: {
        104: (MediaType.AUDIO, "Silk"),
        118: (MediaType.AUDIO, "Comfort Noise"),
        122: (MediaType.VIDEO, "H.264"),
        123: (MediaType.VIDEO, "H.264 FEC"),
    },
    AppContext.MEET: {
        111: (MediaType.AUDIO, "Hangouts audio"),
        **{pt: (MediaType.VIDEO, "dynamic video") for pt in range(96, 101)},
    },
    AppContext.GENERIC: {},
}


def media_hint(header: RtpHeader, app: AppContext = AppContext.GENERIC) -> tuple[MediaType, str]:
    """Map an RTP payload type to a media kind under an application context."""
    table = _MEDIA_TABLES.get(app, {})
    if header.payload_type in table:
        return table[header.payload_type]
    if 96 <= header.payload_type <= 127:
        return (MediaType.UNKNOWN, "dynamic")
    return (MediaType.UNKNOWN, "")


def classify_udp_payload(payload: bytes, src_port: int, dst_port: int) -> ProtocolHint:
    """Best-effort hint for one UDP payload; deterministic and total.

    Priority: QUIC on port 443 (first payload bit selects long vs short
    header), IPSec NAT traversal on port 4500, then the RTP/RTCP demux on
    any port. Port-based hints never become model features.
    """
    ports = (src_port, dst_port)
    if QUIC_PORT in ports and payload:
        kind = HintKind.QUIC_LONG if payload[0] & 0x80 else HintKind.QUIC_SHORT
        return ProtocolHint(kind, confidence=Confidence.STRONG)
    if IPSEC_NAT_T_PORT in ports:
        return ProtocolHint(HintKind.IPSEC_NAT_T, codec_note="UDP-encapsulated ESP")
    mux = demux_rtp_rtcp(payload)
    if mux is MuxClass.RTP:
        header = parse_rtp_header(payload)
        if header is not None:
            media, note = media_hint(header)
            return ProtocolHint(HintKind.RTP, media=media, codec_note=note)
        return ProtocolHint(HintKind.RTP)
    if mux is MuxClass.RTCP:
        return ProtocolHint(HintKind.RTCP)
    note = ""
    if ZOOM_PORT in ports:
        note = "Zoom-associated port"
    elif MEET_PORT in ports:
        note = "Meet-associated port"
    return ProtocolHint(HintKind.UNKNOWN, codec_note=note)


def rtp_stream_continuity(flow_payloads: Sequence[bytes]) -> float:
    """Fraction of consecutive RTP sequence numbers incrementing by exactly 1.

    Headers are filtered to the most frequent SSRC (lowest wins a tie);
    raises InsufficientRtp when fewer than two such headers parse.
    """
    headers = [h for h in (parse_rtp_header(p) for p in flow_payloads) if h is not None]
    if len(headers) >= 2:
        ssrc_counts = Counter(h.ssrc for h in headers)
        top = max(ssrc_counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
        headers = [h for h in headers if h.ssrc == top]
    if len(headers) < 2:
        raise InsufficientRtp(f"need >= 2 valid RTP headers with one SSRC, got {len(headers)}")
    pairs = list(zip(headers, headers[1:]))
    hits = sum(1 for a, b in pairs if (b.sequence - a.sequence) % 65536 == 1)
    return hits / len(pairs)


class Side(enum.Enum):
    SRC = "SRC"
    DST = "DST"
    BOTH = "BOTH"


class PortShare(NamedTuple):
    count: int
    proportion: float


def port_profile(flows: Sequence[FlowState], side: Side = Side.DST) -> dict[int, PortShare]:
    """Flow counts per transport port; proportions sum to 1 when non-empty."""
    counts: Counter[int] = Counter()
    for flow in flows:
        if side in (Side.SRC, Side.BOTH):
            counts[flow.initiator[1]] += 1
        if side in (Side.DST, Side.BOTH):
            counts[flow.responder[1]] += 1
    total = sum(counts.values())
    return {port: PortShare(c, c / total) for port, c in sorted(counts.items())}


@dataclass
class FlowInspection:
    """Aggregate payload hints for one flow."""

    flow_id: str
    protocol: str
    src_port: int
    dst_port: int
    packets: int
    kind_counts: dict[str, int]
    dominant: ProtocolHint
    payload_types: dict[int, int] = field(default_factory=dict)
    continuity: float | None = None


_KIND_PRIORITY = [
    HintKind.RTP,
    HintKind.RTCP,
    HintKind.QUIC_LONG,
    HintKind.QUIC_SHORT,
    HintKind.IPSEC_NAT_T,
    HintKind.UNKNOWN,
]


def inspect_flow(flow: FlowState, payloads: Sequence[bytes], app: AppContext) -> FlowInspection:
    hints = []
    if flow.protocol is Transport.UDP:
        hints = [
            classify_udp_payload(p, flow.initiator[1], flow.responder[1]) for p in payloads
        ]
    kind_counts: Counter[HintKind] = Counter(h.kind for h in hints)
    if kind_counts:
        top = max(kind_counts.items(), key=lambda kv: (kv[1], -_KIND_PRIORITY.index(kv[0])))[0]
        dominant = next(h for h in hints if h.kind is top)
    else:
        dominant = ProtocolHint(HintKind.UNKNOWN)

    pt_counts: Counter[int] = Counter()
    if dominant.kind is HintKind.RTP:
        headers = [h for h in (parse_rtp_header(p) for p in payloads) if h is not None]
        pt_counts.update(h.payload_type for h in headers)
        if headers:
            media, note = media_hint(headers[0], app)
            dominant = ProtocolHint(HintKind.RTP, media=media, codec_note=note)
    continuity = None
    try:
        continuity = rtp_stream_continuity(payloads)
    except InsufficientRtp:
        pass

    return FlowInspection(
        flow_id=flow.flow_id,
        protocol=flow.protocol.value,
        src_port=flow.initiator[1],
        dst_port=flow.responder[1],
        packets=flow.packet_count,
        kind_counts={k.value: c for k, c in sorted(kind_counts.items(), key=lambda kv: kv[0].value)},
        dominant=dominant,
        payload_types=dict(sorted(pt_counts.items())),
        continuity=continuity,
    )


def build_report(
    flows: Sequence[FlowState],
    payloads_per_flow: Sequence[Sequence[bytes]],
    app: AppContext = AppContext.GENERIC,
) -> dict:
    """Inspection report: per-flow hints, port profiles and payload-type totals."""
    inspections = [
        inspect_flow(flow, payloads, app) for flow, payloads in zip(flows, payloads_per_flow)
    ]
    pt_total: Counter[int] = Counter()
    for ins in inspections:
        pt_total.update(ins.payload_types)
    return {
        "app_context": app.value,
        "flows": [
            {
                "flow_id": ins.flow_id,
                "protocol": ins.protocol,
                "src_port": ins.src_port,
                "dst_port": ins.dst_port,
                "packets": ins.packets,
                "hint": ins.dominant.kind.value,
                "media": ins.dominant.media.value,
                "codec_note": ins.dominant.codec_note,
                "confidence": ins.dominant.confidence.value,
                "kind_counts": ins.kind_counts,
                "rtp_payload_types": {str(k): v for k, v in ins.payload_types.items()},
                "rtp_continuity": ins.continuity,
            }
            for ins in inspections
        ],
        "port_profile_src": {str(p): s.proportion for p, s in port_profile(flows, Side.SRC).items()},
        "port_profile_dst": {str(p): s.proportion for p, s in port_profile(flows, Side.DST).items()},
        "rtp_payload_type_totals": {str(k): v for k, v in sorted(pt_total.items())},
    }


def render_report(report: dict) -> str:
    lines = [f"protocol inspection (app context: {report['app_context']})"]
    lines.append(f"flows: {len(report['flows'])}")
    for entry in report["flows"]:
        extra = ""
        if entry["media"] != MediaType.UNKNOWN.value:
            extra += f" media={entry['media']}"
        if entry["codec_note"]:
            extra += f" note={entry['codec_note']!r}"
        if entry["rtp_continuity"] is not None:
            extra += f" continuity={entry['rtp_continuity']:.3f}"
        lines.append(
            f"  {entry['flow_id']} {entry['protocol']} "
            f"{entry['src_port']}->{entry['dst_port']} pkts={entry['packets']} "
            f"hint={entry['hint']}({entry['confidence']}){extra}"
        )
    for title, key in (("src port profile", "port_profile_src"), ("dst port profile", "port_profile_dst")):
        lines.append(f"{title}:")
        for port, share in report[key].items():
            lines.append(f"  {port}: {share:.4f}")
    if report["rtp_payload_type_totals"]:
        lines.append("rtp payload types:")
        for pt, count in report["rtp_payload_type_totals"].items():
            lines.append(f"  {pt}: {count}")
    return "\n".join(lines) + "\n"
