"""Per-flow statistics in the frozen 77-feature layout.

The column order, names and semantics are the contract documented in
docs/feature-schema.md; they follow the CSV layout of the widely used
CICFlowMeter export (including its historical duplicate of the forward
header-length column) so datasets interoperate with existing tooling.

Unit conventions: durations and IATs are microseconds, rates are per
second, "packet length" means transport payload bytes, "header length"
means transport header bytes, and Average Packet Size uses wire bytes.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .flows import FlowPacket, FlowState
from .packets import PROTO_NUMBER, TcpFlags

SCHEMA_NAME = "camsieve-flow-stats"
SCHEMA_VERSION = "1"

DEFAULT_ACTIVITY_THRESHOLD_US = 5_000_000
SUBFLOW_GAP_US = 1_000_000
BULK_GAP_US = 1_000_000
BULK_MIN_PACKETS = 4

FEATURE_NAMES: tuple[str, ...] = (
    "Flow Duration",
    "Total Fwd Packets",
    "Total Backward Packets",
    "Total Length of Fwd Packets",
    "Total Length of Bwd Packets",
    "Fwd Packet Length Max",
    "Fwd Packet Length Min",
    "Fwd Packet Length Mean",
    "Fwd Packet Length Std",
    "Bwd Packet Length Max",
    "Bwd Packet Length Min",
    "Bwd Packet Length Mean",
    "Bwd Packet Length Std",
    "Flow Bytes/s",
    "Flow Packets/s",
    "Flow IAT Mean",
    "Flow IAT Std",
    "Flow IAT Max",
    "Flow IAT Min",
    "Fwd IAT Total",
    "Fwd IAT Mean",
    "Fwd IAT Std",
    "Fwd IAT Max",
    "Fwd IAT Min",
    "Bwd IAT Total",
    "Bwd IAT Mean",
    "Bwd IAT Std",
    "Bwd IAT Max",
    "Bwd IAT Min",
    "Fwd PSH Flags",
    "Bwd PSH Flags",
    "Fwd URG Flags",
    "Bwd URG Flags",
    "Fwd Header Length",
    "Bwd Header Length",
    "Fwd Packets/s",
    "Bwd Packets/s",
    "Min Packet Length",
    "Max Packet Length",
    "Packet Length Mean",
    "Packet Length Std",
    "Packet Length Variance",
    "FIN Flag Count",
    "SYN Flag Count",
    "RST Flag Count",
    "PSH Flag Count",
    "ACK Flag Count",
    "URG Flag Count",
    "CWE Flag Count",
    "ECE Flag Count",
    "Down/Up Ratio",
    "Average Packet Size",
    "Avg Fwd Segment Size",
    "Avg Bwd Segment Size",
    "Fwd Header Length.1",
    "Fwd Avg Bytes/Bulk",
    "Fwd Avg Packets/Bulk",
    "Fwd Avg Bulk Rate",
    "Bwd Avg Bytes/Bulk",
    "Bwd Avg Packets/Bulk",
    "Bwd Avg Bulk Rate",
    "Subflow Fwd Packets",
    "Subflow Fwd Bytes",
    "Subflow Bwd Packets",
    "Subflow Bwd Bytes",
    "Init_Win_bytes_forward",
    "Init_Win_bytes_backward",
    "act_data_pkt_fwd",
    "min_seg_size_forward",
    "Active Mean",
    "Active Std",
    "Active Max",
    "Active Min",
    "Idle Mean",
    "Idle Std",
    "Idle Max",
    "Idle Min",
)

IDENTITY_COLUMNS: tuple[str, ...] = (
    "Flow ID",
    "Source IP",
    "Destination IP",
    "Source Port",
    "Destination Port",
    "Protocol",
)
LABEL_COLUMN = "Label"
ALL_COLUMNS: tuple[str, ...] = IDENTITY_COLUMNS + FEATURE_NAMES + (LABEL_COLUMN,)

assert len(FEATURE_NAMES) == 77
assert len(ALL_COLUMNS) == 84


def schema_hash(names: Sequence[str] = FEATURE_NAMES) -> str:
    """Stable fingerprint of a feature-name list, used to guard predictions."""
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()


class StatSummary(NamedTuple):
    minimum: float
    maximum: float
    mean: float
    std: float
    variance: float
    total: float


def stat_summary(values: Sequence[float]) -> StatSummary:
    """Min/max/mean/std/variance/total; zeros for empty input, sample (n-1) std."""
    n = len(values)
    if n == 0:
        return StatSummary(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    total = float(sum(values))
    mean = total / n
    if n < 2:
        variance = 0.0
    else:
        variance = sum((v - mean) ** 2 for v in values) / (n - 1)
    return StatSummary(float(min(values)), float(max(values)), mean, math.sqrt(variance), variance, total)


@dataclass(frozen=True)
class ActivitySegments:
    """Maximal packet runs with internal gaps <= threshold, and the gaps above it."""

    active: tuple[tuple[int, int], ...]
    idle: tuple[int, ...]
    threshold: int


def activity_segments(timestamps: Sequence[int], threshold: int) -> ActivitySegments:
    if not timestamps:
        return ActivitySegments((), (), threshold)
    active: list[tuple[int, int]] = []
    idle: list[int] = []
    seg_start = prev = timestamps[0]
    for ts in timestamps[1:]:
        gap = ts - prev
        if gap > threshold:
            active.append((seg_start, prev))
            idle.append(gap)
            seg_start = ts
        prev = ts
    active.append((seg_start, prev))
    return ActivitySegments(tuple(active), tuple(idle), threshold)


class FlowIdentity(NamedTuple):
    flow_id: str
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    identity: FlowIdentity
    label: str = ""

    def __post_init__(self):
        if len(self.values) != len(FEATURE_NAMES):
            raise ValueError(f"expected {len(FEATURE_NAMES)} values, got {len(self.values)}")


def _diffs(timestamps: Sequence[int]) -> list[int]:
    return [b - a for a, b in zip(timestamps, timestamps[1:])]


def _flag_count(packets: Sequence[FlowPacket], flag: TcpFlags) -> int:
    return sum(1 for p in packets if flag in p.tcp_flags)


def _bulk_stats(packets: Sequence[FlowPacket]) -> tuple[float, float, float]:
    """Average bytes per bulk, packets per bulk and bulk byte rate (per second).

    A bulk is a run of >= BULK_MIN_PACKETS consecutive data packets (payload
    >= 1 byte) in one direction with inter-arrivals <= BULK_GAP_US.
    """
    data = [p for p in packets if p.payload_length >= 1]
    runs: list[list[FlowPacket]] = []
    for pkt in data:
        if runs and pkt.timestamp - runs[-1][-1].timestamp <= BULK_GAP_US:
            runs[-1].append(pkt)
        else:
            runs.append([pkt])
    bulks = [run for run in runs if len(run) >= BULK_MIN_PACKETS]
    if not bulks:
        return 0.0, 0.0, 0.0
    total_bytes = sum(p.payload_length for run in bulks for p in run)
    total_pkts = sum(len(run) for run in bulks)
    total_dur_us = sum(run[-1].timestamp - run[0].timestamp for run in bulks)
    rate = total_bytes / (total_dur_us / 1e6) if total_dur_us > 0 else 0.0
    return total_bytes / len(bulks), total_pkts / len(bulks), rate


def compute_features(
    flow: FlowState, activity_threshold_us: int = DEFAULT_ACTIVITY_THRESHOLD_US
) -> FeatureVector:
    """All 77 statistics for one completed flow; degenerate flows yield zeros,
    never NaN or infinity (rates with zero duration are pinned to 0)."""
    fwd = flow.fwd_packets
    bwd = flow.bwd_packets
    merged = sorted(fwd + bwd, key=lambda p: p.timestamp)
    if not merged:
        raise ValueError("flow has no packets")

    all_ts = [p.timestamp for p in merged]
    duration = all_ts[-1] - all_ts[0]
    dur_s = duration / 1e6

    fwd_pl = [p.payload_length for p in fwd]
    bwd_pl = [p.payload_length for p in bwd]
    fwd_len = stat_summary(fwd_pl)
    bwd_len = stat_summary(bwd_pl)
    all_len = stat_summary(fwd_pl + bwd_pl)

    flow_iat = stat_summary(_diffs(all_ts))
    fwd_iat = stat_summary(_diffs([p.timestamp for p in fwd]))
    bwd_iat = stat_summary(_diffs([p.timestamp for p in bwd]))

    fwd_hdr = sum(p.transport_header_length for p in fwd)
    bwd_hdr = sum(p.transport_header_length for p in bwd)

    segments = activity_segments(all_ts, activity_threshold_us)
    active = stat_summary([end - start for start, end in segments.active])
    idle = stat_summary(segments.idle)

    n_subflows = 1 + sum(1 for gap in _diffs(all_ts) if gap > SUBFLOW_GAP_US)
    fwd_bulk_bytes, fwd_bulk_pkts, fwd_bulk_rate = _bulk_stats(fwd)
    bwd_bulk_bytes, bwd_bulk_pkts, bwd_bulk_rate = _bulk_stats(bwd)

    init_win_fwd = fwd[0].tcp_window if fwd and fwd[0].tcp_window is not None else 0
    init_win_bwd = bwd[0].tcp_window if bwd and bwd[0].tcp_window is not None else 0

    v: dict[str, float] = {}
    v["Flow Duration"] = float(duration)
    v["Total Fwd Packets"] = float(len(fwd))
    v["Total Backward Packets"] = float(len(bwd))
    v["Total Length of Fwd Packets"] = fwd_len.total
    v["Total Length of Bwd Packets"] = bwd_len.total
    v["Fwd Packet Length Max"] = fwd_len.maximum
    v["Fwd Packet Length Min"] = fwd_len.minimum
    v["Fwd Packet Length Mean"] = fwd_len.mean
    v["Fwd Packet Length Std"] = fwd_len.std
    v["Bwd Packet Length Max"] = bwd_len.maximum
    v["Bwd Packet Length Min"] = bwd_len.minimum
    v["Bwd Packet Length Mean"] = bwd_len.mean
    v["Bwd Packet Length Std"] = bwd_len.std
    v["Flow Bytes/s"] = all_len.total / dur_s if duration > 0 else 0.0
    v["Flow Packets/s"] = len(merged) / dur_s if duration > 0 else 0.0
    v["Flow IAT Mean"] = flow_iat.mean
    v["Flow IAT Std"] = flow_iat.std
    v["Flow IAT Max"] = flow_iat.maximum
    v["Flow IAT Min"] = flow_iat.minimum
    v["Fwd IAT Total"] = fwd_iat.total
    v["Fwd IAT Mean"] = fwd_iat.mean
    v["Fwd IAT Std"] = fwd_iat.std
    v["Fwd IAT Max"] = fwd_iat.maximum
    v["Fwd IAT Min"] = fwd_iat.minimum
    v["Bwd IAT Total"] = bwd_iat.total
    v["Bwd IAT Mean"] = bwd_iat.mean
    v["Bwd IAT Std"] = bwd_iat.std
    v["Bwd IAT Max"] = bwd_iat.maximum
    v["Bwd IAT Min"] = bwd_iat.minimum
    v["Fwd PSH Flags"] = float(_flag_count(fwd, TcpFlags.PSH))
    v["Bwd PSH Flags"] = float(_flag_count(bwd, TcpFlags.PSH))
    v["Fwd URG Flags"] = float(_flag_count(fwd, TcpFlags.URG))
    v["Bwd URG Flags"] = float(_flag_count(bwd, TcpFlags.URG))
    v["Fwd Header Length"] = float(fwd_hdr)
    v["Bwd Header Length"] = float(bwd_hdr)
    v["Fwd Packets/s"] = len(fwd) / dur_s if duration > 0 else 0.0
    v["Bwd Packets/s"] = len(bwd) / dur_s if duration > 0 else 0.0
    v["Min Packet Length"] = all_len.minimum
    v["Max Packet Length"] = all_len.maximum
    v["Packet Length Mean"] = all_len.mean
    v["Packet Length Std"] = all_len.std
    v["Packet Length Variance"] = all_len.variance
    v["FIN Flag Count"] = float(_flag_count(merged, TcpFlags.FIN))
    v["SYN Flag Count"] = float(_flag_count(merged, TcpFlags.SYN))
    v["RST Flag Count"] = float(_flag_count(merged, TcpFlags.RST))
    v["PSH Flag Count"] = float(_flag_count(merged, TcpFlags.PSH))
    v["ACK Flag Count"] = float(_flag_count(merged, TcpFlags.ACK))
    v["URG Flag Count"] = float(_flag_count(merged, TcpFlags.URG))
    v["CWE Flag Count"] = float(_flag_count(merged, TcpFlags.CWE))
    v["ECE Flag Count"] = float(_flag_count(merged, TcpFlags.ECE))
    v["Down/Up Ratio"] = float(len(bwd) // len(fwd)) if fwd else 0.0
    v["Average Packet Size"] = stat_summary([p.total_length for p in merged]).mean
    v["Avg Fwd Segment Size"] = fwd_len.mean
    v["Avg Bwd Segment Size"] = bwd_len.mean
    v["Fwd Header Length.1"] = float(fwd_hdr)
    v["Fwd Avg Bytes/Bulk"] = fwd_bulk_bytes
    v["Fwd Avg Packets/Bulk"] = fwd_bulk_pkts
    v["Fwd Avg Bulk Rate"] = fwd_bulk_rate
    v["Bwd Avg Bytes/Bulk"] = bwd_bulk_bytes
    v["Bwd Avg Packets/Bulk"] = bwd_bulk_pkts
    v["Bwd Avg Bulk Rate"] = bwd_bulk_rate
    v["Subflow Fwd Packets"] = len(fwd) / n_subflows
    v["Subflow Fwd Bytes"] = fwd_len.total / n_subflows
    v["Subflow Bwd Packets"] = len(bwd) / n_subflows
    v["Subflow Bwd Bytes"] = bwd_len.total / n_subflows
    v["Init_Win_bytes_forward"] = float(init_win_fwd)
    v["Init_Win_bytes_backward"] = float(init_win_bwd)
    v["act_data_pkt_fwd"] = float(sum(1 for p in fwd if p.payload_length >= 1))
    v["min_seg_size_forward"] = float(min(p.transport_header_length for p in fwd)) if fwd else 0.0
    v["Active Mean"] = active.mean
    v["Active Std"] = active.std
    v["Active Max"] = active.maximum
    v["Active Min"] = active.minimum
    v["Idle Mean"] = idle.mean
    v["Idle Std"] = idle.std
    v["Idle Max"] = idle.maximum
    v["Idle Min"] = idle.minimum

    identity = FlowIdentity(
        flow_id=flow.flow_id,
        src_ip=flow.initiator[0],
        dst_ip=flow.responder[0],
        src_port=flow.initiator[1],
        dst_port=flow.responder[1],
        protocol=PROTO_NUMBER[flow.key.protocol],
    )
    return FeatureVector(tuple(v[name] for name in FEATURE_NAMES), identity)
