import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camsieve.errors import InsufficientRtp
from camsieve.flows import FlowPacket
from camsieve.packets import TcpFlags, Transport
from camsieve.protocols import (
    AppContext,
    Confidence,
    HintKind,
    MediaType,
    MuxClass,
    Side,
    classify_udp_payload,
    demux_rtp_rtcp,
    media_hint,
    parse_rtcp_header,
    parse_rtp_header,
    port_profile,
    rtp_stream_continuity,
)

from conftest import make_flow


def rtp_bytes(version=2, padding=0, extension=0, cc=0, marker=0, pt=96,
              seq=0, ts=0, ssrc=0, tail=b""):
    b0 = (version << 6) | (padding << 5) | (extension << 4) | cc
    b1 = (marker << 7) | pt
    return struct.pack("!BBHII", b0, b1, seq, ts, ssrc) + tail


class TestParseRtpHeader:
    def test_payload_type_122_example(self):
        header = parse_rtp_header(bytes([0x80, 0x7A, 0x00, 0x01]) + b"\x00" * 8)
        assert header is not None
        assert header.version == 2
        assert (header.padding, header.extension, header.csrc_count) == (False, False, 0)
        assert header.marker is False
        assert header.payload_type == 122
        assert header.sequence == 1

    def test_version_three_invalid(self):
        assert parse_rtp_header(bytes([0xC0]) + b"\x00" * 11) is None

    def test_eleven_bytes_invalid(self):
        assert parse_rtp_header(b"\x80" + b"\x00" * 10) is None

    @pytest.mark.parametrize("version", [0, 1, 3])
    def test_only_version_two_accepted(self, version):
        assert parse_rtp_header(rtp_bytes(version=version)) is None

    def test_all_fields_decoded(self):
        raw = rtp_bytes(padding=1, extension=1, cc=3, marker=1, pt=111,
                        seq=0xBEEF, ts=0x12345678, ssrc=0xCAFEBABE)
        h = parse_rtp_header(raw)
        assert (h.padding, h.extension, h.csrc_count, h.marker) == (True, True, 3, True)
        assert (h.payload_type, h.sequence, h.timestamp, h.ssrc) == (
            111, 0xBEEF, 0x12345678, 0xCAFEBABE)


class TestParseRtcpHeader:
    @pytest.mark.parametrize("pt", [200, 201, 202, 203, 204, 205, 206])
    def test_known_types(self, pt):
        h = parse_rtcp_header(bytes([0x80, pt, 0x00, 0x06]))
        assert h is not None and h.packet_type == pt and h.length_words == 6

    def test_unknown_type_rejected(self):
        assert parse_rtcp_header(bytes([0x80, 150, 0x00, 0x06])) is None

    def test_report_info_raw_five_bits(self):
        h = parse_rtcp_header(bytes([0x81, 200, 0x00, 0x01]))
        assert h.report_info == 1


class TestDemux:
    def test_bit_four_set_is_rtp(self):
        assert demux_rtp_rtcp(bytes([0x90, 0x60])) is MuxClass.RTP

    def test_rtcp_type_byte_confirms(self):
        assert demux_rtp_rtcp(bytes([0x80, 0xC8])) is MuxClass.RTCP  # type 200

    def test_version_one_is_neither(self):
        assert demux_rtp_rtcp(bytes([0x40, 0xC8])) is MuxClass.NEITHER

    def test_bit_four_clear_without_rtcp_type_is_neither(self):
        assert demux_rtp_rtcp(bytes([0x80, 0x60])) is MuxClass.NEITHER

    def test_short_payload(self):
        assert demux_rtp_rtcp(b"\x90") is MuxClass.NEITHER


class TestMediaHint:
    @pytest.mark.parametrize(
        "pt,app,media,note",
        [
            (9, AppContext.SKYPE, MediaType.AUDIO, "G.722"),
            (122, AppContext.SKYPE, MediaType.VIDEO, "Skype video"),
            (123, AppContext.SKYPE, MediaType.VIDEO, "Skype video"),
            (104, AppContext.TEAMS, MediaType.AUDIO, "Silk"),
            (118, AppContext.TEAMS, MediaType.AUDIO, "Comfort Noise"),
            (122, AppContext.TEAMS, MediaType.VIDEO, "H.264"),
            (123, AppContext.TEAMS, MediaType.VIDEO, "H.264 FEC"),
            (111, AppContext.MEET, MediaType.AUDIO, "Hangouts audio"),
            (96, AppContext.MEET, MediaType.VIDEO, "dynamic video"),
            (100, AppContext.MEET, MediaType.VIDEO, "dynamic video"),
            (97, AppContext.GENERIC, MediaType.UNKNOWN, "dynamic"),
            (0, AppContext.GENERIC, MediaType.UNKNOWN, ""),
        ],
    )
    def test_codec_tables(self, pt, app, media, note):
        header = parse_rtp_header(rtp_bytes(pt=pt))
        assert media_hint(header, app) == (media, note)


class TestClassifyUdpPayload:
    def test_quic_long_header(self):
        hint = classify_udp_payload(bytes([0xC3]) + b"\x00" * 20, 40000, 443)
        assert hint.kind is HintKind.QUIC_LONG
        assert hint.confidence is Confidence.STRONG

    def test_quic_short_header(self):
        hint = classify_udp_payload(bytes([0x43]) + b"\x00" * 20, 443, 40000)
        assert hint.kind is HintKind.QUIC_SHORT

    def test_ipsec_nat_t_port(self):
        hint = classify_udp_payload(b"\x00" * 16, 35301, 4500)
        assert hint.kind is HintKind.IPSEC_NAT_T
        assert hint.confidence is Confidence.WEAK

    def test_zoom_port_never_forced_to_rtp(self):
        hint = classify_udp_payload(bytes([0x05, 0x10]) + b"\x00" * 30, 52000, 8801)
        assert hint.kind is HintKind.UNKNOWN
        assert hint.codec_note == "Zoom-associated port"
        assert hint.media is MediaType.UNKNOWN

    def test_rtp_on_dynamic_port_is_weak(self):
        hint = classify_udp_payload(rtp_bytes(extension=1, pt=122), 50000, 50001)
        assert hint.kind is HintKind.RTP
        assert hint.confidence is Confidence.WEAK

    def test_rtcp_detected(self):
        hint = classify_udp_payload(bytes([0x80, 0xC9, 0x00, 0x07]) + b"\x00" * 28, 50000, 50001)
        assert hint.kind is HintKind.RTCP

    def test_unknown_fallback(self):
        hint = classify_udp_payload(b"\x00\x00\x00", 1234, 5678)
        assert hint.kind is HintKind.UNKNOWN
        assert hint.media is MediaType.UNKNOWN

    @settings(max_examples=300, deadline=None)
    @given(st.binary(max_size=40), st.integers(0, 65535), st.integers(0, 65535))
    def test_total_and_deterministic(self, payload, src, dst):
        first = classify_udp_payload(payload, src, dst)
        assert first == classify_udp_payload(payload, src, dst)
        assert first.kind in HintKind

    def test_media_only_set_for_rtp(self):
        for payload, ports in [
            (bytes([0xC3]) + b"\x00" * 8, (1, 443)),
            (b"\x00" * 8, (4500, 9)),
            (b"garbage!", (7, 8)),
        ]:
            hint = classify_udp_payload(payload, *ports)
            if hint.kind is not HintKind.RTP:
                assert hint.media is MediaType.UNKNOWN


class TestContinuity:
    def seqs(self, numbers, ssrc=7):
        return [rtp_bytes(pt=96, seq=n, ssrc=ssrc) for n in numbers]

    def test_perfect_increments(self):
        assert rtp_stream_continuity(self.seqs([5, 6, 7, 8])) == 1.0

    def test_one_skip(self):
        assert rtp_stream_continuity(self.seqs([5, 7, 8])) == 0.5

    def test_duplicates_never_count(self):
        assert rtp_stream_continuity(self.seqs([5, 5])) == 0.0

    def test_wraparound_counts(self):
        assert rtp_stream_continuity(self.seqs([65535, 0])) == 1.0

    def test_insufficient(self):
        with pytest.raises(InsufficientRtp):
            rtp_stream_continuity(self.seqs([5]))
        with pytest.raises(InsufficientRtp):
            rtp_stream_continuity([b"notrtp"])

    def test_filters_to_dominant_ssrc(self):
        payloads = self.seqs([1, 2, 3], ssrc=7) + self.seqs([100], ssrc=9)
        assert rtp_stream_continuity(payloads) == 1.0


def _one_packet_flow(src_port, dst_port, protocol=Transport.UDP):
    pkt = FlowPacket(0, 60, 8, 10, TcpFlags(0), None)
    return make_flow([pkt], [], protocol,
                     initiator=("10.0.0.1", src_port), responder=("10.0.0.2", dst_port))


class TestPortProfile:
    def test_proportions(self):
        flows = [_one_packet_flow(1000 + i, p) for i, p in enumerate([8801, 8801, 8801, 443])]
        profile = port_profile(flows, Side.DST)
        assert profile[8801].proportion == 0.75
        assert profile[443].proportion == 0.25

    def test_empty(self):
        assert port_profile([], Side.BOTH) == {}

    def test_both_sides_single_flow(self):
        profile = port_profile([_one_packet_flow(5000, 6000)], Side.BOTH)
        assert profile[5000].proportion == 0.5
        assert profile[6000].proportion == 0.5

    def test_proportions_sum_to_one(self, rng):
        flows = [_one_packet_flow(rng.randint(1, 99), rng.randint(100, 200)) for _ in range(37)]
        for side in Side:
            total = sum(s.proportion for s in port_profile(flows, side).values())
            assert total == pytest.approx(1.0, abs=1e-12)
