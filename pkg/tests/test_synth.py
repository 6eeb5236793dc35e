import json

import numpy as np
import pytest

from camsieve import cli
from camsieve.features import FEATURE_NAMES
from camsieve.flows import assemble_flows
from camsieve.packets import open_capture, decode_packet, read_packets_sorted
from camsieve.protocols import AppContext, MediaType, media_hint, parse_rtp_header, rtp_stream_continuity
from camsieve.synth import KIND_LABELS, SynthProfile, TrafficKind, generate
from camsieve.tree import best_split


def fidx(name):
    return FEATURE_NAMES.index(name)


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("synth")
    out = {}
    for kind in TrafficKind:
        pcap = base / f"{kind.value}.pcap"
        entries = generate(SynthProfile(kind, 12, seed=11), pcap)
        out[kind] = (pcap, entries)
    return out


class TestDeterminism:
    def test_byte_identical_regeneration(self, tmp_path):
        p1, p2 = tmp_path / "a.pcap", tmp_path / "b.pcap"
        generate(SynthProfile(TrafficKind.CONF, 1, seed=7), p1)
        generate(SynthProfile(TrafficKind.CONF, 1, seed=7), p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.pcap.manifest.jsonl").read_text() == (
            tmp_path / "b.pcap.manifest.jsonl"
        ).read_text()

    def test_seed_changes_output(self, tmp_path):
        p1, p2 = tmp_path / "a.pcap", tmp_path / "b.pcap"
        generate(SynthProfile(TrafficKind.CAMERA, 2, seed=1), p1)
        generate(SynthProfile(TrafficKind.CAMERA, 2, seed=2), p2)
        assert p1.read_bytes() != p2.read_bytes()


class TestWireValidity:
    def test_zero_skipped_frames(self, small_runs):
        for kind, (pcap, entries) in small_runs.items():
            total = 0
            for frame in open_capture(pcap):
                rec = decode_packet(frame.data, frame.link_type, frame.timestamp, frame.wire_length)
                assert rec is not None, f"{kind} produced an undecodable frame"
                total += 1
            assert total == sum(e["packets"] for e in entries)

    def test_flow_count_matches_manifest(self, small_runs):
        for kind, (pcap, entries) in small_runs.items():
            flows = assemble_flows(read_packets_sorted(pcap))
            assert len(flows) == len(entries)

    def test_manifest_describes_flows(self, small_runs):
        pcap, entries = small_runs[TrafficKind.CAMERA]
        flows = assemble_flows(read_packets_sorted(pcap))
        by_endpoints = {(f.initiator, f.responder): f for f in flows}
        for entry in entries:
            key = ((entry["src_ip"], entry["src_port"]), (entry["dst_ip"], entry["dst_port"]))
            flow = by_endpoints[key]
            assert flow.packet_count == entry["packets"]
            assert len(flow.fwd_packets) == entry["fwd_packets"]
            assert len(flow.bwd_packets) == entry["bwd_packets"]

    def test_decoded_fields_match_generator_intent(self, small_runs):
        pcap, entries = small_runs[TrafficKind.SHARE]
        flows = assemble_flows(read_packets_sorted(pcap))
        for flow, entry in zip(flows, sorted(entries, key=lambda e: e["first_ts_us"])):
            assert flow.initiator == (entry["src_ip"], entry["src_port"])
            assert flow.responder == (entry["dst_ip"], entry["dst_port"])
            assert flow.key.protocol.value == "TCP"


class TestConfRtp:
    def test_every_packet_is_valid_rtp_with_full_continuity(self, small_runs, tmp_path):
        pcap, entries = small_runs[TrafficKind.CONF]
        flows_by_ep = {
            (f.initiator, f.responder): f
            for f in assemble_flows(read_packets_sorted(pcap))
        }
        packets = read_packets_sorted(pcap)
        for entry in entries:
            fwd_payloads = [
                p.payload for p in packets
                if (p.src_ip, p.src_port) == (entry["src_ip"], entry["src_port"])
            ]
            assert fwd_payloads
            headers = [parse_rtp_header(p) for p in fwd_payloads]
            assert all(h is not None and h.version == 2 for h in headers)
            assert rtp_stream_continuity(fwd_payloads) == 1.0
            assert {h.ssrc for h in headers} == {entry["rtp"]["ssrc_fwd"]}
            media, _ = media_hint(headers[0], AppContext(entry["rtp"]["app"]))
            assert media is MediaType.VIDEO
            assert headers[0].payload_type == entry["rtp"]["payload_type"]


@pytest.fixture(scope="module")
def records(tmp_path_factory):
    base = tmp_path_factory.mktemp("sep")
    recs = {}
    for kind in TrafficKind:
        pcap = base / f"{kind.value}.pcap"
        generate(SynthProfile(kind, 10, seed=3), pcap)
        recs[kind] = cli.extract_records(pcap, label=KIND_LABELS[kind])
    return recs


class TestSeparability:
    def test_camera_vs_share_packet_length_margin(self, records):
        i = fidx("Packet Length Mean")
        cam = np.mean([r.values[i] for r in records[TrafficKind.CAMERA]])
        share = np.mean([r.values[i] for r in records[TrafficKind.SHARE]])
        assert share - cam > 300

    PAIR_FEATURES = {
        (TrafficKind.CAMERA, TrafficKind.CONF): [
            "Packet Length Mean",
            "Bwd Packet Length Mean",
            "Idle Mean",
        ],
        (TrafficKind.CAMERA, TrafficKind.SHARE): [
            "Packet Length Mean",
            "min_seg_size_forward",
            "ACK Flag Count",
        ],
        (TrafficKind.CONF, TrafficKind.SHARE): [
            "min_seg_size_forward",
            "ACK Flag Count",
            "Init_Win_bytes_forward",
        ],
    }

    def test_three_perfect_root_splits_per_pair(self, records):
        for (ka, kb), names in self.PAIR_FEATURES.items():
            X = np.array(
                [[r.values[fidx(n)] for n in names] for r in records[ka] + records[kb]]
            )
            y = np.array([0] * len(records[ka]) + [1] * len(records[kb]))
            for col in range(len(names)):
                result = best_split(X, y, 2, [col])
                assert result is not None, (ka, kb, names[col])
                _, _, gain = result
                # a gain equal to the parent impurity means a perfect split
                assert gain == pytest.approx(0.5, abs=1e-12), (ka, kb, names[col])


class TestTruncation:
    def test_truncated_generated_capture(self, tmp_path):
        # byte-truncate a generated capture mid-record: the prefix decodes,
        # then the reader reports the cut
        from camsieve.errors import MalformedCapture

        pcap = tmp_path / "two.pcap"
        generate(SynthProfile(TrafficKind.CAMERA, 1, seed=1), pcap)
        blob = pcap.read_bytes()
        cut = tmp_path / "cut.pcap"
        cut.write_bytes(blob[: len(blob) - 7])
        frames = []
        with pytest.raises(MalformedCapture):
            for frame in open_capture(cut):
                frames.append(frame)
        assert frames  # everything before the truncation still came through


class TestManifest:
    def test_jsonl_one_object_per_flow(self, small_runs):
        pcap, entries = small_runs[TrafficKind.CONF]
        manifest = pcap.with_name(pcap.name + ".manifest.jsonl")
        lines = manifest.read_text().splitlines()
        assert len(lines) == len(entries)
        parsed = [json.loads(line) for line in lines]
        assert all(p["label"] == "Conf" for p in parsed)
        assert all("payload_type" in p["rtp"] for p in parsed)

    def test_labels_per_kind(self, small_runs):
        for kind, (_, entries) in small_runs.items():
            assert {e["label"] for e in entries} == {KIND_LABELS[kind]}
