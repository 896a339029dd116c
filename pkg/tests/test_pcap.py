import struct

import pytest

from flowcam import pcap, synth
from flowcam.errors import MalformedHeader, TruncatedCapture, UnknownMagic, UnsupportedLinkType


def make_two_packet_file(path, **kwargs):
    frames = [
        (1_500_000, synth.tcp_frame("10.0.0.1", "10.0.0.2", 1234, 80, pcap.TCP_SYN)),
        (2_750_001, synth.udp_frame("10.0.0.3", "10.0.0.4", 5353, 5353, payload_len=4)),
    ]
    synth.write_capture(path, frames, **kwargs)
    return frames


def test_little_endian_magic_is_microsecond(tmp_path):
    f = tmp_path / "le.pcap"
    make_two_packet_file(f, byte_order="little")
    raw = f.read_bytes()
    assert raw[:4] == bytes([0xD4, 0xC3, 0xB2, 0xA1])
    reader = pcap.read_capture(f)
    assert reader.header.byte_order == "little"
    assert reader.header.ts_resolution == "microsecond"
    assert reader.header.linktype == 1
    assert reader.header.version_major == 2 and reader.header.version_minor == 4


@pytest.mark.parametrize("byte_order", ["little", "big"])
@pytest.mark.parametrize("nanosecond", [False, True])
def test_round_trip_preserves_timestamps(tmp_path, byte_order, nanosecond):
    f = tmp_path / "rt.pcap"
    frames = make_two_packet_file(f, byte_order=byte_order, nanosecond=nanosecond)
    reader = pcap.read_capture(f)
    got = list(reader)
    assert [ts for ts, _ in got] == [ts for ts, _ in frames]
    assert [fr for _, fr in got] == [fr for _, fr in frames]
    assert reader.truncated_records == 0


def test_empty_file_is_truncated(tmp_path):
    f = tmp_path / "empty.pcap"
    f.write_bytes(b"")
    with pytest.raises(TruncatedCapture):
        pcap.read_capture(f)
    f.write_bytes(b"\xd4\xc3\xb2\xa1short")
    with pytest.raises(TruncatedCapture):
        pcap.read_capture(f)


def test_unknown_magic_and_pcapng_rejected(tmp_path):
    f = tmp_path / "bad.pcap"
    f.write_bytes(b"\x00\x01\x02\x03" + bytes(20))
    with pytest.raises(UnknownMagic):
        pcap.read_capture(f)
    f.write_bytes(struct.pack("<I", 0x0A0D0D0A) + bytes(20))
    with pytest.raises(UnknownMagic, match="pcapng"):
        pcap.read_capture(f)


def test_non_ethernet_linktype_rejected(tmp_path):
    f = tmp_path / "raw.pcap"
    # linktype 101 (raw IP)
    f.write_bytes(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 101))
    with pytest.raises(UnsupportedLinkType):
        pcap.read_capture(f)


def test_truncated_trailing_record_dropped(tmp_path):
    f = tmp_path / "trunc.pcap"
    make_two_packet_file(f)
    raw = f.read_bytes()
    f.write_bytes(raw[:-3])  # cut into the last frame
    reader = pcap.read_capture(f)
    assert len(list(reader)) == 1
    assert reader.truncated_records == 1


def test_arp_and_ipv6_and_icmp_are_skipped():
    arp = synth.ethernet_frame(bytes(28), ethertype=0x0806)
    assert pcap.decode_packet(arp, 0) is None
    ipv6 = synth.ethernet_frame(bytes(40), ethertype=0x86DD)
    assert pcap.decode_packet(ipv6, 0) is None
    icmp = synth.ethernet_frame(synth.ipv4_packet("1.2.3.4", "5.6.7.8", 1, bytes(8)))
    assert pcap.decode_packet(icmp, 0) is None


def test_fragment_with_nonzero_offset_skipped():
    frag = synth.ethernet_frame(
        synth.ipv4_packet("1.2.3.4", "5.6.7.8", 17, bytes(16), frag_offset=10))
    assert pcap.decode_packet(frag, 0) is None
    # first fragment (offset 0) still decodes
    first = synth.ethernet_frame(
        synth.ipv4_packet("1.2.3.4", "5.6.7.8", 17,
                          synth.udp_datagram(9, 9, bytes(8)), more_fragments=True))
    assert pcap.decode_packet(first, 0) is not None


def test_minimal_tcp_syn_hand_lengths():
    # 20-byte IP header + 20-byte TCP header, no payload: total length 40
    frame = synth.tcp_frame("192.168.0.1", "192.168.0.2", 1111, 443, pcap.TCP_SYN,
                            payload_len=0, window=2920)
    s = pcap.decode_packet(frame, 7)
    assert s is not None
    assert s.ip_total_len == 40
    assert s.ip_header_len == 20
    assert s.transport_header_len == 20
    assert s.payload_len == 0
    assert s.tcp_flags == pcap.TCP_SYN
    assert s.tcp_window == 2920
    assert (s.src_ip, s.dst_ip, s.src_port, s.dst_port) == ("192.168.0.1", "192.168.0.2", 1111, 443)
    assert s.timestamp == 7


def test_udp_datagram_hand_lengths():
    # 20 IP + 8 UDP + 8 payload = 36
    frame = synth.udp_frame("10.1.1.1", "10.1.1.2", 5000, 53, payload_len=8)
    s = pcap.decode_packet(frame, 0)
    assert s is not None
    assert s.ip_total_len == 36
    assert s.transport_header_len == 8
    assert s.payload_len == 8
    assert s.tcp_window is None
    assert s.tcp_flags == 0


def test_tcp_options_counted_in_header_len():
    frame = synth.tcp_frame("10.1.1.1", "10.1.1.2", 1, 2, pcap.TCP_ACK,
                            payload_len=5, tcp_header_len=32)
    s = pcap.decode_packet(frame, 0)
    assert s.transport_header_len == 32
    assert s.payload_len == 5
    assert s.ip_total_len == 20 + 32 + 5


def test_vlan_unwrapped_once_nested_skipped():
    inner = synth.ipv4_packet("10.0.0.1", "10.0.0.2", 17, synth.udp_datagram(1, 2))
    tagged = synth.ethernet_frame(inner, vlan=42)
    s = pcap.decode_packet(tagged, 0)
    assert s is not None and s.protocol == 17
    double = tagged[:12] + struct.pack(">HH", 0x8100, 7) + tagged[12:]
    assert pcap.decode_packet(double, 0) is None


def test_malformed_lengths_raise():
    with pytest.raises(MalformedHeader):
        pcap.decode_packet(b"\x00" * 10, 0)
    # IP total length larger than captured bytes
    ip = synth.ipv4_packet("1.1.1.1", "2.2.2.2", 6, synth.tcp_segment(1, 2, 0))
    ip = ip[:2] + struct.pack(">H", 200) + ip[4:]
    with pytest.raises(MalformedHeader):
        pcap.decode_packet(synth.ethernet_frame(ip), 0)
    # TCP data offset below the 20-byte minimum
    seg = synth.tcp_segment(1, 2, 0)
    seg = seg[:12] + bytes([1 << 4]) + seg[13:]
    with pytest.raises(MalformedHeader):
        pcap.decode_packet(synth.ethernet_frame(synth.ipv4_packet("1.1.1.1", "2.2.2.2", 6, seg)), 0)


def test_decoding_is_pure():
    frame = synth.tcp_frame("10.0.0.1", "10.0.0.2", 5, 6, pcap.TCP_PSH | pcap.TCP_ACK, payload_len=9)
    assert pcap.decode_packet(frame, 123) == pcap.decode_packet(frame, 123)


def test_stream_counts_add_up(tmp_path):
    f = tmp_path / "mix.pcap"
    bad_ip = synth.ipv4_packet("1.1.1.1", "2.2.2.2", 6, synth.tcp_segment(1, 2, 0))
    bad_ip = bad_ip[:2] + struct.pack(">H", 999) + bad_ip[4:]
    frames = [
        (0, synth.tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, pcap.TCP_SYN)),
        (1, synth.ethernet_frame(bytes(28), ethertype=0x0806)),  # skip
        (2, synth.udp_frame("10.0.0.1", "10.0.0.2", 3, 4)),
        (3, synth.ethernet_frame(bad_ip)),  # malformed
    ]
    synth.write_capture(f, frames)
    stats = pcap.DecodeStats()
    out = list(pcap.iter_packets(f, stats=stats))
    assert len(out) == 2
    assert stats.read == 4
    assert stats.emitted + stats.skipped + stats.malformed == stats.read
    assert stats.skipped == 1 and stats.malformed == 1
