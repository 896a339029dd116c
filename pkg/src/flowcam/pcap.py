"""Classic packet-capture reading and Ethernet/IPv4/TCP/UDP decoding.

Only the classic capture container is supported (pcapng is rejected); the
link type must be Ethernet. Decoding is IPv4-only: other ethertypes,
non-TCP/UDP protocols, and continuation fragments are skipped rather than
treated as errors, so a capture with mixed traffic still meters cleanly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import MalformedHeader, TruncatedCapture, UnknownMagic, UnsupportedLinkType

# classic capture magics: (byte order, nanosecond resolution)
_MAGICS = {
    0xA1B2C3D4: ("big", False),
    0xD4C3B2A1: ("little", False),
    0xA1B23C4D: ("big", True),
    0x4D3CB2A1: ("little", True),
}
_PCAPNG_MAGIC = 0x0A0D0D0A
LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
PROTO_TCP = 6
PROTO_UDP = 17

# TCP flag bits in header byte 13
TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10
TCP_URG = 0x20
TCP_ECE = 0x40
TCP_CWR = 0x80


@dataclass(frozen=True)
class CaptureHeader:
    magic: int
    version_major: int
    version_minor: int
    snaplen: int
    linktype: int
    byte_order: str  # "big" | "little"
    ts_resolution: str  # "microsecond" | "nanosecond"


@dataclass(frozen=True)
class PacketSummary:
    """One decoded TCP/UDP-over-IPv4 packet.

    ``payload_len`` is derived from the IP total length minus both header
    lengths and is never negative for a successfully decoded packet.
    """

    timestamp: int  # microseconds since epoch
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int  # 6 or 17
    ip_total_len: int
    ip_header_len: int
    transport_header_len: int
    payload_len: int
    tcp_flags: int  # 0 for UDP
    tcp_window: int | None  # None for UDP


class CaptureReader:
    """Sequential reader over a classic capture file.

    Iterating yields ``(timestamp_us, frame_bytes)`` in file order. A
    truncated trailing record is dropped and counted in
    ``truncated_records`` instead of raising.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        data = self.path.read_bytes()
        if len(data) >= 4 and struct.unpack("<I", data[:4])[0] == _PCAPNG_MAGIC:
            raise UnknownMagic(f"{self.path}: pcapng captures are not supported")
        if len(data) < 24:
            raise TruncatedCapture(f"{self.path}: global header needs 24 bytes, file has {len(data)}")
        magic_be = struct.unpack(">I", data[:4])[0]
        if magic_be not in _MAGICS:
            raise UnknownMagic(f"{self.path}: unknown capture magic 0x{magic_be:08x}")
        byte_order, nanos = _MAGICS[magic_be]
        endian = ">" if byte_order == "big" else "<"
        vmaj, vmin, _tz, _sig, snaplen, linktype = struct.unpack(endian + "HHiIII", data[4:24])
        if linktype != LINKTYPE_ETHERNET:
            raise UnsupportedLinkType(f"{self.path}: link type {linktype}, only Ethernet (1) is decodable")
        self.header = CaptureHeader(
            magic=magic_be,
            version_major=vmaj,
            version_minor=vmin,
            snaplen=snaplen,
            linktype=linktype,
            byte_order=byte_order,
            ts_resolution="nanosecond" if nanos else "microsecond",
        )
        self._data = data
        self._endian = endian
        self._nanos = nanos
        self.truncated_records = 0

    def __iter__(self) -> Iterator[tuple[int, bytes]]:
        data, endian = self._data, self._endian
        off = 24
        while off < len(data):
            if off + 16 > len(data):
                self.truncated_records += 1
                return
            ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(endian + "IIII", data[off : off + 16])
            off += 16
            if off + incl_len > len(data):
                self.truncated_records += 1
                return
            frac_us = ts_frac // 1000 if self._nanos else ts_frac
            yield ts_sec * 1_000_000 + frac_us, data[off : off + incl_len]
            off += incl_len


def read_capture(path: str | Path) -> CaptureReader:
    """Open a classic capture file; see :class:`CaptureReader`."""
    return CaptureReader(path)


def decode_packet(frame: bytes, timestamp: int) -> PacketSummary | None:
    """Decode one Ethernet frame into a :class:`PacketSummary`.

    Returns None (skip) for non-IPv4 ethertypes, non-TCP/UDP protocols and
    IP fragments with a nonzero offset. One 802.1Q VLAN tag is unwrapped;
    nested tags are skipped. Raises MalformedHeader when declared lengths
    exceed the captured bytes.
    """
    if len(frame) < 14:
        raise MalformedHeader(f"frame of {len(frame)} bytes is shorter than an Ethernet header")
    ethertype = struct.unpack(">H", frame[12:14])[0]
    ip_start = 14
    if ethertype == ETHERTYPE_VLAN:
        if len(frame) < 18:
            raise MalformedHeader("VLAN tag declared but frame ends inside it")
        ethertype = struct.unpack(">H", frame[16:18])[0]
        ip_start = 18
        if ethertype == ETHERTYPE_VLAN:  # nested tags: skip
            return None
    if ethertype != ETHERTYPE_IPV4:
        return None

    ip = frame[ip_start:]
    if len(ip) < 20:
        raise MalformedHeader("IPv4 header truncated")
    ver_ihl = ip[0]
    if ver_ihl >> 4 != 4:
        return None
    ip_header_len = (ver_ihl & 0x0F) * 4
    if ip_header_len < 20:
        raise MalformedHeader(f"IPv4 IHL of {ip_header_len} bytes is below the 20-byte minimum")
    total_len = struct.unpack(">H", ip[2:4])[0]
    if total_len < ip_header_len:
        raise MalformedHeader("IPv4 total length smaller than its header length")
    if total_len > len(ip):
        raise MalformedHeader(f"IPv4 declares {total_len} bytes but only {len(ip)} were captured")
    flags_frag = struct.unpack(">H", ip[6:8])[0]
    if flags_frag & 0x1FFF:  # nonzero fragment offset: no transport header
        return None
    protocol = ip[9]
    if protocol not in (PROTO_TCP, PROTO_UDP):
        return None
    src_ip = "%d.%d.%d.%d" % tuple(ip[12:16])
    dst_ip = "%d.%d.%d.%d" % tuple(ip[16:20])

    transport = ip[ip_header_len:total_len]
    if protocol == PROTO_TCP:
        if len(transport) < 20:
            raise MalformedHeader("TCP header truncated")
        src_port, dst_port = struct.unpack(">HH", transport[:4])
        data_offset = (transport[12] >> 4) * 4
        if data_offset < 20 or data_offset > len(transport):
            raise MalformedHeader(f"TCP data offset of {data_offset} bytes is out of range")
        tcp_flags = transport[13]
        tcp_window: int | None = struct.unpack(">H", transport[14:16])[0]
        transport_header_len = data_offset
    else:
        if len(transport) < 8:
            raise MalformedHeader("UDP header truncated")
        src_port, dst_port = struct.unpack(">HH", transport[:4])
        tcp_flags = 0
        tcp_window = None
        transport_header_len = 8

    payload_len = total_len - ip_header_len - transport_header_len
    return PacketSummary(
        timestamp=timestamp,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        protocol=protocol,
        ip_total_len=total_len,
        ip_header_len=ip_header_len,
        transport_header_len=transport_header_len,
        payload_len=payload_len,
        tcp_flags=tcp_flags,
        tcp_window=tcp_window,
    )


@dataclass
class DecodeStats:
    read: int = 0
    emitted: int = 0
    skipped: int = 0
    malformed: int = 0


def iter_packets(path: str | Path, stats: DecodeStats | None = None) -> Iterator[PacketSummary]:
    """Read a capture and yield decoded packet summaries in file order.

    Malformed frames are counted and dropped so one bad record does not
    abort the whole capture; ``stats`` (if given) receives the counts.
    """
    reader = read_capture(path)
    for ts, frame in reader:
        if stats is not None:
            stats.read += 1
        try:
            summary = decode_packet(frame, ts)
        except MalformedHeader:
            if stats is not None:
                stats.malformed += 1
            continue
        if summary is None:
            if stats is not None:
                stats.skipped += 1
            continue
        if stats is not None:
            stats.emitted += 1
        yield summary
