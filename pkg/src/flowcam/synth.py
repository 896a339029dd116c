"""Synthetic captures and benchmark datasets.

Frame builders and the capture writer exist so tests and demo scripts can
construct byte-exact fixture pcaps without real traffic; the dataset
generators provide the desk-scale stand-ins for the private traces used by
the original measurement campaign.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# frame construction
# ---------------------------------------------------------------------------

def _ip_bytes(addr: str) -> bytes:
    parts = [int(p) for p in addr.split(".")]
    if len(parts) != 4 or any(not 0 <= p <= 255 for p in parts):
        raise ValueError(f"bad IPv4 address {addr!r}")
    return bytes(parts)


def ethernet_frame(payload: bytes, ethertype: int = 0x0800,
                   src_mac: bytes = b"\x02\x00\x00\x00\x00\x01",
                   dst_mac: bytes = b"\x02\x00\x00\x00\x00\x02",
                   vlan: int | None = None) -> bytes:
    if vlan is None:
        return dst_mac + src_mac + struct.pack(">H", ethertype) + payload
    return dst_mac + src_mac + struct.pack(">HHH", 0x8100, vlan, ethertype) + payload


def ipv4_packet(src: str, dst: str, protocol: int, payload: bytes,
                ttl: int = 64, frag_offset: int = 0, more_fragments: bool = False,
                header_len: int = 20) -> bytes:
    if header_len < 20 or header_len % 4:
        raise ValueError("IPv4 header length must be a multiple of 4 and >= 20")
    total_len = header_len + len(payload)
    flags_frag = (0x2000 if more_fragments else 0) | (frag_offset & 0x1FFF)
    header = struct.pack(
        ">BBHHHBBH4s4s",
        (4 << 4) | (header_len // 4),
        0,
        total_len,
        0,
        flags_frag,
        ttl,
        protocol,
        0,  # checksum not validated by the decoder
        _ip_bytes(src),
        _ip_bytes(dst),
    )
    header += bytes(header_len - 20)
    return header + payload


def tcp_segment(src_port: int, dst_port: int, flags: int, window: int = 8192,
                payload: bytes = b"", header_len: int = 20,
                seq: int = 0, ack: int = 0) -> bytes:
    if header_len < 20 or header_len % 4:
        raise ValueError("TCP header length must be a multiple of 4 and >= 20")
    header = struct.pack(
        ">HHIIBBHHH",
        src_port, dst_port, seq, ack,
        (header_len // 4) << 4, flags, window, 0, 0,
    )
    header += bytes(header_len - 20)  # zero-padded options
    return header + payload


def udp_datagram(src_port: int, dst_port: int, payload: bytes = b"") -> bytes:
    return struct.pack(">HHHH", src_port, dst_port, 8 + len(payload), 0) + payload


def tcp_frame(src: str, dst: str, sport: int, dport: int, flags: int,
              payload_len: int = 0, window: int = 8192, tcp_header_len: int = 20,
              vlan: int | None = None) -> bytes:
    seg = tcp_segment(sport, dport, flags, window=window,
                      payload=bytes(payload_len), header_len=tcp_header_len)
    return ethernet_frame(ipv4_packet(src, dst, 6, seg), vlan=vlan)


def udp_frame(src: str, dst: str, sport: int, dport: int, payload_len: int = 0,
              vlan: int | None = None) -> bytes:
    dgram = udp_datagram(sport, dport, bytes(payload_len))
    return ethernet_frame(ipv4_packet(src, dst, 17, dgram), vlan=vlan)


# ---------------------------------------------------------------------------
# capture writing
# ---------------------------------------------------------------------------

def write_capture(path: str | Path, records: Iterable[tuple[int, bytes]],
                  byte_order: str = "little", nanosecond: bool = False,
                  snaplen: int = 65535) -> None:
    """Write ``(timestamp_us, frame)`` records as a classic capture file.

    Timestamps are microseconds since the epoch; with ``nanosecond=True``
    the file uses the nanosecond magic and stores ``ts_us * 1000``.
    """
    if byte_order not in ("big", "little"):
        raise ValueError("byte_order must be 'big' or 'little'")
    endian = ">" if byte_order == "big" else "<"
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    out = bytearray()
    out += struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, snaplen, 1)
    for ts_us, frame in records:
        ts_sec, frac = divmod(int(ts_us), 1_000_000)
        if nanosecond:
            frac *= 1000
        out += struct.pack(endian + "IIII", ts_sec, frac, len(frame), len(frame))
        out += frame
    Path(path).write_bytes(bytes(out))


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------

def gaussian_clusters(centers: Sequence[Sequence[float]], n_per_cluster: int,
                      scale: float = 1.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample isotropic Gaussian blobs; returns (X, cluster index per row)."""
    rng = np.random.default_rng(seed)
    centers_arr = np.asarray(centers, dtype=float)
    blocks, labels = [], []
    for i, c in enumerate(centers_arr):
        blocks.append(rng.normal(loc=c, scale=scale, size=(n_per_cluster, centers_arr.shape[1])))
        labels.append(np.full(n_per_cluster, i))
    return np.vstack(blocks), np.concatenate(labels)


def zero_day_benchmark(n_others: int = 2000, n_per_camera: int = 200,
                       n_cameras: int = 11, dim: int = 10,
                       min_shift: float = 4.0, max_shift: float = 8.0,
                       seed: int = 0) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """One benign cluster plus shifted 'camera' clusters, all unit variance.

    Camera centers sit ``min_shift``..``max_shift`` standard deviations from
    the benign center along random directions, so every camera row is a
    genuine outlier with respect to the benign distribution.
    """
    rng = np.random.default_rng(seed)
    others = rng.normal(size=(n_others, dim))
    cameras: dict[str, np.ndarray] = {}
    for i in range(n_cameras):
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        shift = rng.uniform(min_shift, max_shift)
        center = direction * shift
        cameras[f"cam{i:02d}"] = rng.normal(loc=center, scale=0.5, size=(n_per_camera, dim))
    return others, cameras


def multiclass_flowlike(n_per_class: int = 2000, n_classes: int = 6,
                        seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class-dependent feature distributions that defeat naive Bayes.

    Two clean coordinates place the classes on a well-separated circle, so
    partition- and distance-based models classify almost perfectly. A block
    of thirty near-duplicate copies of one weak signal shares a single
    noise draw per row: a naive-Bayes model treats the copies as
    independent evidence, multiplying their common error thirty-fold until
    it outvotes the clean coordinates, while models that can weight or
    partition features simply lean on the clean block.
    """
    rng = np.random.default_rng(seed)
    X_parts, y_parts = [], []
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    strong = 6.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    weak = 2.0 * np.arange(n_classes, dtype=float)
    for c in range(n_classes):
        n = n_per_class
        clean = strong[c] + rng.normal(scale=1.0, size=(n, 2))
        shared = weak[c] + rng.normal(scale=2.0, size=(n, 1))  # one noise draw per row
        copies = shared + rng.normal(scale=0.05, size=(n, 30))
        X_parts.append(np.hstack([clean, copies]))
        y_parts.append(np.full(n, c))
    X = np.vstack(X_parts)
    y = np.concatenate(y_parts)
    order = rng.permutation(len(y))
    return X[order], y[order]
