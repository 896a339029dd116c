"""Bidirectional flow metering and the 77-column flow feature vector.

Packets sharing a 5-tuple in either orientation belong to one flow; the
forward direction is the direction of the first observed packet. Flows end
on acknowledged FINs in both directions or RST, at a 600 s age cap, or
after 120 s idle; active/idle periods inside a flow are split at a 5 s
activity timeout. Column names follow the flow-metering tool this module
stays CSV-compatible with, so either tool's exports feed the same loaders.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ClockRegression
from .pcap import (
    PROTO_TCP,
    TCP_ACK,
    TCP_CWR,
    TCP_ECE,
    TCP_FIN,
    TCP_PSH,
    TCP_RST,
    TCP_SYN,
    TCP_URG,
    DecodeStats,
    PacketSummary,
    iter_packets,
)

META_COLUMNS = ["Flow ID", "Src IP", "Src Port", "Dst IP", "Dst Port", "Protocol", "Timestamp"]

FEATURE_COLUMNS = [
    "Flow Duration", "Tot Fwd Pkts", "Tot Bwd Pkts", "TotLen Fwd Pkts", "TotLen Bwd Pkts",
    "Fwd Pkt Len Max", "Fwd Pkt Len Min", "Fwd Pkt Len Mean", "Fwd Pkt Len Std",
    "Bwd Pkt Len Max", "Bwd Pkt Len Min", "Bwd Pkt Len Mean", "Bwd Pkt Len Std",
    "Flow Byts/s", "Flow Pkts/s",
    "Flow IAT Mean", "Flow IAT Std", "Flow IAT Max", "Flow IAT Min",
    "Fwd IAT Tot", "Fwd IAT Mean", "Fwd IAT Std", "Fwd IAT Max", "Fwd IAT Min",
    "Bwd IAT Tot", "Bwd IAT Mean", "Bwd IAT Std", "Bwd IAT Max", "Bwd IAT Min",
    "Fwd PSH Flags", "Bwd PSH Flags", "Fwd URG Flags", "Bwd URG Flags",
    "Fwd Header Len", "Bwd Header Len", "Fwd Pkts/s", "Bwd Pkts/s",
    "Pkt Len Min", "Pkt Len Max", "Pkt Len Mean", "Pkt Len Std", "Pkt Len Var",
    "FIN Flag Cnt", "SYN Flag Cnt", "RST Flag Cnt", "PSH Flag Cnt",
    "ACK Flag Cnt", "URG Flag Cnt", "CWR Flag Cnt", "ECE Flag Cnt",
    "Down/Up Ratio", "Pkt Size Avg", "Fwd Seg Size Avg", "Bwd Seg Size Avg",
    "Fwd Byts/b Avg", "Fwd Pkts/b Avg", "Fwd Blk Rate Avg",
    "Bwd Byts/b Avg", "Bwd Pkts/b Avg", "Bwd Blk Rate Avg",
    "Subflow Fwd Pkts", "Subflow Fwd Byts", "Subflow Bwd Pkts", "Subflow Bwd Byts",
    "Init Fwd Win Byts", "Init Bwd Win Byts", "Fwd Act Data Pkts", "Fwd Seg Size Min",
    "Active Mean", "Active Std", "Active Max", "Active Min",
    "Idle Mean", "Idle Std", "Idle Max", "Idle Min",
]

LABEL_COLUMN = "Label"
CSV_COLUMNS = META_COLUMNS + FEATURE_COLUMNS + [LABEL_COLUMN]

# defaults; only the 600 s cap is inherent to the flow definition
DEFAULT_FLOW_CAP_US = 600_000_000
DEFAULT_IDLE_TIMEOUT_US = 120_000_000
DEFAULT_ACTIVITY_TIMEOUT_US = 5_000_000
CLOCK_TOLERANCE_US = 1_000
BULK_GAP_US = 1_000_000
SUBFLOW_GAP_US = 1_000_000


@dataclass(frozen=True, order=True)
class FlowKey:
    """Canonical flow identity: (ip_a, port_a) is the initiator endpoint."""

    ip_a: str
    port_a: int
    ip_b: str
    port_b: int
    protocol: int

    def table_key(self) -> tuple:
        a = (self.ip_a, self.port_a)
        b = (self.ip_b, self.port_b)
        return (min(a, b), max(a, b), self.protocol)


def _table_key_of(p: PacketSummary) -> tuple:
    a = (p.src_ip, p.src_port)
    b = (p.dst_ip, p.dst_port)
    return (min(a, b), max(a, b), p.protocol)


class _RunningStats:
    """Min/max/sum/sum-of-squares accumulator (population statistics)."""

    __slots__ = ("n", "s", "ss", "lo", "hi")

    def __init__(self):
        self.n = 0
        self.s = 0.0
        self.ss = 0.0
        self.lo = 0.0
        self.hi = 0.0

    def add(self, x: float) -> None:
        if self.n == 0:
            self.lo = self.hi = x
        else:
            if x < self.lo:
                self.lo = x
            if x > self.hi:
                self.hi = x
        self.n += 1
        self.s += x
        self.ss += x * x

    @property
    def mean(self) -> float:
        return self.s / self.n if self.n else 0.0

    @property
    def var(self) -> float:
        if self.n == 0:
            return 0.0
        m = self.s / self.n
        return max(self.ss / self.n - m * m, 0.0)

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    @property
    def minimum(self) -> float:
        return self.lo if self.n else 0.0

    @property
    def maximum(self) -> float:
        return self.hi if self.n else 0.0


class _BulkState:
    """Per-direction bulk transfers: runs of >= 4 payload-bearing packets
    with gaps <= 1 s; a zero-payload packet in the direction breaks the run."""

    __slots__ = ("run_pkts", "run_bytes", "run_start", "run_last",
                 "bulk_count", "bulk_pkts", "bulk_bytes", "bulk_dur")

    def __init__(self):
        self.run_pkts = 0
        self.run_bytes = 0
        self.run_start = 0
        self.run_last = 0
        self.bulk_count = 0
        self.bulk_pkts = 0
        self.bulk_bytes = 0
        self.bulk_dur = 0

    def add(self, ts: int, payload: int) -> None:
        if payload <= 0:
            self.run_pkts = 0
            return
        if self.run_pkts == 0 or ts - self.run_last > BULK_GAP_US:
            self.run_pkts = 1
            self.run_bytes = payload
            self.run_start = ts
        else:
            self.run_pkts += 1
            self.run_bytes += payload
            if self.run_pkts == 4:
                self.bulk_count += 1
                self.bulk_pkts += 4
                self.bulk_bytes += self.run_bytes
                self.bulk_dur += ts - self.run_start
            elif self.run_pkts > 4:
                self.bulk_pkts += 1
                self.bulk_bytes += payload
                self.bulk_dur += ts - self.run_last
        self.run_last = ts


class FlowAccumulator:
    """Mutable per-flow state while the flow is open."""

    def __init__(self, key: FlowKey, first: PacketSummary):
        self.key = key
        self.first_ts = first.timestamp
        self.last_ts = first.timestamp
        self.fwd_pkts = _RunningStats()  # payload lengths, forward
        self.bwd_pkts = _RunningStats()
        self.all_pkts = _RunningStats()
        self.fwd_iat = _RunningStats()  # microsecond gaps
        self.bwd_iat = _RunningStats()
        self.flow_iat = _RunningStats()
        self.fwd_last_ts: int | None = None
        self.bwd_last_ts: int | None = None
        self.fwd_header = 0
        self.bwd_header = 0
        self.fwd_psh = 0
        self.bwd_psh = 0
        self.fwd_urg = 0
        self.bwd_urg = 0
        self.flag_counts = {f: 0 for f in
                            (TCP_FIN, TCP_SYN, TCP_RST, TCP_PSH, TCP_ACK, TCP_URG, TCP_CWR, TCP_ECE)}
        self.init_fwd_win = 0
        self.init_bwd_win = 0
        self.fwd_act_data = 0
        self.fwd_seg_min: int | None = None
        self.fwd_bulk = _BulkState()
        self.bwd_bulk = _BulkState()
        self.subflow_gaps = 0
        # activity tracking
        self.burst_start = first.timestamp
        self.last_activity = first.timestamp
        self.active_periods: list[int] = []
        self.idle_periods: list[int] = []
        # TCP lifecycle
        self.fin_seen = {"fwd": False, "bwd": False}
        self.fin_acked = {"fwd": False, "bwd": False}
        self.rst = False
        self.update(first, "fwd")

    @property
    def total_packets(self) -> int:
        return self.fwd_pkts.n + self.bwd_pkts.n

    def update(self, p: PacketSummary, direction: str) -> None:
        ts = p.timestamp
        if ts < self.last_ts:
            ts = self.last_ts  # within tolerance; IAT clamps to 0
        if self.all_pkts.n > 0:
            self.flow_iat.add(ts - self.last_ts)
        self.all_pkts.add(p.payload_len)
        self.last_ts = max(self.last_ts, ts)

        if direction == "fwd":
            if self.fwd_last_ts is not None:
                self.fwd_iat.add(max(ts - self.fwd_last_ts, 0))
            self.fwd_last_ts = ts
            if self.fwd_pkts.n == 0 and p.tcp_window is not None:
                self.init_fwd_win = p.tcp_window
            self.fwd_pkts.add(p.payload_len)
            self.fwd_header += p.transport_header_len
            if p.tcp_flags & TCP_PSH:
                self.fwd_psh += 1
            if p.tcp_flags & TCP_URG:
                self.fwd_urg += 1
            if p.payload_len > 0:
                self.fwd_act_data += 1
            if self.fwd_seg_min is None or p.transport_header_len < self.fwd_seg_min:
                self.fwd_seg_min = p.transport_header_len
            self.fwd_bulk.add(ts, p.payload_len)
        else:
            if self.bwd_last_ts is not None:
                self.bwd_iat.add(max(ts - self.bwd_last_ts, 0))
            self.bwd_last_ts = ts
            if self.bwd_pkts.n == 0 and p.tcp_window is not None:
                self.init_bwd_win = p.tcp_window
            self.bwd_pkts.add(p.payload_len)
            self.bwd_header += p.transport_header_len
            if p.tcp_flags & TCP_PSH:
                self.bwd_psh += 1
            if p.tcp_flags & TCP_URG:
                self.bwd_urg += 1
            self.bwd_bulk.add(ts, p.payload_len)

        for flag in self.flag_counts:
            if p.tcp_flags & flag:
                self.flag_counts[flag] += 1

    def update_activity(self, ts: int, activity_timeout_us: int) -> None:
        if ts <= self.last_activity:
            return
        gap = ts - self.last_activity
        if gap > activity_timeout_us:
            if self.last_activity - self.burst_start > 0:
                self.active_periods.append(self.last_activity - self.burst_start)
            self.idle_periods.append(gap)
            self.burst_start = ts
        self.last_activity = ts

    def close_activity(self) -> None:
        if self.last_activity - self.burst_start > 0:
            self.active_periods.append(self.last_activity - self.burst_start)
            self.burst_start = self.last_activity


@dataclass
class FlowRecord:
    """One finalized flow: identity, start timestamp, features, label."""

    flow_id: int
    key: FlowKey
    start_ts: int
    features: dict[str, float]
    label: str = ""

    def csv_row(self) -> list[str]:
        meta = [str(self.flow_id), self.key.ip_a, str(self.key.port_a),
                self.key.ip_b, str(self.key.port_b), str(self.key.protocol),
                format_timestamp(self.start_ts)]
        feats = [_format_value(self.features[c]) for c in FEATURE_COLUMNS]
        return meta + feats + [self.label]


def format_timestamp(ts_us: int) -> str:
    sec, us = divmod(int(ts_us), 1_000_000)
    days, rem = divmod(sec, 86_400)
    hh, rem = divmod(rem, 3_600)
    mm, ss = divmod(rem, 60)
    # days since 1970-01-01, rendered without pulling in timezone handling
    y, mo, d = _civil_from_days(days)
    return f"{y:04d}-{mo:02d}-{d:02d} {hh:02d}:{mm:02d}:{ss:02d}.{us:06d}"


def _civil_from_days(z: int) -> tuple[int, int, int]:
    # Howard Hinnant's days-to-civil algorithm
    z += 719_468
    era = (z if z >= 0 else z - 146_096) // 146_097
    doe = z - era * 146_097
    yoe = (doe - doe // 1460 + doe // 36_524 - doe // 146_096) // 365
    y = yoe + era * 400
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    d = doy - (153 * mp + 2) // 5 + 1
    m = mp + 3 if mp < 10 else mp - 9
    return y + (1 if m <= 2 else 0), m, d


def _format_value(v: float) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(float(v))


def _iat_features(stats: _RunningStats, prefix: str, with_total: bool) -> dict[str, float]:
    out = {}
    if with_total:
        out[f"{prefix} Tot"] = float(stats.s)
    out[f"{prefix} Mean"] = stats.mean
    out[f"{prefix} Std"] = stats.std
    out[f"{prefix} Max"] = stats.maximum
    out[f"{prefix} Min"] = stats.minimum
    return out


def finalize_features(acc: FlowAccumulator) -> dict[str, float]:
    """Compute the full feature vector for a finished flow.

    Rates use the duration in seconds and are 0 for zero-duration flows;
    every statistic over an empty set is 0.
    """
    duration = acc.last_ts - acc.first_ts
    dur_s = duration / 1e6
    fwd_n, bwd_n = acc.fwd_pkts.n, acc.bwd_pkts.n
    total_payload = acc.fwd_pkts.s + acc.bwd_pkts.s

    f: dict[str, float] = {}
    f["Flow Duration"] = float(duration)
    f["Tot Fwd Pkts"] = float(fwd_n)
    f["Tot Bwd Pkts"] = float(bwd_n)
    f["TotLen Fwd Pkts"] = float(acc.fwd_pkts.s)
    f["TotLen Bwd Pkts"] = float(acc.bwd_pkts.s)
    f["Fwd Pkt Len Max"] = acc.fwd_pkts.maximum
    f["Fwd Pkt Len Min"] = acc.fwd_pkts.minimum
    f["Fwd Pkt Len Mean"] = acc.fwd_pkts.mean
    f["Fwd Pkt Len Std"] = acc.fwd_pkts.std
    f["Bwd Pkt Len Max"] = acc.bwd_pkts.maximum
    f["Bwd Pkt Len Min"] = acc.bwd_pkts.minimum
    f["Bwd Pkt Len Mean"] = acc.bwd_pkts.mean
    f["Bwd Pkt Len Std"] = acc.bwd_pkts.std
    f["Flow Byts/s"] = total_payload / dur_s if dur_s > 0 else 0.0
    f["Flow Pkts/s"] = acc.total_packets / dur_s if dur_s > 0 else 0.0
    f.update(_iat_features(acc.flow_iat, "Flow IAT", with_total=False))
    f.update(_iat_features(acc.fwd_iat, "Fwd IAT", with_total=True))
    f.update(_iat_features(acc.bwd_iat, "Bwd IAT", with_total=True))
    f["Fwd PSH Flags"] = float(acc.fwd_psh)
    f["Bwd PSH Flags"] = float(acc.bwd_psh)
    f["Fwd URG Flags"] = float(acc.fwd_urg)
    f["Bwd URG Flags"] = float(acc.bwd_urg)
    f["Fwd Header Len"] = float(acc.fwd_header)
    f["Bwd Header Len"] = float(acc.bwd_header)
    f["Fwd Pkts/s"] = fwd_n / dur_s if dur_s > 0 else 0.0
    f["Bwd Pkts/s"] = bwd_n / dur_s if dur_s > 0 else 0.0
    f["Pkt Len Min"] = acc.all_pkts.minimum
    f["Pkt Len Max"] = acc.all_pkts.maximum
    f["Pkt Len Mean"] = acc.all_pkts.mean
    f["Pkt Len Std"] = acc.all_pkts.std
    f["Pkt Len Var"] = acc.all_pkts.var
    f["FIN Flag Cnt"] = float(acc.flag_counts[TCP_FIN])
    f["SYN Flag Cnt"] = float(acc.flag_counts[TCP_SYN])
    f["RST Flag Cnt"] = float(acc.flag_counts[TCP_RST])
    f["PSH Flag Cnt"] = float(acc.flag_counts[TCP_PSH])
    f["ACK Flag Cnt"] = float(acc.flag_counts[TCP_ACK])
    f["URG Flag Cnt"] = float(acc.flag_counts[TCP_URG])
    f["CWR Flag Cnt"] = float(acc.flag_counts[TCP_CWR])
    f["ECE Flag Cnt"] = float(acc.flag_counts[TCP_ECE])
    f["Down/Up Ratio"] = float(bwd_n // fwd_n) if fwd_n > 0 else 0.0
    f["Pkt Size Avg"] = total_payload / acc.total_packets if acc.total_packets else 0.0
    f["Fwd Seg Size Avg"] = acc.fwd_pkts.mean
    f["Bwd Seg Size Avg"] = acc.bwd_pkts.mean
    for name, bulk in (("Fwd", acc.fwd_bulk), ("Bwd", acc.bwd_bulk)):
        if bulk.bulk_count > 0:
            f[f"{name} Byts/b Avg"] = bulk.bulk_bytes / bulk.bulk_count
            f[f"{name} Pkts/b Avg"] = bulk.bulk_pkts / bulk.bulk_count
            dur_b = bulk.bulk_dur / 1e6
            f[f"{name} Blk Rate Avg"] = bulk.bulk_bytes / dur_b if dur_b > 0 else 0.0
        else:
            f[f"{name} Byts/b Avg"] = 0.0
            f[f"{name} Pkts/b Avg"] = 0.0
            f[f"{name} Blk Rate Avg"] = 0.0
    n_sub = 1 + acc.subflow_gaps
    f["Subflow Fwd Pkts"] = fwd_n / n_sub
    f["Subflow Fwd Byts"] = acc.fwd_pkts.s / n_sub
    f["Subflow Bwd Pkts"] = bwd_n / n_sub
    f["Subflow Bwd Byts"] = acc.bwd_pkts.s / n_sub
    f["Init Fwd Win Byts"] = float(acc.init_fwd_win)
    f["Init Bwd Win Byts"] = float(acc.init_bwd_win)
    f["Fwd Act Data Pkts"] = float(acc.fwd_act_data)
    f["Fwd Seg Size Min"] = float(acc.fwd_seg_min if acc.fwd_seg_min is not None else 0)
    active = _RunningStats()
    for v in acc.active_periods:
        active.add(float(v))
    idle = _RunningStats()
    for v in acc.idle_periods:
        idle.add(float(v))
    f["Active Mean"] = active.mean
    f["Active Std"] = active.std
    f["Active Max"] = active.maximum
    f["Active Min"] = active.minimum
    f["Idle Mean"] = idle.mean
    f["Idle Std"] = idle.std
    f["Idle Max"] = idle.maximum
    f["Idle Min"] = idle.minimum
    return f


class FlowMeter:
    """Single-writer flow table; one instance per capture stream."""

    def __init__(self, idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
                 activity_timeout_us: int = DEFAULT_ACTIVITY_TIMEOUT_US,
                 flow_cap_us: int = DEFAULT_FLOW_CAP_US,
                 label: str = ""):
        self.idle_timeout_us = idle_timeout_us
        self.activity_timeout_us = activity_timeout_us
        self.flow_cap_us = flow_cap_us
        self.label = label
        self._table: dict[tuple, FlowAccumulator] = {}
        self._next_id = 1
        self.packets_ingested = 0

    def flow_key_of(self, p: PacketSummary) -> tuple[FlowKey, str, bool]:
        """Resolve a packet against the active-flow table.

        Returns (key, direction, is_new); a new flow's forward endpoint is
        the packet's source.
        """
        tkey = _table_key_of(p)
        acc = self._table.get(tkey)
        if acc is None:
            key = FlowKey(p.src_ip, p.src_port, p.dst_ip, p.dst_port, p.protocol)
            return key, "fwd", True
        if (p.src_ip, p.src_port) == (acc.key.ip_a, acc.key.port_a):
            return acc.key, "fwd", False
        return acc.key, "bwd", False

    def ingest_packet(self, p: PacketSummary) -> list[FlowRecord]:
        """Feed one packet; returns any records finalized by this packet."""
        emitted: list[FlowRecord] = []
        self.packets_ingested += 1
        key, direction, is_new = self.flow_key_of(p)
        tkey = key.table_key()
        if not is_new:
            acc = self._table[tkey]
            if p.timestamp < acc.last_ts - CLOCK_TOLERANCE_US:
                raise ClockRegression(
                    f"packet at {p.timestamp} us is {acc.last_ts - p.timestamp} us behind flow "
                    f"{key}, beyond the {CLOCK_TOLERANCE_US} us tolerance")
            if (p.timestamp - acc.first_ts > self.flow_cap_us
                    or p.timestamp - acc.last_ts > self.idle_timeout_us):
                emitted.append(self._finalize(acc))
                del self._table[tkey]
                is_new = True
                key = FlowKey(p.src_ip, p.src_port, p.dst_ip, p.dst_port, p.protocol)
                tkey = key.table_key()
                direction = "fwd"
        if is_new:
            self._table[tkey] = FlowAccumulator(key, p)
            return emitted

        acc = self._table[tkey]
        ts = max(p.timestamp, acc.last_ts)
        if ts - acc.last_ts > SUBFLOW_GAP_US:
            acc.subflow_gaps += 1
        acc.update_activity(ts, self.activity_timeout_us)
        if p.tcp_flags & TCP_ACK:
            other = "bwd" if direction == "fwd" else "fwd"
            if acc.fin_seen[other]:
                acc.fin_acked[other] = True
        if p.tcp_flags & TCP_FIN:
            acc.fin_seen[direction] = True
        acc.update(p, direction)
        if p.tcp_flags & TCP_RST:
            acc.rst = True
        if acc.rst or (acc.fin_acked["fwd"] and acc.fin_acked["bwd"]):
            emitted.append(self._finalize(acc))
            del self._table[tkey]
        return emitted

    def expire_and_emit(self, now_us: int | None = None) -> list[FlowRecord]:
        """Flush idle flows (or everything at end of capture), by start time."""
        due = []
        for tkey, acc in self._table.items():
            if now_us is None or now_us - acc.last_ts > self.idle_timeout_us:
                due.append((acc.first_ts, tkey))
        due.sort(key=lambda item: (item[0], item[1]))
        records = []
        for _, tkey in due:
            records.append(self._finalize(self._table.pop(tkey)))
        return records

    def _finalize(self, acc: FlowAccumulator) -> FlowRecord:
        acc.close_activity()
        record = FlowRecord(
            flow_id=self._next_id,
            key=acc.key,
            start_ts=acc.first_ts,
            features=finalize_features(acc),
            label=self.label,
        )
        self._next_id += 1
        return record


def meter_packets(packets: Iterable[PacketSummary], meter: FlowMeter | None = None,
                  label: str = "") -> list[FlowRecord]:
    """Run a packet stream through a fresh meter and flush at the end."""
    m = meter or FlowMeter(label=label)
    records: list[FlowRecord] = []
    for p in packets:
        records.extend(m.ingest_packet(p))
    records.extend(m.expire_and_emit())
    return records


def meter_capture(path: str | Path, label: str = "",
                  meter: FlowMeter | None = None,
                  stats: DecodeStats | None = None) -> list[FlowRecord]:
    """Decode a capture file and meter it into flow records."""
    return meter_packets(iter_packets(path, stats=stats), meter=meter, label=label)


def write_flow_csv(path: str | Path, records: Iterable[FlowRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def read_flow_csv_rows(path: str | Path) -> Iterator[dict[str, str]]:
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            yield row
