"""Exploratory statistics over probe events.

Everything is computed from a :class:`TrafficStats` fold, which can be fed
batch by batch and merged across workers. The public functions accept any of
an iterable of :class:`~darkprobe.ingest.ProbeEvent`, a
:class:`~darkprobe.ingest.ProbeBatch` or an already built ``TrafficStats``.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from ._fold import KeyCounts
from .ingest import UNKNOWN_COUNTRY, GeoDb, ProbeBatch, ProbeEvent

SECONDS_PER_DAY = 86400.0
DEFAULT_PROBER_THRESHOLD = 150.0
COVERAGE_THRESHOLDS = (0.8, 0.9)


class RankEntry(NamedTuple):
    key: Union[int, str]
    count: int
    share: float


@dataclass
class Ranking:
    """Keys ordered by count descending, ties by ascending key.

    ``total`` is the count over all keys, so shares of a truncated view still
    refer to the full population.
    """

    entries: list[RankEntry]
    total: int
    key_name: str = "port"

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, item):
        return self.entries[item]

    def top(self, k: int | None) -> "Ranking":
        if k is None:
            return self
        return Ranking(self.entries[:k], self.total, self.key_name)

    def keys(self) -> list:
        return [e.key for e in self.entries]

    def as_dict(self) -> dict:
        return {e.key: e.count for e in self.entries}

    def to_csv(self) -> str:
        lines = [f"{self.key_name},count,share"]
        lines += [f"{e.key},{e.count},{e.share!r}" for e in self.entries]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        rows = [{self.key_name: e.key, "count": e.count, "share": e.share} for e in self.entries]
        return json.dumps({"total": self.total, "entries": rows}, indent=1)


PortRanking = Ranking


@dataclass
class CoverageCurve:
    """Cumulative share reached by the first ``n`` items."""

    points: list[tuple[int, float]]
    thresholds: dict[float, int] = field(default_factory=dict)

    def at(self, n: int) -> float:
        if not self.points:
            return 0.0
        n = min(n, self.points[-1][0])
        return self.points[n - 1][1] if n >= 1 else 0.0

    def to_csv(self, x_name: str = "n_ports", y_name: str = "cumulative_share") -> str:
        lines = [f"{x_name},{y_name}"] + [f"{n},{s!r}" for n, s in self.points]
        return "\n".join(lines) + "\n"


@dataclass
class ProberProfile:
    src_ip: ipaddress.IPv4Address
    total_syn: int
    active_span_days: float
    mean_daily_rate: float
    port_counts: dict[int, int]


def rank_counts(keys: Sequence, counts: Sequence[int], key_name: str = "port") -> Ranking:
    """Build a :class:`Ranking` from parallel key/count sequences."""
    keys = list(keys)
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if not keys or total == 0:
        return Ranking([], 0, key_name)
    order = sorted(range(len(keys)), key=lambda i: (-counts[i], keys[i]))
    entries = [
        RankEntry(keys[i], int(counts[i]), int(counts[i]) / total) for i in order if counts[i] > 0
    ]
    return Ranking(entries, total, key_name)


def _port_ranking(port_counts: np.ndarray) -> Ranking:
    ports = np.flatnonzero(port_counts)
    counts = port_counts[ports]
    total = int(counts.sum())
    if total == 0:
        return Ranking([], 0, "port")
    order = np.lexsort((ports, -counts))
    entries = [
        RankEntry(int(p), int(c), int(c) / total)
        for p, c in zip(ports[order].tolist(), counts[order].tolist())
    ]
    return Ranking(entries, total, "port")


class TrafficStats:
    """Streaming fold of per-port, per-prober and per-(prober, port) counts."""

    def __init__(self):
        self.port_counts = np.zeros(65536, dtype=np.int64)
        self.ip_counts = KeyCounts()
        self.ip_port_counts = KeyCounts()
        self._ext_keys: list[np.ndarray] = []
        self._ext_min: list[np.ndarray] = []
        self._ext_max: list[np.ndarray] = []
        self.n_events = 0
        self.t_min = np.inf
        self.t_max = -np.inf

    @classmethod
    def of(cls, events) -> "TrafficStats":
        if isinstance(events, TrafficStats):
            return events
        stats = cls()
        if isinstance(events, ProbeBatch):
            stats.add(events)
        else:
            for batch in _batched(events):
                stats.add(batch)
        return stats

    def add(self, batch: ProbeBatch) -> "TrafficStats":
        if not len(batch):
            return self
        self.port_counts += np.bincount(batch.dst_port, minlength=65536)
        src = batch.src_ip.astype(np.uint64)
        self.ip_counts.add(src)
        self.ip_port_counts.add((src << np.uint64(16)) | batch.dst_port.astype(np.uint64))
        self.n_events += len(batch)
        self.t_min = min(self.t_min, float(batch.timestamp.min()))
        self.t_max = max(self.t_max, float(batch.timestamp.max()))
        order = np.argsort(src, kind="stable")
        keys, starts = np.unique(src[order], return_index=True)
        ts = batch.timestamp[order]
        self._ext_keys.append(keys)
        self._ext_min.append(np.minimum.reduceat(ts, starts))
        self._ext_max.append(np.maximum.reduceat(ts, starts))
        return self

    def merge(self, other: "TrafficStats") -> "TrafficStats":
        out = TrafficStats()
        out.port_counts = self.port_counts + other.port_counts
        out.ip_counts = self.ip_counts.merge(other.ip_counts)
        out.ip_port_counts = self.ip_port_counts.merge(other.ip_port_counts)
        out._ext_keys = self._ext_keys + other._ext_keys
        out._ext_min = self._ext_min + other._ext_min
        out._ext_max = self._ext_max + other._ext_max
        out.n_events = self.n_events + other.n_events
        out.t_min = min(self.t_min, other.t_min)
        out.t_max = max(self.t_max, other.t_max)
        return out

    def ip_extents(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per source IP: sorted keys, first and last timestamp."""
        if not self._ext_keys:
            e = np.empty(0)
            return e.astype(np.uint64), e, e
        keys = np.concatenate(self._ext_keys)
        lo = np.concatenate(self._ext_min)
        hi = np.concatenate(self._ext_max)
        order = np.argsort(keys, kind="stable")
        keys, lo, hi = keys[order], lo[order], hi[order]
        uniq, starts = np.unique(keys, return_index=True)
        lo = np.minimum.reduceat(lo, starts)
        hi = np.maximum.reduceat(hi, starts)
        self._ext_keys, self._ext_min, self._ext_max = [uniq], [lo], [hi]
        return uniq, lo, hi

    @property
    def capture_span_days(self) -> float:
        if self.n_events == 0:
            return 0.0
        return (self.t_max - self.t_min) / SECONDS_PER_DAY


def _batched(events: Iterable[ProbeEvent], size: int = 1 << 16):
    chunk: list[ProbeEvent] = []
    for ev in events:
        chunk.append(ev)
        if len(chunk) >= size:
            yield ProbeBatch.from_events(chunk)
            chunk = []
    if chunk:
        yield ProbeBatch.from_events(chunk)


def traffic_by_port(events) -> Ranking:
    """Rank destination ports by SYN count; empty input gives an empty ranking."""
    return _port_ranking(TrafficStats.of(events).port_counts)


def cumulative_coverage(
    ranking: Ranking, thresholds: Sequence[float] = COVERAGE_THRESHOLDS
) -> CoverageCurve:
    """Cumulative traffic share of the ``n`` most targeted keys.

    Prefix sums run over integer counts, so the last point is exactly 1 and
    threshold crossings do not depend on float accumulation order.
    """
    if not ranking.entries:
        return CoverageCurve([], {t: 0 for t in thresholds})
    counts = np.array([e.count for e in ranking.entries], dtype=np.int64)
    cum = np.cumsum(counts) / ranking.total
    points = [(i + 1, float(c)) for i, c in enumerate(cum)]
    found = {}
    for t in thresholds:
        k = int(np.searchsorted(cum, t, side="left"))
        found[t] = k + 1 if k < len(cum) else 0
    return CoverageCurve(points, found)


def _span_days(seconds: np.ndarray | float) -> np.ndarray | float:
    # averages over less than one day are taken per one day
    return np.maximum(np.asarray(seconds) / SECONDS_PER_DAY, 1.0)


def top_probers(
    events,
    threshold: float = DEFAULT_PROBER_THRESHOLD,
    rate_span: str = "capture",
) -> list[ProberProfile]:
    """Source IPs whose average SYN rate exceeds ``threshold`` per day.

    ``rate_span="capture"`` divides each prober's total by the whole capture
    span (first to last event in the data set); ``"active"`` uses the
    prober's own first-to-last span instead.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if rate_span not in ("capture", "active"):
        raise ValueError(f"rate_span must be 'capture' or 'active', got {rate_span!r}")
    stats = TrafficStats.of(events)
    if stats.n_events == 0:
        return []
    ips, totals = stats.ip_counts.items()
    ext_keys, first, last = stats.ip_extents()
    active_days = (last - first) / SECONDS_PER_DAY
    if rate_span == "capture":
        rate = totals / _span_days(stats.t_max - stats.t_min)
    else:
        rate = totals / _span_days(last - first)
    chosen = np.flatnonzero(rate > threshold)
    if not len(chosen):
        return []

    pair_keys, pair_counts = stats.ip_port_counts.items()
    pair_ip = pair_keys >> np.uint64(16)
    pair_port = (pair_keys & np.uint64(0xFFFF)).astype(np.int64)
    lo = np.searchsorted(pair_ip, ips[chosen], side="left")
    hi = np.searchsorted(pair_ip, ips[chosen], side="right")

    profiles = []
    for k, i in enumerate(chosen):
        ports = pair_port[lo[k] : hi[k]].tolist()
        counts = pair_counts[lo[k] : hi[k]].tolist()
        profiles.append(
            ProberProfile(
                src_ip=ipaddress.IPv4Address(int(ips[i])),
                total_syn=int(totals[i]),
                active_span_days=float(active_days[i]),
                mean_daily_rate=float(rate[i]),
                port_counts=dict(zip(ports, counts)),
            )
        )
    profiles.sort(key=lambda p: (-p.total_syn, int(p.src_ip)))
    return profiles


def port_profile_of(probers: Iterable[ProberProfile]) -> Ranking:
    """Port ranking over the union of the probers' traffic."""
    counts = np.zeros(65536, dtype=np.int64)
    for prober in probers:
        for port, c in prober.port_counts.items():
            counts[port] += c
    return _port_ranking(counts)


def traffic_by_country(events, db: GeoDb) -> Ranking:
    """Rank country codes by SYN count; unmatched sources fall under ``"??"``."""
    stats = TrafficStats.of(events)
    ips, counts = stats.ip_counts.items()
    if not len(ips):
        return Ranking([], 0, "country")
    codes = db.lookup_many(ips)
    per_code: dict[str, int] = {}
    for code, c in zip(codes.tolist(), counts.tolist()):
        per_code[code] = per_code.get(code, 0) + c
    return rank_counts(list(per_code), list(per_code.values()), key_name="country")


def probers_to_csv(probers: Sequence[ProberProfile]) -> str:
    lines = ["src_ip,total_syn,active_span_days,mean_daily_rate,n_ports,top_port"]
    for p in probers:
        top = min(p.port_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0] if p.port_counts else ""
        lines.append(
            f"{p.src_ip},{p.total_syn},{p.active_span_days!r},{p.mean_daily_rate!r},"
            f"{len(p.port_counts)},{top}"
        )
    return "\n".join(lines) + "\n"


__all__ = [
    "COVERAGE_THRESHOLDS",
    "DEFAULT_PROBER_THRESHOLD",
    "CoverageCurve",
    "PortRanking",
    "ProberProfile",
    "RankEntry",
    "Ranking",
    "TrafficStats",
    "UNKNOWN_COUNTRY",
    "cumulative_coverage",
    "port_profile_of",
    "probers_to_csv",
    "rank_counts",
    "top_probers",
    "traffic_by_country",
    "traffic_by_port",
]
