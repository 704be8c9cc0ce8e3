"""Per-port probing-rate series at fixed time resolutions."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from ._fold import KeyCounts
from .ingest import PathOrFile, ProbeBatch, ProbeEvent

RESOLUTIONS = {"1h": 3600, "3h": 10800, "6h": 21600, "12h": 43200, "24h": 86400}
_ALIASES = {"1d": 86400, "day": 86400, "hour": 3600}


def parse_resolution(value: str | int) -> int:
    """Resolution in seconds from ``"3h"``, ``"1d"`` or a plain integer."""
    if isinstance(value, (int, np.integer)):
        seconds = int(value)
    else:
        text = str(value).strip().lower()
        if text in RESOLUTIONS:
            seconds = RESOLUTIONS[text]
        elif text in _ALIASES:
            seconds = _ALIASES[text]
        elif text.isdigit():
            seconds = int(text)
        else:
            raise ValueError(f"unknown resolution {value!r}")
    if seconds <= 0:
        raise ValueError("resolution must be positive")
    return seconds


def resolution_name(seconds: int) -> str:
    for name, s in RESOLUTIONS.items():
        if s == seconds:
            return name
    return f"{seconds}s"


@dataclass(frozen=True)
class RateSeries:
    dst_port: int
    resolution: int
    origin: float
    values: np.ndarray


@dataclass(frozen=True)
class RateMatrix:
    """Aligned probing-rate series, one column per port.

    Row ``t`` covers ``[origin + t*resolution, origin + (t+1)*resolution)``.
    ``last_bucket_partial`` marks a final bucket that may be cut short by the
    end of the capture.
    """

    ports: list[int]
    resolution: int
    origin: float
    values: np.ndarray
    last_bucket_partial: bool = False

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] != len(self.ports):
            raise ValueError(f"values shape {values.shape} does not match {len(self.ports)} ports")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ports", [int(p) for p in self.ports])

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def bucket_starts(self) -> np.ndarray:
        return self.origin + self.resolution * np.arange(len(self))

    def column(self, port: int) -> int:
        try:
            return self.ports.index(int(port))
        except ValueError:
            raise KeyError(f"port {port} not in matrix") from None

    def series(self, port: int) -> RateSeries:
        return RateSeries(port, self.resolution, self.origin, self.values[:, self.column(port)])

    def drop_partial(self) -> "RateMatrix":
        if not self.last_bucket_partial or not len(self):
            return self
        return replace(self, values=self.values[:-1], last_bucket_partial=False)

    def to_csv(self) -> str:
        starts = self.bucket_starts
        frame = pd.DataFrame(self.values, columns=[f"port_{p}" for p in self.ports])
        integral = np.all(starts == np.floor(starts))
        frame.insert(0, "bucket_start", starts.astype(np.int64) if integral else starts)
        buf = io.StringIO()
        frame.to_csv(buf, index=False, lineterminator="\n", float_format="%.17g")
        return buf.getvalue()


def read_series_csv(source: PathOrFile, resolution: int | str | None = None) -> RateMatrix:
    """Load a series store written by :meth:`RateMatrix.to_csv`."""
    frame = pd.read_csv(source)
    if frame.columns[0] != "bucket_start":
        raise ValueError("series CSV must start with a bucket_start column")
    ports = []
    for name in frame.columns[1:]:
        if not name.startswith("port_"):
            raise ValueError(f"unexpected column {name!r}")
        ports.append(int(name[5:]))
    starts = frame["bucket_start"].to_numpy(np.float64)
    if resolution is None:
        if len(starts) < 2:
            raise ValueError("cannot infer resolution from fewer than 2 rows")
        step = np.diff(starts)
        if not np.all(step == step[0]):
            raise ValueError("bucket_start is not evenly spaced")
        resolution = int(step[0])
    values = frame.iloc[:, 1:].to_numpy()
    origin = float(starts[0]) if len(starts) else 0.0
    return RateMatrix(ports, parse_resolution(resolution), origin, values)


class SeriesAccumulator:
    """Mergeable fold of (bucket, port) counts for a fixed port list."""

    def __init__(self, resolution: int | str, ports: Sequence[int]):
        self.resolution = parse_resolution(resolution)
        self.ports = [int(p) for p in ports]
        if not self.ports:
            raise ValueError("ports must be non-empty")
        self._lookup = np.full(65536, -1, dtype=np.int64)
        self._lookup[np.asarray(self.ports)] = np.arange(len(self.ports))
        self._counts = KeyCounts()
        self.t_min = math.inf
        self.t_max = -math.inf

    def add(self, batch: ProbeBatch) -> "SeriesAccumulator":
        if not len(batch):
            return self
        self.t_min = min(self.t_min, float(batch.timestamp.min()))
        self.t_max = max(self.t_max, float(batch.timestamp.max()))
        col = self._lookup[batch.dst_port]
        keep = col >= 0
        # float floor_divide is exact (fmod based)
        bucket = np.floor_divide(batch.timestamp[keep], self.resolution).astype(np.int64)
        if len(bucket) and bucket.min() < 0:
            raise ValueError("timestamps before the epoch are not supported")
        k = len(self.ports)
        self._counts.add(bucket.astype(np.uint64) * np.uint64(k) + col[keep].astype(np.uint64))
        return self

    def merge(self, other: "SeriesAccumulator") -> "SeriesAccumulator":
        if other.resolution != self.resolution or other.ports != self.ports:
            raise ValueError("cannot merge accumulators with different layout")
        out = SeriesAccumulator(self.resolution, self.ports)
        out._counts = self._counts.merge(other._counts)
        out.t_min = min(self.t_min, other.t_min)
        out.t_max = max(self.t_max, other.t_max)
        return out

    def finalize(self, origin: float | None = None, end: float | None = None) -> RateMatrix:
        res = self.resolution
        k = len(self.ports)
        if origin is None:
            if self.t_min == math.inf:
                return RateMatrix(self.ports, res, 0.0, np.zeros((0, k), dtype=np.int64))
            origin = (self.t_min // res) * res
        elif origin % res:
            raise ValueError("origin must lie on a resolution boundary")
        first = int(origin // res)
        if end is None:
            if self.t_max == -math.inf:
                n = 0
            else:
                n = int(self.t_max // res) - first + 1
            partial = True
        else:
            n = max(0, math.ceil((end - origin) / res))
            partial = origin + n * res > end
        keys, counts = self._counts.items()
        bucket = (keys // np.uint64(k)).astype(np.int64) - first
        col = (keys % np.uint64(k)).astype(np.int64)
        inside = (bucket >= 0) & (bucket < n)
        values = np.zeros((n, k), dtype=np.int64)
        np.add.at(values, (bucket[inside], col[inside]), counts[inside])
        return RateMatrix(self.ports, res, float(origin), values, partial)


def bucketize(
    events: Iterable[ProbeEvent] | ProbeBatch | Iterable[ProbeBatch],
    resolution: int | str,
    ports: Sequence[int],
    origin: float | None = None,
    end: float | None = None,
) -> RateMatrix:
    """Count SYNs per (time bucket, port).

    The origin defaults to the earliest timestamp floored to a whole
    resolution boundary (UTC, since epoch seconds are UTC aligned). Without
    ``end`` the series stops at the bucket holding the last event and that
    bucket is flagged partial; with ``end`` it covers ``[origin, end)``.
    Buckets without events are zero.
    """
    acc = SeriesAccumulator(resolution, ports)
    if isinstance(events, ProbeBatch):
        acc.add(events)
    else:
        events = list(events)
        if events and isinstance(events[0], ProbeBatch):
            for b in events:
                acc.add(b)
        else:
            acc.add(ProbeBatch.from_events(events))
    return acc.finalize(origin, end)


def resample(m: RateMatrix, coarser: int | str) -> RateMatrix:
    """Sum fine buckets into a coarser resolution aligned to its own boundaries."""
    coarser = parse_resolution(coarser)
    if coarser % m.resolution:
        raise ValueError(f"{coarser}s is not a multiple of {m.resolution}s")
    factor = coarser // m.resolution
    if factor == 1:
        return m
    new_origin = (m.origin // coarser) * coarser
    lead = int(round((m.origin - new_origin) / m.resolution))
    n_fine = len(m) + lead
    n_coarse = -(-n_fine // factor)
    trail = n_coarse * factor - n_fine
    k = len(m.ports)
    padded = np.concatenate(
        [np.zeros((lead, k), m.values.dtype), m.values, np.zeros((trail, k), m.values.dtype)]
    )
    values = padded.reshape(n_coarse, factor, k).sum(axis=1)
    return RateMatrix(m.ports, coarser, float(new_origin), values, m.last_bucket_partial or trail > 0)
