"""Packet-header log parsing, TCP SYN filtering and IP geolocation.

Two paths over the same CSV format:

* a per-record path (:func:`parse_record`, :func:`filter_syn`) working on
  :class:`PacketRecord` / :class:`ProbeEvent` objects, and
* a columnar path (:func:`read_probe_batches`) that streams the file in chunks
  through pandas' C parser and yields :class:`ProbeBatch` arrays.

Both apply identical validation and filtering rules.
"""

from __future__ import annotations

import bisect
import csv
import enum
import io
import ipaddress
import itertools
import logging
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence, TextIO, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FIELDS = ("timestamp", "src_ip", "dst_ip", "src_port", "dst_port", "flags")
UNKNOWN_COUNTRY = "??"

PathOrFile = Union[str, os.PathLike, TextIO]


class TcpFlags(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


class SynPolicy(str, enum.Enum):
    """Which packets count as probes."""

    #: SYN set and ACK clear; drops SYN-ACK backscatter.
    SYN_ONLY = "syn-only"
    #: any packet with SYN set, including SYN-ACK.
    ANY_SYN = "any-syn"


class ParseError(ValueError):
    """Malformed input record."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True, slots=True)
class PacketRecord:
    timestamp: float
    src_ip: ipaddress.IPv4Address
    dst_ip: ipaddress.IPv4Address
    src_port: int
    dst_port: int
    tcp_flags: TcpFlags

    def to_line(self) -> str:
        """Serialize back to one canonical CSV line (no newline)."""
        return ",".join(
            (
                repr(float(self.timestamp)),
                str(self.src_ip),
                str(self.dst_ip),
                str(self.src_port),
                str(self.dst_port),
                str(int(self.tcp_flags)),
            )
        )


class ProbeEvent(NamedTuple):
    timestamp: float
    src_ip: ipaddress.IPv4Address
    dst_port: int


# ---------------------------------------------------------------------------
# per-record path
# ---------------------------------------------------------------------------


def _parse_ipv4(text: str, field: str, line: int | None) -> ipaddress.IPv4Address:
    text = text.strip()
    if ":" in text:
        raise ParseError(f"IPv6 address {text!r} not supported", line=line, field=field)
    try:
        return ipaddress.IPv4Address(text)
    except ValueError as exc:
        raise ParseError(f"invalid IPv4 address {text!r}", line=line, field=field) from exc


def _parse_int(text: str, field: str, line: int | None, lo: int, hi: int) -> int:
    try:
        value = int(text.strip())
    except ValueError as exc:
        raise ParseError(f"not an integer: {text!r}", line=line, field=field) from exc
    if not lo <= value <= hi:
        raise ParseError(f"{value} outside [{lo}, {hi}]", line=line, field=field)
    return value


def parse_record(line: str, lineno: int | None = None) -> PacketRecord:
    """Parse one CSV record ``timestamp,src_ip,dst_ip,src_port,dst_port,flags``.

    Raises :class:`ParseError` naming the line number and the offending
    field. Out-of-range ports and flag bytes are errors, never clamped.
    """
    parts = line.rstrip("\r\n").split(",")
    try:
        ts = float(parts[0])
    except ValueError as exc:
        raise ParseError(f"not a number: {parts[0]!r}", line=lineno, field="timestamp") from exc
    if not np.isfinite(ts) or ts <= 0:
        raise ParseError(f"timestamp must be positive, got {parts[0]!r}", line=lineno, field="timestamp")
    if len(parts) != len(FIELDS):
        missing = FIELDS[len(parts)] if len(parts) < len(FIELDS) else None
        raise ParseError(
            f"expected {len(FIELDS)} fields, got {len(parts)}", line=lineno, field=missing
        )
    return PacketRecord(
        timestamp=ts,
        src_ip=_parse_ipv4(parts[1], "src_ip", lineno),
        dst_ip=_parse_ipv4(parts[2], "dst_ip", lineno),
        src_port=_parse_int(parts[3], "src_port", lineno, 0, 65535),
        dst_port=_parse_int(parts[4], "dst_port", lineno, 0, 65535),
        tcp_flags=TcpFlags(_parse_int(parts[5], "flags", lineno, 0, 255)),
    )


def is_header(line: str) -> bool:
    """A header line is recognised by a non-numeric first field."""
    first = line.split(",", 1)[0].strip()
    try:
        float(first)
    except ValueError:
        return True
    return False


def iter_records(lines: Iterable[str]) -> Iterator[PacketRecord]:
    """Parse an iterable of CSV lines, skipping an optional header and blanks."""
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if lineno == 1 and is_header(line):
            continue
        yield parse_record(line, lineno)


def _syn_mask(flags: int | np.ndarray, policy: SynPolicy):
    syn = (flags & TcpFlags.SYN) != 0
    if SynPolicy(policy) is SynPolicy.ANY_SYN:
        return syn
    return syn & ((flags & TcpFlags.ACK) == 0)


def filter_syn(
    records: Iterable[PacketRecord], policy: SynPolicy | str = SynPolicy.SYN_ONLY
) -> Iterator[ProbeEvent]:
    """Keep probe packets and project them to ``(timestamp, src_ip, dst_port)``.

    Accepts :class:`ProbeEvent` input too (already filtered), which makes the
    filter idempotent.
    """
    policy = SynPolicy(policy)
    for rec in records:
        if isinstance(rec, ProbeEvent):
            yield rec
        elif _syn_mask(int(rec.tcp_flags), policy):
            yield ProbeEvent(rec.timestamp, rec.src_ip, rec.dst_port)


# ---------------------------------------------------------------------------
# columnar path
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeBatch:
    """Columnar block of probe events.

    ``src_ip`` holds IPv4 addresses as ``uint32``. Row order is input order.
    """

    timestamp: np.ndarray
    src_ip: np.ndarray
    dst_port: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamp", np.asarray(self.timestamp, dtype=np.float64))
        object.__setattr__(self, "src_ip", np.asarray(self.src_ip, dtype=np.uint32))
        object.__setattr__(self, "dst_port", np.asarray(self.dst_port, dtype=np.int64))
        n = len(self.timestamp)
        if len(self.src_ip) != n or len(self.dst_port) != n:
            raise ValueError("ProbeBatch columns must have equal length")

    def __len__(self) -> int:
        return len(self.timestamp)

    @classmethod
    def empty(cls) -> "ProbeBatch":
        return cls(np.empty(0), np.empty(0), np.empty(0))

    @classmethod
    def from_events(cls, events: Iterable[ProbeEvent]) -> "ProbeBatch":
        events = list(events)
        if not events:
            return cls.empty()
        ts, src, port = zip(*events)
        return cls(np.array(ts), np.array([int(s) for s in src], dtype=np.uint32), np.array(port))

    @classmethod
    def concat(cls, batches: Iterable["ProbeBatch"]) -> "ProbeBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty()
        return cls(
            np.concatenate([b.timestamp for b in batches]),
            np.concatenate([b.src_ip for b in batches]),
            np.concatenate([b.dst_port for b in batches]),
        )

    def take(self, index) -> "ProbeBatch":
        return ProbeBatch(self.timestamp[index], self.src_ip[index], self.dst_port[index])

    def events(self) -> Iterator[ProbeEvent]:
        for ts, src, port in zip(self.timestamp.tolist(), self.src_ip.tolist(), self.dst_port.tolist()):
            yield ProbeEvent(ts, ipaddress.IPv4Address(src), port)


def _open_text(source: PathOrFile) -> tuple[TextIO, bool]:
    if hasattr(source, "read"):
        return source, False
    return open(source, "r", newline=""), True


def _ips_to_u32(column: pd.Series, field: str, first_line: int) -> np.ndarray:
    codes, uniques = pd.factorize(column, use_na_sentinel=False)
    values = np.empty(len(uniques), dtype=np.uint32)
    for k, text in enumerate(uniques):
        if not isinstance(text, str):
            row = int(np.flatnonzero(codes == k)[0])
            raise ParseError("missing IPv4 address", line=first_line + row, field=field)
        try:
            values[k] = int(_parse_ipv4(text, field, None))
        except ParseError as exc:
            row = int(np.flatnonzero(codes == k)[0])
            raise ParseError(str(exc).split(": ", 1)[-1], line=first_line + row, field=field) from None
    return values[codes]


def _check_range(values: np.ndarray, field: str, lo: float, hi: float, first_line: int) -> None:
    bad = np.flatnonzero((values < lo) | (values > hi) | np.isnan(values.astype(np.float64)))
    if len(bad):
        row = int(bad[0])
        raise ParseError(f"{values[row]} outside [{lo}, {hi}]", line=first_line + row, field=field)


_DTYPES = {
    "timestamp": np.float64,
    "src_ip": object,
    "dst_ip": object,
    "src_port": np.int64,
    "dst_port": np.int64,
    "flags": np.int64,
}


def read_probe_batches(
    source: PathOrFile,
    policy: SynPolicy | str = SynPolicy.SYN_ONLY,
    chunksize: int = 1 << 20,
) -> Iterator[ProbeBatch]:
    """Stream a packet-header CSV as filtered :class:`ProbeBatch` chunks.

    Memory use is bounded by ``chunksize``. Any malformed row raises
    :class:`ParseError` with the same line/field the per-record parser would
    report.
    """
    policy = SynPolicy(policy)
    fh, owned = _open_text(source)
    try:
        first = fh.readline()
        if not first:
            return
        header = is_header(first)
        body_start = 2 if header else 1
        if header:
            stream = fh
        else:
            stream = itertools.chain([first], fh)
            stream = _LineReader(stream)
        # numeric dtypes let the C parser convert; on failure the chunk is
        # re-scanned line by line to report the exact location
        line = body_start
        for raw in _raw_chunks(stream, chunksize):
            try:
                frame = pd.read_csv(
                    io.StringIO(raw),
                    header=None,
                    names=list(FIELDS),
                    dtype=_DTYPES,
                    engine="c",
                    skip_blank_lines=True,
                )
                batch = _frame_to_batch(frame, policy, line, raw)
            except ParseError:
                raise
            except (ValueError, TypeError, pd.errors.ParserError):
                _locate_error(raw, line)
                raise
            line += raw.count("\n")
            if len(batch):
                yield batch
    finally:
        if owned:
            fh.close()


class _LineReader:
    """Minimal file-like wrapper over an iterator of lines."""

    def __init__(self, lines: Iterable[str]):
        self._it = iter(lines)

    def __iter__(self):
        return self._it

    def readlines(self, hint: int = -1) -> list[str]:
        out: list[str] = []
        size = 0
        for ln in self._it:
            out.append(ln)
            size += len(ln)
            if 0 < hint <= size:
                break
        return out


def _raw_chunks(stream, chunksize: int) -> Iterator[str]:
    # roughly chunksize lines per chunk; assumes ~50 bytes per record
    hint = max(chunksize * 50, 1 << 16)
    while True:
        lines = stream.readlines(hint)
        if not lines:
            return
        if not lines[-1].endswith("\n"):
            lines[-1] += "\n"
        yield "".join(lines)


def _locate_error(raw: str, first_line: int) -> None:
    for offset, text in enumerate(raw.splitlines()):
        if text.strip():
            parse_record(text, first_line + offset)


def _frame_to_batch(frame: pd.DataFrame, policy: SynPolicy, first_line: int, raw: str) -> ProbeBatch:
    if len(frame) and frame.isna().to_numpy().any():
        _locate_error(raw, first_line)
    if raw.count("\n") != len(frame):
        # blank lines were skipped by pandas; fall back to exact line mapping
        _locate_error(raw, first_line)
        lines = [ln for ln in raw.splitlines()]
        keep = [i for i, ln in enumerate(lines) if ln.strip()]
        line_of = np.asarray(keep) + first_line
    else:
        line_of = None

    ts = frame["timestamp"].to_numpy(np.float64)
    bad = np.flatnonzero(~(ts > 0) | ~np.isfinite(ts))
    if len(bad):
        _raise_at(raw, first_line, line_of, int(bad[0]))
    for field, hi in (("src_port", 65535), ("dst_port", 65535), ("flags", 255)):
        col = frame[field].to_numpy(np.int64)
        bad = np.flatnonzero((col < 0) | (col > hi))
        if len(bad):
            _raise_at(raw, first_line, line_of, int(bad[0]))
    flags = frame["flags"].to_numpy(np.int64)
    mask = _syn_mask(flags, policy)
    try:
        src = _ips_to_u32(frame["src_ip"], "src_ip", first_line)
        _ips_to_u32(frame["dst_ip"], "dst_ip", first_line)
    except ParseError:
        _locate_error(raw, first_line)
        raise
    return ProbeBatch(ts[mask], src[mask], frame["dst_port"].to_numpy(np.int64)[mask])


def _raise_at(raw: str, first_line: int, line_of, row: int) -> None:
    lines = [ln for ln in raw.splitlines() if ln.strip()] if line_of is not None else raw.splitlines()
    lineno = int(line_of[row]) if line_of is not None else first_line + row
    parse_record(lines[row], lineno)
    raise AssertionError("row flagged invalid but parsed cleanly")  # pragma: no cover


def read_events(source: PathOrFile, policy: SynPolicy | str = SynPolicy.SYN_ONLY) -> ProbeBatch:
    """Load a whole packet log into one :class:`ProbeBatch`."""
    return ProbeBatch.concat(read_probe_batches(source, policy))


def write_records(records: Iterable[PacketRecord], dest: PathOrFile, header: bool = True) -> int:
    fh, owned = (dest, False) if hasattr(dest, "write") else (open(dest, "w", newline=""), True)
    n = 0
    try:
        if header:
            fh.write(",".join(FIELDS) + "\n")
        for rec in records:
            fh.write(rec.to_line() + "\n")
            n += 1
    finally:
        if owned:
            fh.close()
    return n


def write_probe_log(batch: ProbeBatch, dest: PathOrFile, dst_ip: str = "192.0.2.1") -> None:
    """Write probe events as a canonical packet log (pure SYN, fixed source port).

    Vectorised; used by the synthetic generators to emit large corpora.
    """
    ip = batch.src_ip.astype(np.uint64)
    dotted = pd.Series(
        (ip >> 24).astype(str), dtype=object
    ) + "." + pd.Series(((ip >> 16) & 255).astype(str), dtype=object) + "." + pd.Series(
        ((ip >> 8) & 255).astype(str), dtype=object
    ) + "." + pd.Series((ip & 255).astype(str), dtype=object)
    frame = pd.DataFrame(
        {
            "timestamp": batch.timestamp,
            "src_ip": dotted,
            "dst_ip": dst_ip,
            "src_port": 40000,
            "dst_port": batch.dst_port,
            "flags": int(TcpFlags.SYN),
        }
    )
    frame.to_csv(dest, index=False, float_format="%.6f", lineterminator="\n")


# ---------------------------------------------------------------------------
# geolocation
# ---------------------------------------------------------------------------


def _ip_bound(text: str) -> int:
    text = text.strip()
    if text.isdigit():
        value = int(text)
        if value > 0xFFFFFFFF:
            raise ValueError(f"IPv4 bound out of range: {text}")
        return value
    return int(ipaddress.IPv4Address(text))


class GeoDb:
    """Sorted, non-overlapping IPv4 ranges mapped to country codes."""

    def __init__(self, ranges: Sequence[tuple[int, int, str]]):
        ranges = sorted((int(a), int(b), str(c)) for a, b, c in ranges)
        prev_end = -1
        for start, end, _ in ranges:
            if start > end:
                raise ValueError(f"range start {start} > end {end}")
            if start <= prev_end:
                raise ValueError(f"overlapping range starting at {start}")
            prev_end = end
        self.ranges = ranges
        self.starts = np.array([r[0] for r in ranges], dtype=np.int64)
        self.ends = np.array([r[1] for r in ranges], dtype=np.int64)
        self.codes = np.array([r[2] for r in ranges] + [UNKNOWN_COUNTRY], dtype=object)
        self._start_list = [r[0] for r in ranges]

    def __len__(self) -> int:
        return len(self.ranges)

    @classmethod
    def load(cls, source: PathOrFile) -> "GeoDb":
        """Read a ``range_start,range_end,country`` CSV (dotted-quad or u32 bounds)."""
        fh, owned = _open_text(source)
        try:
            rows = []
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or not "".join(row).strip():
                    continue
                if lineno == 1 and not row[0].strip().replace(".", "").isdigit():
                    continue
                if len(row) != 3:
                    raise ParseError("expected range_start,range_end,country", line=lineno)
                try:
                    rows.append((_ip_bound(row[0]), _ip_bound(row[1]), row[2].strip()))
                except ValueError as exc:
                    raise ParseError(str(exc), line=lineno) from exc
        finally:
            if owned:
                fh.close()
        return cls(rows)

    def lookup_many(self, ips: np.ndarray) -> np.ndarray:
        """Vectorised :func:`geolocate` over ``uint32`` addresses."""
        ips = np.asarray(ips, dtype=np.int64)
        idx = np.searchsorted(self.starts, ips, side="right") - 1
        hit = idx >= 0
        hit[hit] &= ips[hit] <= self.ends[idx[hit]]
        return self.codes[np.where(hit, idx, -1)]


def geolocate(ip: ipaddress.IPv4Address | int | str, db: GeoDb) -> str:
    """Country code for ``ip``, or ``"??"`` when no range contains it."""
    value = int(ipaddress.IPv4Address(ip)) if not isinstance(ip, int) else ip
    k = bisect.bisect_right(db._start_list, value) - 1
    if k >= 0 and value <= db.ranges[k][1]:
        return db.ranges[k][2]
    return UNKNOWN_COUNTRY
