import io
import ipaddress

import numpy as np
import pytest
from hypothesis import given, strategies as st

from darkprobe.ingest import (
    GeoDb,
    PacketRecord,
    ParseError,
    ProbeBatch,
    ProbeEvent,
    SynPolicy,
    TcpFlags,
    filter_syn,
    geolocate,
    iter_records,
    parse_record,
    read_events,
    read_probe_batches,
    write_records,
)


def test_parse_syn():
    rec = parse_record("1415836800.25,203.0.113.7,192.0.2.10,44321,23,2")
    assert rec.timestamp == 1415836800.25
    assert rec.src_ip == ipaddress.IPv4Address("203.0.113.7")
    assert rec.dst_port == 23
    assert rec.tcp_flags == TcpFlags.SYN


def test_parse_syn_ack():
    rec = parse_record("1415836800.25,203.0.113.7,192.0.2.10,44321,23,18")
    assert rec.tcp_flags == TcpFlags.SYN | TcpFlags.ACK


def test_parse_garbage_names_timestamp():
    with pytest.raises(ParseError) as err:
        parse_record("x,y,z", 7)
    assert err.value.field == "timestamp"
    assert err.value.line == 7


@pytest.mark.parametrize(
    "line, field",
    [
        ("1.5,203.0.113.7,192.0.2.10,44321,70000,2", "dst_port"),
        ("1.5,203.0.113.7,192.0.2.10,-1,23,2", "src_port"),
        ("1.5,203.0.113.7,192.0.2.10,1,23,256", "flags"),
        ("1.5,2001:db8::1,192.0.2.10,1,23,2", "src_ip"),
        ("1.5,203.0.113.7,300.0.0.1,1,23,2", "dst_ip"),
        ("0,203.0.113.7,192.0.2.10,1,23,2", "timestamp"),
        ("1.5,203.0.113.7,192.0.2.10,1,23", "flags"),
    ],
)
def test_parse_errors(line, field):
    with pytest.raises(ParseError) as err:
        parse_record(line, 3)
    assert err.value.field == field


def _record(ts=1.0, flags=2, port=23, src="203.0.113.7"):
    return PacketRecord(ts, ipaddress.IPv4Address(src), ipaddress.IPv4Address("192.0.2.1"), 1234, port, TcpFlags(flags))


def test_filter_syn_only_pure_syn():
    recs = [_record(flags=2), _record(flags=18), _record(flags=4)]
    assert list(filter_syn(recs)) == [ProbeEvent(1.0, ipaddress.IPv4Address("203.0.113.7"), 23)]


def test_filter_syn_any_policy_keeps_syn_ack():
    recs = [_record(flags=2), _record(flags=18), _record(flags=4)]
    assert len(list(filter_syn(recs, SynPolicy.ANY_SYN))) == 2


def test_filter_syn_empty():
    assert list(filter_syn([])) == []


def test_filter_syn_random_flags_against_bit_check():
    rng = np.random.default_rng(11)
    flags = rng.integers(0, 256, 1000)
    recs = [_record(ts=float(i + 1), flags=int(f)) for i, f in enumerate(flags)]
    expected = sum(1 for f in flags if (f >> 1) & 1 and not (f >> 4) & 1)
    out = list(filter_syn(recs))
    assert len(out) == expected
    assert [e.timestamp for e in out] == sorted(e.timestamp for e in out)
    assert list(filter_syn(out)) == out


ipv4 = st.integers(0, 2**32 - 1).map(ipaddress.IPv4Address)
records = st.builds(
    PacketRecord,
    timestamp=st.floats(1e-3, 4e9, allow_nan=False, allow_infinity=False),
    src_ip=ipv4,
    dst_ip=ipv4,
    src_port=st.integers(0, 65535),
    dst_port=st.integers(0, 65535),
    tcp_flags=st.integers(0, 255).map(TcpFlags),
)


@given(records)
def test_roundtrip(rec):
    assert parse_record(rec.to_line()) == rec


@given(st.lists(records, max_size=30))
def test_filter_idempotent(recs):
    once = list(filter_syn(recs))
    assert list(filter_syn(once)) == once


def _log(records, header=True):
    buf = io.StringIO()
    write_records(records, buf, header=header)
    return buf.getvalue()


@pytest.mark.parametrize("header", [True, False])
def test_batch_reader_matches_record_path(header):
    rng = np.random.default_rng(5)
    recs = [
        _record(ts=1e9 + i, flags=int(rng.integers(0, 256)), port=int(rng.integers(0, 65536)),
                src=str(ipaddress.IPv4Address(int(rng.integers(0, 2**32)))))
        for i in range(3000)
    ]
    text = _log(recs, header)
    expected = list(filter_syn(iter_records(text.splitlines(True))))
    got = list(ProbeBatch.concat(read_probe_batches(io.StringIO(text), chunksize=500)).events())
    assert got == expected


def test_batch_reader_reports_line_and_field():
    recs = [_record(ts=float(i + 1)) for i in range(50)]
    lines = _log(recs).splitlines(True)
    lines[31] = "32.0,203.0.113.7,192.0.2.1,1234,99999,2\n"
    with pytest.raises(ParseError) as err:
        read_events(io.StringIO("".join(lines)))
    assert err.value.line == 32
    assert err.value.field == "dst_port"


def test_batch_reader_bad_ip_line():
    lines = _log([_record(ts=float(i + 1)) for i in range(10)]).splitlines(True)
    lines[5] = "5.0,10.0.0.256,192.0.2.1,1234,80,2\n"
    with pytest.raises(ParseError) as err:
        read_events(io.StringIO("".join(lines)))
    assert (err.value.line, err.value.field) == (6, "src_ip")


def test_batch_reader_non_numeric_timestamp_mid_file():
    lines = _log([_record(ts=float(i + 1)) for i in range(10)]).splitlines(True)
    lines[8] = "abc,10.0.0.1,192.0.2.1,1234,80,2\n"
    with pytest.raises(ParseError) as err:
        read_events(io.StringIO("".join(lines)))
    assert (err.value.line, err.value.field) == (9, "timestamp")


def test_empty_file():
    assert len(read_events(io.StringIO(""))) == 0
    assert len(read_events(io.StringIO("timestamp,src_ip,dst_ip,src_port,dst_port,flags\n"))) == 0


# --- geolocation ---------------------------------------------------------


def test_geolocate_single_range():
    db = GeoDb([(int(ipaddress.IPv4Address("10.0.0.0")), int(ipaddress.IPv4Address("10.255.255.255")), "MA")])
    assert geolocate(ipaddress.IPv4Address("10.1.2.3"), db) == "MA"
    assert geolocate(ipaddress.IPv4Address("9.255.255.255"), db) == "??"
    assert geolocate(ipaddress.IPv4Address("11.0.0.0"), db) == "??"


def test_geodb_rejects_overlap():
    with pytest.raises(ValueError):
        GeoDb([(0, 10, "A"), (10, 20, "B")])
    with pytest.raises(ValueError):
        GeoDb([(5, 1, "A")])


def _random_db(rng, n=300):
    cuts = np.sort(rng.choice(2**32, size=2 * n, replace=False))
    codes = ["US", "CN", "RU", "NL", "DE", "FR", "BR", "MA"]
    return GeoDb([(int(a), int(b), codes[i % len(codes)]) for i, (a, b) in enumerate(cuts.reshape(-1, 2))])


def test_geolocate_matches_linear_scan():
    rng = np.random.default_rng(2)
    db = _random_db(rng)
    ips = rng.integers(0, 2**32, 10_000)
    # boundaries are the interesting cases
    ips[:600] = np.concatenate([db.starts, db.ends])[:600]

    def scan(ip):
        for a, b, c in db.ranges:
            if a <= ip <= b:
                return c
        return "??"

    expected = [scan(int(ip)) for ip in ips]
    assert [geolocate(int(ip), db) for ip in ips] == expected
    assert db.lookup_many(ips).tolist() == expected


def test_geodb_load_formats():
    text = "range_start,range_end,country\n1.0.0.0,1.0.0.255,AU\n16777472,16777727,CN\n"
    db = GeoDb.load(io.StringIO(text))
    assert geolocate("1.0.0.7", db) == "AU"
    assert geolocate("1.0.1.0", db) == "CN"
