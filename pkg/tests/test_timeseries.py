import io
import ipaddress

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_corpus
from darkprobe.ingest import ProbeEvent
from darkprobe.timeseries import (
    RateMatrix,
    SeriesAccumulator,
    bucketize,
    parse_resolution,
    read_series_csv,
    resample,
)

IP = ipaddress.IPv4Address("10.0.0.1")


def ev(ts, port=23):
    return ProbeEvent(float(ts), IP, port)


def test_hourly_buckets():
    m = bucketize([ev(0.0 + 86400), ev(1800.0 + 86400), ev(3700.0 + 86400)], "1h", [23])
    assert m.values[:, 0].tolist() == [2, 1]
    assert m.origin == 86400.0
    assert m.last_bucket_partial


def test_port_without_events_is_zero():
    m = bucketize([ev(86400 + 10), ev(86400 + 7300)], "1h", [23, 80])
    assert m.series(80).values.tolist() == [0, 0, 0]
    assert m.series(23).values.tolist() == [1, 0, 1]


def test_explicit_end_covers_range():
    m = bucketize([ev(100)], 3600, [23], origin=0.0, end=3 * 3600)
    assert m.values[:, 0].tolist() == [1, 0, 0]
    assert not m.last_bucket_partial
    with pytest.raises(ValueError):
        bucketize([ev(100)], 3600, [23], origin=10.0)


def test_empty_input():
    m = bucketize([], "1h", [23])
    assert len(m) == 0


def test_parse_resolution():
    assert parse_resolution("24h") == parse_resolution("1d") == 86400
    assert parse_resolution(10800) == 10800
    with pytest.raises(ValueError):
        parse_resolution("fortnight")


@pytest.mark.parametrize("res", [3600, 10800, 21600, 43200, 86400])
def test_matches_naive_bucket_loop(res):
    batch = random_corpus(21, n=5000, days=6)
    ports = [23, 22, 80, 443, 5001]
    m = bucketize(batch, res, ports)
    origin = int(batch.timestamp.min() // res) * res
    assert m.origin == origin
    n = int(batch.timestamp.max() // res) - origin // res + 1
    expected = np.zeros((n, len(ports)), dtype=np.int64)
    for t, p in zip(batch.timestamp.tolist(), batch.dst_port.tolist()):
        if p in ports:
            expected[int((t - origin) // res), ports.index(p)] += 1
    assert np.array_equal(m.values, expected)
    assert m.values.sum() == np.isin(batch.dst_port, ports).sum()


def test_merge_of_chunks_equals_single_pass():
    batch = random_corpus(3, n=6000)
    ports = [23, 22, 80]
    a = SeriesAccumulator("3h", ports).add(batch.take(slice(0, 2500)))
    b = SeriesAccumulator("3h", ports).add(batch.take(slice(2500, None)))
    whole = SeriesAccumulator("3h", ports).add(batch)
    assert np.array_equal(a.merge(b).finalize().values, whole.finalize().values)


def _matrix(col, res=3600, origin=0.0):
    return RateMatrix([23], res, origin, np.asarray(col, dtype=np.int64).reshape(-1, 1))


def test_resample_three_to_one():
    assert resample(_matrix([1, 2, 3, 4, 5, 6]), 10800).values[:, 0].tolist() == [6, 15]


def test_resample_identity():
    m = _matrix([1, 2, 3])
    assert resample(m, 3600) is m


def test_resample_rejects_non_multiple():
    with pytest.raises(ValueError):
        resample(_matrix([1, 2, 3], res=10800), 3600 * 4)


def test_resample_aligns_origin():
    m = _matrix([1, 1, 1, 1], origin=7200.0)
    r = resample(m, 10800)
    assert r.origin == 0.0
    assert r.values[:, 0].tolist() == [1, 3]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["3h", "6h", "12h", "24h"]))
def test_resample_equals_direct_bucketize(seed, coarse):
    batch = random_corpus(seed, n=800, days=4)
    ports = [23, 22, 80]
    fine = bucketize(batch, "1h", ports)
    direct = bucketize(batch, coarse, ports)
    up = resample(fine, coarse)
    assert up.origin == direct.origin
    assert np.array_equal(up.values, direct.values)
    assert up.values.sum() == fine.values.sum()


def test_csv_roundtrip():
    batch = random_corpus(8, n=2000)
    m = bucketize(batch, "6h", [23, 80, 5003])
    back = read_series_csv(io.StringIO(m.to_csv()))
    assert back.ports == m.ports
    assert back.resolution == m.resolution
    assert back.origin == m.origin
    assert np.array_equal(back.values, m.values)
    assert m.to_csv().splitlines()[0] == "bucket_start,port_23,port_80,port_5003"


def test_drop_partial():
    m = bucketize([ev(86400 + 10), ev(86400 + 7300)], "1h", [23])
    assert len(m.drop_partial()) == 2
