import json

import numpy as np
import pytest

from darkprobe.analytics import traffic_by_port
from darkprobe.graphs import build_transition_graph
from darkprobe.synth import (
    SyntheticSpec,
    gen_ar,
    gen_markov_prober,
    gen_var,
    gen_zipf_traffic,
    generate,
    load_specs,
    make_rng,
    merge_streams,
    normal,
    spectral_radius,
    uniform_open,
    zipf_weights,
)


def ar(coefs, **kw):
    return SyntheticSpec("ar", coefficients=coefs, **kw)


def test_same_seed_same_output():
    a = gen_ar(ar([0.1, 0.5], seed=3, length=500))
    b = gen_ar(ar([0.1, 0.5], seed=3, length=500))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gen_ar(ar([0.1, 0.5], seed=4, length=500)))


def test_uniforms_open_interval():
    u = uniform_open(make_rng(0), 100_000)
    assert u.min() > 0 and u.max() < 1


def test_constant_series():
    x = gen_ar(ar([5.0, 0.0], innovation_std=0.0, length=100))
    assert np.all(x == 5.0)


def test_persistence_needs_opt_out():
    with pytest.raises(ValueError):
        ar([0.0, 1.0], innovation_std=0.0)
    x = gen_ar(ar([0.0, 1.0], innovation_std=0.0, initial=[5.0], length=50, check_stationary=False))
    assert np.all(x == 5.0)


def test_matches_explicit_recursion():
    spec = ar([0.3, 0.5, -0.2], seed=8, length=200, innovation_std=1.5)
    x = gen_ar(spec)
    # replay the same noise draw by hand
    p, burn = 2, 20
    eps = normal(make_rng(8), (burn + 200, 1))[:, 0] * 1.5
    mean = 0.3 / (1 - 0.5 + 0.2)
    buf = [mean, mean]
    for e in eps:
        buf.append(0.3 + 0.5 * buf[-1] - 0.2 * buf[-2] + e)
    assert np.allclose(x, buf[p + burn :], rtol=0, atol=1e-12)


def test_var_matrix_path_matches_hand_loop():
    a1 = [[0.5, 0.1], [0.0, 0.3]]
    spec = SyntheticSpec("var", seed=2, coefficients={"intercept": [1.0, 0.0], "lags": [a1]}, length=100)
    x = gen_var(spec)
    assert x.shape == (100, 2)
    eps = normal(make_rng(2), (110, 2))
    c = np.array([1.0, 0.0])
    state = np.linalg.solve(np.eye(2) - np.array(a1), c)
    out = []
    for e in eps:
        state = c + np.array(a1) @ state + e
        out.append(state)
    assert np.allclose(x, np.array(out)[10:], atol=1e-12)


def test_lag_one_autocorrelation():
    x = gen_ar(ar([0.0, 0.5], seed=1, length=100_000))
    x = x - x.mean()
    acf = float(x[1:] @ x[:-1] / (x @ x))
    assert abs(acf - 0.5) < 0.01


def test_rejects_non_stationary():
    with pytest.raises(ValueError):
        ar([0.0, 1.2])
    with pytest.raises(ValueError):
        SyntheticSpec("var", coefficients={"lags": [[[1.1, 0], [0, 0.2]]]})
    assert spectral_radius([[[0.5]]]) == pytest.approx(0.5)


def test_regime_switch_changes_level():
    spec = ar([0.0, 0.5], seed=5, length=4000, regime_switches=[(2000, [10.0, 0.5])])
    x = gen_ar(spec)
    assert abs(x[:2000].mean()) < 0.3
    assert abs(x[2200:].mean() - 20.0) < 0.3


def test_regime_switch_changes_variance():
    spec = ar([0.0, 0.2], seed=6, length=20_000, regime_switches=[(10_000, [0.0, 0.9])])
    x = gen_ar(spec)
    # stationary variances 1/(1-phi^2)
    assert x[:10_000].var() == pytest.approx(1 / (1 - 0.04), rel=0.05)
    assert x[11_000:].var() == pytest.approx(1 / (1 - 0.81), rel=0.1)


def _markov(matrix, ports, n=10, **kw):
    return SyntheticSpec("markov_prober", ports=ports, transition=matrix, n_events=n, **kw)


def test_identity_chain_stays_put():
    b = gen_markov_prober(_markov([[1, 0], [0, 1]], [22, 80], start_port=80))
    assert set(b.dst_port.tolist()) == {80}


def test_alternating_chain():
    b = gen_markov_prober(_markov([[0, 1], [1, 0]], [22, 80], n=6, start_port=22))
    assert b.dst_port.tolist() == [22, 80, 22, 80, 22, 80]
    assert np.all(np.diff(b.timestamp) > 0)


def test_markov_recovers_transition_matrix():
    matrix = [[0.1, 0.6, 0.3], [0.5, 0.2, 0.3], [0.25, 0.25, 0.5]]
    ports = [22, 23, 80]
    g = build_transition_graph(gen_markov_prober(_markov(matrix, ports, n=100_000, seed=4)))
    est = np.array([[g.edges.get((a, b), 0.0) for b in ports] for a in ports])
    assert np.max(np.abs(est - np.array(matrix))) < 0.01


def test_rejects_bad_transition():
    with pytest.raises(ValueError):
        _markov([[0.5, 0.6], [1, 0]], [22, 80])
    with pytest.raises(ValueError):
        _markov([[1.0]], [22, 80])


def test_zipf_shares_match_weights():
    ports = list(range(100, 150))
    spec = SyntheticSpec("zipf_traffic", seed=1, ports=ports, exponent=1.2, n_events=200_000)
    r = traffic_by_port(gen_zipf_traffic(spec))
    w = zipf_weights(len(ports), 1.2)
    got = {e.key: e.share for e in r}
    assert max(abs(got.get(p, 0.0) - w[i]) for i, p in enumerate(ports)) < 0.01
    assert w[0] == pytest.approx(1 / sum(k ** -1.2 for k in range(1, 51)))


def test_zipf_edge_cases():
    one = gen_zipf_traffic(SyntheticSpec("zipf_traffic", ports=[23], n_events=100))
    assert set(one.dst_port.tolist()) == {23}
    steep = gen_zipf_traffic(SyntheticSpec("zipf_traffic", ports=[23, 80, 443], exponent=60, n_events=1000))
    assert set(steep.dst_port.tolist()) == {23}
    assert np.all(np.diff(steep.timestamp) >= 0)
    with pytest.raises(ValueError):
        SyntheticSpec("zipf_traffic", ports=[23], exponent=0)


def test_generate_dispatch_and_load(tmp_path):
    path = tmp_path / "specs.json"
    path.write_text(json.dumps({"specs": [{"kind": "ar", "coefficients": [0, 0.3], "length": 10}]}))
    [spec] = load_specs(path)
    assert generate(spec).shape == (10,)
    toml = tmp_path / "specs.toml"
    toml.write_text('[[specs]]\nkind = "zipf_traffic"\nports = [1, 2]\nn_events = 5\n')
    assert len(generate(load_specs(toml)[0])) == 5
    with pytest.raises(ValueError):
        SyntheticSpec.from_dict({"kind": "ar", "coefficients": [0, 0.1], "bogus": 1})


def test_merge_streams_sorted():
    a = gen_zipf_traffic(SyntheticSpec("zipf_traffic", seed=1, ports=[1, 2], n_events=50))
    b = gen_markov_prober(_markov([[0, 1], [1, 0]], [3, 4], n=50, mean_gap=3600.0, start=a.timestamp[0]))
    m = merge_streams([a, b])
    assert len(m) == 100 and np.all(np.diff(m.timestamp) >= 0)
