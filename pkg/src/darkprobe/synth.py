"""Seeded synthetic data: AR/VAR processes, Zipf port traffic, Markov probers.

Randomness comes from numpy's PCG64 bit generator. Uniforms are drawn as
53-bit integers mapped to the open interval (0, 1); normal variates use the
inverse normal CDF (``scipy.special.ndtri``) of those uniforms. No rejection
sampling is involved, so a given seed yields the same numbers everywhere.
"""

from __future__ import annotations

import bisect
import ipaddress
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.special import ndtri

from .ingest import ProbeBatch
from .timeseries import RateMatrix

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("ar", "var", "zipf_traffic", "markov_prober")
DEFAULT_START = 1415836800.0  # 2014-11-13 00:00 UTC
_TWO53 = float(1 << 53)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def uniform_open(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on (0, 1) with 53-bit resolution."""
    k = rng.integers(0, 1 << 53, size=size, dtype=np.uint64)
    return (k.astype(np.float64) + 0.5) / _TWO53


def normal(rng: np.random.Generator, size, std: float | np.ndarray = 1.0) -> np.ndarray:
    return ndtri(uniform_open(rng, size)) * std


@dataclass
class SyntheticSpec:
    """Parameters of one synthetic generator run.

    Which fields matter depends on ``kind``:

    ``ar``
        ``coefficients = [w0, w1, ..., wp]``; ``initial`` optionally gives the
        ``p`` starting values (oldest first).
    ``var``
        ``coefficients = {"intercept": [...], "lags": [A1, ..., Ap]}`` with
        ``A_h[i][j]`` the weight of series ``j`` at lag ``h`` on series ``i``.
    ``zipf_traffic``
        ``ports`` in rank order, ``exponent``, ``n_events``, ``span`` seconds,
        ``n_sources`` source addresses starting at ``src_base``.
    ``markov_prober``
        ``ports``, row-stochastic ``transition`` matrix over them,
        ``start_port``, ``n_events``, ``mean_gap`` seconds, ``src_ip``.

    ``regime_switches`` is a list of ``(t, coefficients)``; from output index
    ``t`` on, the process runs with the new coefficients.
    """

    kind: str
    seed: int = 0
    coefficients: Any = None
    innovation_std: float | list[float] = 1.0
    length: int = 1000
    initial: list[float] | None = None
    regime_switches: list[tuple[int, Any]] = field(default_factory=list)
    check_stationary: bool = True
    ports: list[int] | None = None
    exponent: float = 1.2
    n_events: int = 10000
    start: float = DEFAULT_START
    span: float = 30 * 86400.0
    n_sources: int = 1000
    src_base: str = "198.18.0.0"
    transition: list[list[float]] | None = None
    start_port: int | None = None
    mean_gap: float = 1.0
    src_ip: str = "203.0.113.7"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.regime_switches = sorted((int(t), c) for t, c in self.regime_switches)
        if self.kind == "ar":
            for coefs in [self.coefficients] + [c for _, c in self.regime_switches]:
                _check_ar(coefs, self.check_stationary)
        elif self.kind == "var":
            for coefs in [self.coefficients] + [c for _, c in self.regime_switches]:
                _check_var(coefs, self.check_stationary)
        elif self.kind == "zipf_traffic":
            if self.exponent <= 0:
                raise ValueError("Zipf exponent must be positive")
            if not self.ports:
                raise ValueError("zipf_traffic needs a non-empty port list")
        else:
            _check_transition(self.transition, self.ports)
            if self.mean_gap < 1e-3:
                raise ValueError("mean_gap must be at least 1 ms")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**data)


def load_specs(path: str | Path) -> list[SyntheticSpec]:
    """Read one spec or a ``specs`` list from a JSON or TOML file."""
    path = Path(path)
    text = path.read_text()
    data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    items = data.get("specs", [data]) if isinstance(data, dict) else data
    return [SyntheticSpec.from_dict(d) for d in items]


def spectral_radius(lags: Sequence[np.ndarray]) -> float:
    """Largest eigenvalue modulus of the VAR companion matrix."""
    lags = [np.atleast_2d(np.asarray(a, dtype=float)) for a in lags]
    if not lags:
        return 0.0
    d = lags[0].shape[0]
    p = len(lags)
    comp = np.zeros((d * p, d * p))
    comp[:d, :] = np.hstack(lags)
    comp[d:, :-d] = np.eye(d * (p - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _check_ar(coefs, check_stationary: bool) -> None:
    w = np.asarray(coefs, dtype=float)
    if w.ndim != 1 or len(w) < 2:
        raise ValueError("AR coefficients must be [w0, w1, ..., wp] with p >= 1")
    if check_stationary:
        rho = spectral_radius([[[v]] for v in w[1:]])
        if rho >= 1:
            raise ValueError(f"non-stationary AR coefficients (spectral radius {rho:.4g})")


def _var_parts(coefs) -> tuple[np.ndarray, list[np.ndarray]]:
    lags = [np.asarray(a, dtype=float) for a in coefs["lags"]]
    d = lags[0].shape[0]
    intercept = np.asarray(coefs.get("intercept", np.zeros(d)), dtype=float)
    return intercept, lags


def _check_var(coefs, check_stationary: bool) -> None:
    if not isinstance(coefs, dict) or not coefs.get("lags"):
        raise ValueError("VAR coefficients need a non-empty 'lags' list")
    intercept, lags = _var_parts(coefs)
    d = lags[0].shape[0]
    if any(a.shape != (d, d) for a in lags) or intercept.shape != (d,):
        raise ValueError("VAR lag matrices must all be d x d with a length-d intercept")
    if check_stationary:
        rho = spectral_radius(lags)
        if rho >= 1:
            raise ValueError(f"non-stationary VAR coefficients (spectral radius {rho:.4g})")


def _check_transition(matrix, ports) -> None:
    if matrix is None or not ports:
        raise ValueError("markov_prober needs ports and a transition matrix")
    m = np.asarray(matrix, dtype=float)
    if m.shape != (len(ports), len(ports)):
        raise ValueError("transition matrix must be square over the port list")
    if np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("transition matrix must be row-stochastic")


def gen_var(spec: SyntheticSpec) -> np.ndarray:
    """Simulate ``x(t) = c + sum_h A_h x(t-h) + eps(t)``; returns ``(length, d)``.

    ``10 * p`` burn-in steps are simulated and dropped before the output.
    """
    if spec.kind not in ("var", "ar"):
        raise ValueError("gen_var needs a var spec")
    regimes = [(0, spec.coefficients)] + list(spec.regime_switches)
    parts = [_ar_as_var(c) if spec.kind == "ar" else _var_parts(c) for _, c in regimes]
    d = parts[0][1][0].shape[0]
    p = max(len(lags) for _, lags in parts)
    burn = 10 * p
    rng = make_rng(spec.seed)
    std = np.broadcast_to(np.asarray(spec.innovation_std, dtype=float), (d,))
    noise = normal(rng, (burn + spec.length, d)) * std

    x = np.zeros((p + burn + spec.length, d))
    if spec.initial is not None:
        init = np.asarray(spec.initial, dtype=float).reshape(-1, d)
        x[p - len(init) : p] = init
    else:
        c, lags = parts[0]
        total = sum(lags)
        try:
            x[:p] = np.linalg.solve(np.eye(d) - total, c)
        except np.linalg.LinAlgError:
            pass

    switch_at = [burn + t for t, _ in regimes]
    if d == 1:
        _run_scalar(x[:, 0], noise[:, 0], parts, switch_at, p)
        return x[p + burn :]
    r = 0
    for t in range(burn + spec.length):
        while r + 1 < len(regimes) and t >= switch_at[r + 1]:
            r += 1
        c, lags = parts[r]
        row = p + t
        acc = c.copy()
        for h, a in enumerate(lags, start=1):
            acc += a @ x[row - h]
        x[row] = acc + noise[t]
    return x[p + burn :]


def _run_scalar(x: np.ndarray, noise: np.ndarray, parts, switch_at, p: int) -> None:
    # same recursion as the matrix loop, on python floats
    buf = x.tolist()
    eps = noise.tolist()
    regimes = [(float(c[0]), [float(a[0, 0]) for a in lags]) for c, lags in parts]
    r = 0
    for t in range(len(eps)):
        while r + 1 < len(regimes) and t >= switch_at[r + 1]:
            r += 1
        c, w = regimes[r]
        row = p + t
        acc = c
        for h, wh in enumerate(w, start=1):
            acc += wh * buf[row - h]
        buf[row] = acc + eps[t]
    x[:] = buf


def _ar_as_var(coefs) -> tuple[np.ndarray, list[np.ndarray]]:
    w = np.asarray(coefs, dtype=float)
    return np.array([w[0]]), [np.array([[v]]) for v in w[1:]]


def gen_ar(spec: SyntheticSpec) -> np.ndarray:
    """Simulate ``x(t) = w0 + sum_h w_h x(t-h) + eps(t)`` with ``eps ~ N(0, std)``.

    Starts from ``spec.initial`` or the stationary mean and discards ``10 * p``
    burn-in samples.
    """
    if spec.kind != "ar":
        raise ValueError("gen_ar needs an ar spec")
    return gen_var(spec)[:, 0]


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    """Normalised Zipf weights ``k**-s / sum_j j**-s`` for ranks ``1..n``."""
    logw = -exponent * np.log(np.arange(1, n + 1))
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def _draw_categorical(rng: np.random.Generator, weights: np.ndarray, size: int) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, uniform_open(rng, size), side="right")
    return np.minimum(idx, len(weights) - 1)


def gen_zipf_traffic(spec: SyntheticSpec) -> ProbeBatch:
    """Probe events with Zipf-ranked destination ports and uniform times.

    Events are returned in time order. Sources are drawn uniformly from
    ``n_sources`` consecutive addresses.
    """
    if spec.kind != "zipf_traffic":
        raise ValueError("gen_zipf_traffic needs a zipf_traffic spec")
    rng = make_rng(spec.seed)
    ports = np.asarray(spec.ports, dtype=np.int64)
    port_idx = _draw_categorical(rng, zipf_weights(len(ports), spec.exponent), spec.n_events)
    base = int(ipaddress.IPv4Address(spec.src_base))
    src = base + rng.integers(0, spec.n_sources, size=spec.n_events, dtype=np.int64)
    ts = np.sort(spec.start + uniform_open(rng, spec.n_events) * spec.span)
    return ProbeBatch(ts, src.astype(np.uint32), ports[port_idx])


def gen_markov_prober(spec: SyntheticSpec) -> ProbeBatch:
    """Events of one prober whose port sequence follows a Markov chain.

    Gaps between consecutive events are ``mean_gap * (0.5 + u)``, so timestamps
    strictly increase.
    """
    if spec.kind != "markov_prober":
        raise ValueError("gen_markov_prober needs a markov_prober spec")
    rng = make_rng(spec.seed)
    ports = np.asarray(spec.ports, dtype=np.int64)
    cdf = np.cumsum(np.asarray(spec.transition, dtype=float), axis=1)
    cdf /= cdf[:, -1:]
    n = spec.n_events
    state = ports.tolist().index(spec.start_port) if spec.start_port is not None else 0
    u = uniform_open(rng, n)
    seq = np.empty(n, dtype=np.int64)
    rows = [row.tolist() for row in cdf]
    last = len(ports) - 1
    for i in range(n):
        seq[i] = state
        state = min(bisect.bisect_right(rows[state], u[i]), last)
    gaps = spec.mean_gap * (0.5 + uniform_open(rng, n))
    ts = spec.start + np.cumsum(gaps) - gaps[0]
    src = np.full(n, int(ipaddress.IPv4Address(spec.src_ip)), dtype=np.uint32)
    return ProbeBatch(ts, src, ports[seq])


def generate(spec: SyntheticSpec):
    """Dispatch on ``spec.kind``."""
    return {
        "ar": gen_ar,
        "var": gen_var,
        "zipf_traffic": gen_zipf_traffic,
        "markov_prober": gen_markov_prober,
    }[spec.kind](spec)


def as_rate_matrix(
    values: np.ndarray,
    ports: Sequence[int] | None = None,
    resolution: int = 3600,
    origin: float = DEFAULT_START,
) -> RateMatrix:
    """Wrap a generated ``(T,)`` or ``(T, d)`` array as a :class:`RateMatrix`."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if ports is None:
        ports = list(range(1, values.shape[1] + 1))
    return RateMatrix(list(ports), resolution, origin, values)


def merge_streams(batches: Sequence[ProbeBatch]) -> ProbeBatch:
    """Concatenate event batches and order them by time (stable)."""
    merged = ProbeBatch.concat(batches)
    return merged.take(np.argsort(merged.timestamp, kind="stable"))
