"""Port-transition graphs of individual probers and aggregated transition matrices.

A prober's events are ordered by timestamp (ties keep input order) and every
consecutive pair of destination ports counts as one transition. Time gaps
between events are ignored.
"""

from __future__ import annotations

import ipaddress
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .analytics import CoverageCurve, TrafficStats
from .ingest import ProbeBatch, ProbeEvent


@dataclass
class TransitionGraph:
    src_ip: ipaddress.IPv4Address | None
    nodes: dict[int, int] = field(default_factory=dict)
    counts: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def edges(self) -> dict[tuple[int, int], float]:
        """Transition probabilities, normalised per source port."""
        out_total: dict[int, int] = {}
        for (a, _), c in self.counts.items():
            out_total[a] = out_total.get(a, 0) + c
        return {(a, b): c / out_total[a] for (a, b), c in self.counts.items()}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def count_matrix(self, ports: Sequence[int]) -> np.ndarray:
        index = {p: i for i, p in enumerate(ports)}
        m = np.zeros((len(ports), len(ports)), dtype=np.int64)
        for (a, b), c in self.counts.items():
            if a in index and b in index:
                m[index[a], index[b]] += c
        return m


@dataclass
class TransitionMatrix:
    ports: list[int]
    probs: np.ndarray
    counts: np.ndarray
    normalize: str = "row"

    def to_csv(self) -> str:
        lines = ["port," + ",".join(str(p) for p in self.ports)]
        for p, row in zip(self.ports, self.probs.tolist()):
            lines.append(f"{p}," + ",".join(repr(v) for v in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "ports": self.ports,
                "normalize": self.normalize,
                "counts": self.counts.tolist(),
                "probs": self.probs.tolist(),
            }
        )


def _ordered(batch: ProbeBatch) -> ProbeBatch:
    # lexsort is stable, so equal timestamps keep input order
    return batch.take(np.lexsort((batch.timestamp, batch.src_ip)))


def transition_pairs(batch: ProbeBatch, drop_self_loops: bool = False) -> tuple[np.ndarray, ...]:
    """Consecutive (src_ip, from_port, to_port) triples over all probers."""
    b = _ordered(batch)
    same = b.src_ip[1:] == b.src_ip[:-1]
    src, a, c = b.src_ip[1:][same], b.dst_port[:-1][same], b.dst_port[1:][same]
    if drop_self_loops:
        keep = a != c
        src, a, c = src[keep], a[keep], c[keep]
    return src, a, c


def _as_batch(events) -> ProbeBatch:
    return events if isinstance(events, ProbeBatch) else ProbeBatch.from_events(events)


def build_transition_graph(
    events: Iterable[ProbeEvent] | ProbeBatch, drop_self_loops: bool = False
) -> TransitionGraph:
    """Transition graph of a single prober.

    Node weights are SYN counts per port; fewer than two events leave the
    edge set empty.
    """
    batch = _as_batch(events)
    if not len(batch):
        return TransitionGraph(None)
    if np.any(batch.src_ip != batch.src_ip[0]):
        raise ValueError("build_transition_graph expects events of a single source IP")
    order = np.argsort(batch.timestamp, kind="stable")
    ports = batch.dst_port[order]
    uniq, hits = np.unique(ports, return_counts=True)
    a, b = ports[:-1], ports[1:]
    if drop_self_loops:
        keep = a != b
        a, b = a[keep], b[keep]
    counts: dict[tuple[int, int], int] = {}
    if len(a):
        pairs, n = np.unique(np.stack([a, b], axis=1), axis=0, return_counts=True)
        counts = {(int(x), int(y)): int(c) for (x, y), c in zip(pairs.tolist(), n.tolist())}
    return TransitionGraph(
        ipaddress.IPv4Address(int(batch.src_ip[0])),
        dict(zip(uniq.tolist(), hits.tolist())),
        counts,
    )


def iter_prober_graphs(
    events, probers: Iterable | None = None, drop_self_loops: bool = False
) -> Iterator[TransitionGraph]:
    """Yield one graph per source IP in ascending address order.

    ``probers`` restricts the output to the given addresses.
    """
    batch = _as_batch(events)
    if probers is not None:
        wanted = np.array(sorted(int(ipaddress.IPv4Address(p)) for p in probers), dtype=np.uint32)
        batch = batch.take(np.isin(batch.src_ip, wanted))
    b = _ordered(batch)
    if not len(b):
        return
    starts = np.flatnonzero(np.r_[True, b.src_ip[1:] != b.src_ip[:-1]])
    ends = np.r_[starts[1:], len(b)]
    for s, e in zip(starts.tolist(), ends.tolist()):
        yield build_transition_graph(b.take(slice(s, e)), drop_self_loops)


def ports_targeted_cdf(graphs_or_counts: Iterable) -> CoverageCurve:
    """Empirical CDF of the number of distinct ports targeted per prober.

    Accepts :class:`TransitionGraph` objects or plain node counts. The point
    for ``n`` is the fraction of probers targeting at most ``n`` ports.
    """
    sizes = np.array(
        [g.n_nodes if isinstance(g, TransitionGraph) else int(g) for g in graphs_or_counts],
        dtype=np.int64,
    )
    if not len(sizes):
        return CoverageCurve([])
    hist = np.bincount(sizes)
    cum = np.cumsum(hist)[1:] / len(sizes)
    return CoverageCurve([(n, float(c)) for n, c in enumerate(cum, start=1)])


def ports_per_prober(events) -> np.ndarray:
    """Distinct destination ports per source IP, without building graphs."""
    stats = TrafficStats.of(events)
    keys, _ = stats.ip_port_counts.items()
    if not len(keys):
        return np.empty(0, dtype=np.int64)
    _, n = np.unique(keys >> np.uint64(16), return_counts=True)
    return n


def aggregate_transition_matrix(
    events,
    ports: Sequence[int],
    probers: Iterable | None = None,
    normalize: str = "row",
    drop_self_loops: bool = False,
) -> TransitionMatrix:
    """Sum per-prober transition counts over ``ports`` and normalise.

    ``probers=None`` aggregates every source IP; otherwise only the listed
    addresses (e.g. the top probers) are in scope. A pair touching a port
    outside ``ports`` is dropped, not bridged. ``normalize="row"`` makes each
    non-empty row a conditional next-port distribution, ``"global"`` divides
    by the total number of in-scope transitions.
    """
    ports = [int(p) for p in ports]
    if not ports:
        raise ValueError("ports must be non-empty")
    if normalize not in ("row", "global"):
        raise ValueError(f"normalize must be 'row' or 'global', got {normalize!r}")
    batch = _as_batch(events)
    if probers is not None:
        wanted = np.array(sorted(int(ipaddress.IPv4Address(p)) for p in probers), dtype=np.uint32)
        batch = batch.take(np.isin(batch.src_ip, wanted))
    _, a, b = transition_pairs(batch, drop_self_loops)

    k = len(ports)
    lookup = np.full(65536, -1, dtype=np.int64)
    lookup[np.asarray(ports)] = np.arange(k)
    ia, ib = lookup[a], lookup[b]
    keep = (ia >= 0) & (ib >= 0)
    counts = np.bincount(ia[keep] * k + ib[keep], minlength=k * k).reshape(k, k)

    probs = np.zeros((k, k))
    if normalize == "row":
        rows = counts.sum(axis=1)
        nz = rows > 0
        probs[nz] = counts[nz] / rows[nz, None]
    elif counts.sum():
        probs = counts / counts.sum()
    return TransitionMatrix(ports, probs, counts, normalize)


def export_graph(g: TransitionGraph, fmt: str = "dot") -> str:
    """Render a graph as Graphviz DOT or lossless JSON."""
    if fmt == "json":
        return json.dumps(
            {
                "src_ip": None if g.src_ip is None else str(g.src_ip),
                "nodes": [[p, h] for p, h in sorted(g.nodes.items())],
                "transitions": [[a, b, c] for (a, b), c in sorted(g.counts.items())],
            }
        )
    if fmt != "dot":
        raise ValueError(f"unknown graph format {fmt!r}")
    name = "prober" if g.src_ip is None else str(g.src_ip)
    lines = [f'digraph "{name}" {{', "  node [shape=circle, fixedsize=true];"]
    for port, hits in sorted(g.nodes.items()):
        width = 0.4 + 0.4 * math.log10(1 + hits)
        lines.append(f'  "{port}" [label="{port}", width={width:.3f}, hits={hits}];')
    for (a, b), prob in sorted(g.edges.items()):
        lines.append(f'  "{a}" -> "{b}" [label="{prob:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_from_json(text: str) -> TransitionGraph:
    data = json.loads(text)
    src = data["src_ip"]
    return TransitionGraph(
        None if src is None else ipaddress.IPv4Address(src),
        {int(p): int(h) for p, h in data["nodes"]},
        {(int(a), int(b)): int(c) for a, b, c in data["transitions"]},
    )
