"""
Port-transition graphs
======================

A prober's port sequence is a walk on a directed graph. Here we plant a known
chain and read it back.
"""

# %%
import numpy as np

from darkprobe.graphs import aggregate_transition_matrix, build_transition_graph, export_graph, ports_targeted_cdf
from darkprobe.synth import SyntheticSpec, gen_markov_prober, merge_streams

ports = [22, 23, 80, 443, 8080]
chain = np.array([
    [0.0, 0.5, 0.5, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.8, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0, 0.0, 0.0],
])
bot = gen_markov_prober(SyntheticSpec("markov_prober", seed=3, ports=ports, transition=chain.tolist(), n_events=20_000))

# %% Estimated transition probabilities vs the planted ones
g = build_transition_graph(bot)
est = np.array([[g.edges.get((a, b), 0.0) for b in ports] for a in ports])
print(np.round(est, 3))
print("max abs error:", np.abs(est - chain).max())

# %% Graphviz rendering
print(export_graph(g))

# %% Several probers: aggregate matrix and the distinct-ports CDF
others = [
    gen_markov_prober(SyntheticSpec("markov_prober", seed=10 + k, ports=[23, 2323], transition=[[0.5, 0.5], [0.5, 0.5]],
                                    n_events=500, src_ip=f"198.51.100.{k}"))
    for k in range(5)
]
events = merge_streams([bot] + others)
m = aggregate_transition_matrix(events, [22, 23, 80, 443, 2323, 8080])
print(m.to_csv())
print(ports_targeted_cdf([5, 2, 2, 2, 2, 2]).points)
