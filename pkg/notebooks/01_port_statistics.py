"""
Which ports get probed, and by whom
===================================

A synthetic month of telescope traffic with Zipf-ranked ports, plus one
heavy prober, run through the ranking and concentration helpers.
"""

# %%

from darkprobe.analytics import cumulative_coverage, top_probers, traffic_by_port
from darkprobe.synth import SyntheticSpec, gen_markov_prober, gen_zipf_traffic, merge_streams

ports = [23, 22, 80, 443, 2323, 3389, 8080, 445, 1433, 3306] + list(range(10_000, 10_500))
background = gen_zipf_traffic(
    SyntheticSpec("zipf_traffic", seed=0, ports=ports, exponent=1.2, n_events=300_000, n_sources=5000)
)
scanner = gen_markov_prober(
    SyntheticSpec(
        "markov_prober",
        seed=1,
        ports=[22, 2222],
        transition=[[0.3, 0.7], [0.8, 0.2]],
        n_events=20_000,
        mean_gap=120.0,
        start=background.timestamp[0],
    )
)
events = merge_streams([background, scanner])
print(len(events), "SYN events")

# %% Port ranking: a handful of ports take most of the traffic
ranking = traffic_by_port(events)
for e in ranking.top(10):
    print(f"{e.key:>6} {e.count:>8} {e.share:7.2%}")

# %% How many ports cover 80% / 90% of the probes
curve = cumulative_coverage(ranking)
print(curve.thresholds)
print("coverage after 10 ports:", round(curve.at(10), 3))

# %% Heavy hitters above 150 SYN/day
for p in top_probers(events):
    print(p.src_ip, round(p.mean_daily_rate, 1), dict(sorted(p.port_counts.items())))
