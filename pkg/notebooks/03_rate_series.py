"""
Probing-rate series at several resolutions
==========================================
"""

# %%
from darkprobe.analytics import traffic_by_port
from darkprobe.synth import SyntheticSpec, gen_zipf_traffic
from darkprobe.timeseries import RESOLUTIONS, bucketize, resample

events = gen_zipf_traffic(SyntheticSpec("zipf_traffic", seed=5, ports=[23, 22, 80, 443], n_events=50_000))
top = traffic_by_port(events).keys()[:3]

# %% Hourly counts for the three busiest ports
hourly = bucketize(events, "1h", top)
print(len(hourly), "hourly buckets, last one partial:", hourly.last_bucket_partial)
print(hourly.to_csv().splitlines()[:4])

# %% Coarser resolutions are sums of hourly buckets
for name in RESOLUTIONS:
    coarse = resample(hourly, name)
    assert (coarse.values == bucketize(events, name, top).values).all()
    print(name, coarse.values.shape, coarse.values.sum(axis=0))
