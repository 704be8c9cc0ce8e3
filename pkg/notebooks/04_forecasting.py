"""
Rolling AR and VAR forecasts
============================

The target port follows a driver port with a one-bucket delay. An AR model
only sees its own past; a VAR model with correlation-ranked features finds
the driver.
"""

# %%
import numpy as np

from darkprobe.forecast import evaluate_port, grid_search, rolling_forecast, DesignParams
from darkprobe.synth import SyntheticSpec, as_rate_matrix, gen_ar, make_rng, normal

rng = make_rng(0)
T = 600
driver = normal(rng, T)
target = np.zeros(T)
eps = normal(rng, T)
for t in range(1, T):
    target[t] = 0.8 * driver[t - 1] + 0.1 * target[t - 1] + eps[t]
m = as_rate_matrix(np.column_stack([target, driver, normal(rng, (T, 8))]), ports=[23, 22] + list(range(5000, 5008)))

# %% Grid search for the AR design, then VAR with the same (p, N)
row = evaluate_port(m, 0, p_range=(1, 3))
print(f"p={row.p} N={row.N}  R2 AR={row.r2_ar:.3f}  VAR={row.r2_var:.3f}  persistence={row.r2_persistence:.3f}")
print("VAR features (ports):", row.features)

# %% Short windows track a regime change, long ones lag behind it
x = gen_ar(SyntheticSpec("ar", seed=2, coefficients=[0.0, 0.8], length=2000, regime_switches=[(1000, [0.0, 0.2])]))
s = as_rate_matrix(x)
for n in (50, 200, 1500):
    r = rolling_forecast(s, 0, "ar", DesignParams(1, n), span=(1000, 2000), clip_window=True)
    print(f"N={n:>5}  post-switch R2={r.r2:.3f}")

# %% The full grid surface
res = grid_search(s, 0, p_range=(1, 2), step=100)
print(sorted(res.scores.items(), key=lambda kv: -kv[1])[:5])
