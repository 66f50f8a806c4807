"""
Selective scan, from the recurrence to the benchmark
=====================================================

"""

# %%
import numpy as np

from ssmadc.ssm.scan import selective_scan, scan_state_bytes
from ssmadc.evaluation.bench import bench_scaling
from ssmadc.ssm.model import preset

rng = np.random.default_rng(0)
L, d, n = 200, 4, 3
x = rng.normal(size=(L, d))
dt = rng.uniform(0, 0.5, (L, d))
A = -np.exp(rng.normal(size=(d, n)))
B, C = rng.normal(size=(L, n)), rng.normal(size=(L, n))
D = rng.normal(size=d)

# %%
# the same recurrence one step at a time
h = np.zeros((d, n))
ref = np.empty((L, d))
for t in range(L):
    h = np.exp(dt[t, :, None] * A) * h + dt[t, :, None] * B[t] * x[t, :, None]
    ref[t] = h @ C[t] + D * x[t]
print("max |kernel - loop| =", np.abs(selective_scan(x, dt, A, B, C, D) - ref).max())

# %%
# a zero step size leaves only the skip term
print(np.allclose(selective_scan(x, np.zeros_like(dt), A, B, C, D), D * x))

# %%
# runtime against sequence length, short sweep
reports = bench_scaling(preset("tiny"), [1024, 2048, 4096], [256, 512, 1024], repeats=3)
for name, rep in reports.items():
    if hasattr(rep, "slope"):
        print(f"{name:10s} slope {rep.slope:.2f}", [f"{t:.3f}s" for t in rep.wall_times])
print("state bytes per scan:", scan_state_bytes(32, 16))
