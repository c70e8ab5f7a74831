"""
Simulated paths and the score statistic
=======================================

"""
import numpy as np

from mdev.model import Grid, get_model
from mdev.simulate import simulate_batch, statistic_T, stream_base, stream_ids

model = get_model("linear-sin")
eps, theta = 0.05, 0.7
ids = stream_ids(stream_base("demo-paths"), 0, 20000)

# for the linear model T is exactly N(theta, eps^2) at every grid size
for n in (8, 64, 1024):
    obs = simulate_batch(model, theta, eps, Grid(n), 1, ids)
    t = statistic_T(obs, model, theta)[:, 0]
    print(f"n={n:5d}  mean {t.mean():.5f}  sd {t.std():.5f}")

# the same (seed, stream id) always gives the same path, whatever else was drawn
a = simulate_batch(model, theta, eps, Grid(64), 1, ids[5:6]).increments
b = simulate_batch(model, theta, eps, Grid(64), 1, ids[:10]).increments[5]
print("stream reproducible:", np.array_equal(a[0], b))
