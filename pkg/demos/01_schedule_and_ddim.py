"""Noise schedule and the deterministic reverse step.

A forward trajectory noised with a known ``eps`` is walked back exactly when
the reverse step is fed that same ``eps``.
"""

# %%
import numpy as np

from colorguide.schedule import ddim_step, forward_noise, make_linear_schedule

sched = make_linear_schedule(50, 1e-4)
print("alpha at t = 0, 1, 25, 50:", [round(sched.alpha(t), 5) for t in (0, 1, 25, 50)])

# %% Forward then backward with the true noise
rng = np.random.default_rng(0)
z0 = rng.random(12)
eps = rng.standard_normal(12)
z = forward_noise(sched, z0, sched.T, eps)
for t in range(sched.T, 0, -1):
    z = ddim_step(sched, z, t, eps)
print("round-trip relative error:", np.linalg.norm(z - z0) / np.linalg.norm(z0))

# %% The schedule as a plain table
print(sched.to_table().splitlines()[:4])
