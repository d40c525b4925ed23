# %% [markdown]
# Cost of a weight update against point cloud size
#
# The per-particle work is one SDF lookup per cloud point and contact
# event, so the update should scale roughly linearly in L.

# %%
import time

import numpy as np

from touchcal.config import load_config
from touchcal.experiment import grid_for
from touchcal.filter import ContactEvent, Observation, ParticleSet, evaluate_weights
from touchcal.geometry import sample_cloud

cfg = load_config("box_table")
grid = grid_for(cfg)
rng = np.random.default_rng(0)
poses = np.array(cfg.get("world.x0")) + rng.uniform(-0.1, 0.1, (cfg.filter.M, 6))
ps = ParticleSet(poses, np.full(len(poses), 1.0 / len(poses)))
obs = Observation([ContactEvent(cfg.chain.random_config(rng), i % 2) for i in range(10)])

# %%
for L in (60, 200, 600, 2000):
    cloud = sample_cloud(cfg.ee_model, L, 0)
    evaluate_weights(ps, obs, grid, cloud, cfg.chain, cfg.filter)
    t0 = time.perf_counter()
    evaluate_weights(ps, obs, grid, cloud, cfg.chain, cfg.filter, workers=4)
    print(f"L={L:5d}: {time.perf_counter() - t0:.3f} s for M={cfg.filter.M}, J=10")
