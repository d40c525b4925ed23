# %% [markdown]
# Signed distance grid of the desk scene
#
# Build the voxel SDF for the box table, compare it against the analytic
# field and look at how far the probe is from the table at a few poses.

# %%
import numpy as np

from touchcal.config import load_config
from touchcal.experiment import clouds_for, grid_for
from touchcal.geometry import hypothesized_distance
from touchcal.se3 import Pose6, PoseSE3

cfg = load_config("box_table")
grid = grid_for(cfg)
print("dims", grid.dims, "resolution", grid.resolution)

# %%
rng = np.random.default_rng(0)
lo, hi = grid.bounds()
pts = rng.uniform(lo, hi, size=(20_000, 3))
err = np.abs(grid.query(pts) - cfg.env.sdf(pts))
print(f"nearest-voxel error: mean {err.mean() * 1e3:.2f} mm, max {err.max() * 1e3:.2f} mm")

# %%
# the probe hovering over the table top, then pressed 1 cm into it
cloud, _ = clouds_for(cfg)
tip = cloud.points[:, 2].max()
down = Pose6(0, 0, 0, np.pi, 0, 0).to_se3().rotation
for z in (0.05, 0.0, -0.01):
    ee = PoseSE3(down, np.array([-0.3, 0.0, 0.70 + tip + z]))
    print(f"tip {z * 100:+.0f} cm above the top: d = {hypothesized_distance(grid, cloud, PoseSE3.identity(), ee) * 100:+.2f} cm")
