# %% [markdown]
# One closed-loop calibration run
#
# The robot starts with a base pose guess up to 10 cm and 0.1 rad off,
# touches and slides along the table and stops when its own criteria say
# the particle cloud has settled.

# %%
import json
import tempfile
from pathlib import Path

import numpy as np

from touchcal.config import load_config
from touchcal.experiment import run_once

cfg = load_config("box_table")
out = Path(tempfile.mkdtemp())
res = run_once(cfg, seed=1, trace_dir=out)
print(f"terminated={res.terminated} after {res.iterations} actions")
print(f"error {res.translational_error_cm:.2f} cm, {res.rotational_error_rad * 100:.2f}e-2 rad")

# %%
trace = [json.loads(line) for line in open(res.trace_path)]
for rec in trace[:: max(1, len(trace) // 10)]:
    if rec.get("degenerate"):
        continue
    sd = np.sqrt(rec["variance"])
    print(f"t={rec['t']:2d}  J={rec['J_t']:2d}  sd xyz {sd[:3].max() * 100:.2f} cm  "
          f"C,S,V={rec['C']}{rec['S']}{rec['V']}  sigma={rec['sigma_t']:.4f}")
