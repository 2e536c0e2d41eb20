# A short training run on the toy mountain car, then a look at what was written.
#
# Defaults here are sized for a couple of minutes; the full desk-scale setting is
# 100k frames with 64-unit layers (see README). Pass an algorithm name to compare.

import os
import sys
import tempfile

from taac.harness.config import ExperimentConfig
from taac.harness.runner import run_experiment

algo = sys.argv[1] if len(sys.argv) > 1 else "TAAC"
frames = int(sys.argv[2]) if len(sys.argv) > 2 else 15_000
cfg = ExperimentConfig(algo=algo, env="mcar", seed=0, total_frames=frames, hidden=[64, 64],
                       eval_episodes=5, final_eval_episodes=20)
out = os.path.join(tempfile.gettempdir(), f"taac-demo-{algo}")
res = run_experiment(cfg, out, log=print)

# %% artifacts
print(res.report)
print(sorted(os.listdir(out)))
with open(os.path.join(out, "metrics.csv")) as fh:
    print(fh.read().splitlines()[0])
