# Exploration before any learning: where do untrained agents go on mountain car?
#
# A freshly initialized policy that re-samples its action every step behaves like
# noise; the car barely leaves the valley. The repeat-or-switch agent holds each
# action for a random stretch, so even untrained it rocks further up the slopes.
# Run with a frame count argument for longer logs (default 10000).

import sys

import numpy as np

from taac.envs import make_env
from taac.harness.config import ExperimentConfig
from taac.harness.metrics import coverage_summary
from taac.harness.runner import _seed_rng, build, rollout_states

frames = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
env = make_env("mcar")
for algo in ("SAC", "SAC_Nrep", "TAAC"):
    cfg = ExperimentConfig(algo=algo, seed=0)
    _, agent = build(cfg, _seed_rng(0, 0))
    states, bits = rollout_states(agent, env, frames, _seed_rng(0, 4))
    c = coverage_summary(states, env.spec.state_low, env.spec.state_high)
    print(f"{algo:9s} position std {c['std'][0]:.3f}  range [{c['min'][0]:.2f}, {c['max'][0]:.2f}]  "
          f"grid occupancy {100 * c['occupancy']:.1f}%  repeated steps {100 * np.mean(np.array(bits) == 0):.0f}%")
