# Checking the compare-through backup on small random MDPs.
#
# In a tabular problem the expected backup can be computed exactly by walking the
# tree of "stop" (resampled action differs, bootstrap) and "expand" (same action,
# keep collecting rewards) branches. Its fixed point should be Q^pi, whatever the
# behaviour policy that generated the data.

import numpy as np

from taac.envs import make_random_tabular
from taac.tabular import (apply_compare_through_expectation, contraction_report, exact_q_pi,
                          random_policy, sample_compare_through)

rng = np.random.default_rng(0)
mdp = make_random_tabular(5, 3, 0.9, rng)
pi, mu = random_policy(5, 3, rng), random_policy(5, 3, rng)

# %% fixed point
q_pi = exact_q_pi(mdp, pi)
for depth in (1, 3, 5):
    resid = np.abs(apply_compare_through_expectation(mdp, pi, mu, q_pi, depth) - q_pi).max()
    print(f"depth {depth}: |T Q_pi - Q_pi| = {resid:.1e}")

# %% repeated application from a random start, new behaviour policy each time
trace = contraction_report(mdp, pi, 3, 40, rng)
for k in (0, 9, 19, 39):
    print(f"after {k + 1:>2} steps: error {trace.error_to_fixed_point[k]:.2e}   "
          f"bound {0.9 ** (k + 1) * trace.initial_error:.2e}")

# %% the sampled one-trajectory target averages to the exact backup
Q = rng.normal(size=(5, 3))
exact = apply_compare_through_expectation(mdp, pi, mu, Q, 3)[2, 1]
est = sample_compare_through(mdp, pi, mu, Q, 3, 2, 1, 200_000, rng)
print(f"exact {exact:.4f}   sampled {est.mean():.4f} +- {est.std() / np.sqrt(est.size):.4f}")
