# Repeat or switch: how the closed-form choice reacts to values and temperature.
#
# The agent proposes a fresh action a_hat at every step, then decides whether to
# execute it or keep the previous action. The decision probability is a logistic
# function of the value gap divided by a temperature.

import numpy as np

from taac.agents import beta_star, switch_objective

# %% value gap vs. probability of switching
for gap in (-2.0, -0.5, 0.0, 0.5, 2.0):
    row = [beta_star(0.0, gap, alpha).beta1[()] for alpha in (0.1, 1.0, 10.0)]
    print(f"gap {gap:+.1f}: " + "  ".join(f"{p:.3f}" for p in row))
# small temperature -> near-greedy, large temperature -> close to a coin flip

# %% it is the best distribution for the entropy-regularized objective
q_prev, q_new, alpha = 1.0, 1.7, 0.4
grid = np.linspace(0.001, 0.999, 999)
j = switch_objective(grid, q_prev, q_new, alpha)
best = beta_star(q_prev, q_new, alpha).beta1[()]
print(f"grid argmax {grid[j.argmax()]:.3f}   closed form {best:.3f}")

# %% only the gap matters
print(beta_star(101.0, 101.7, alpha).beta1[()] - best)

# %% clipping the advantage at zero never prefers repeating more than a tie
print(beta_star(1.0, 0.2, alpha, clip_advantage=True).beta1[()])
