"""Coefficient schedules and the three-term forward process.

Builds every schedule family, shows that the reverse-step noise budget never
exceeds the terminal noise level, and checks that stepping the forward
process one increment at a time lands on the closed-form marginal.

    python demos/schedules_and_forward.py
"""

import numpy as np

from resdiff.forward import TripletBatch, forward_trajectory, marginal_params
from resdiff.numerics import RandomStream
from resdiff.schedules import make_schedule
from resdiff.verify import ALL_FAMILIES

T = 1000
print(f"{'family':<15} {'abar_T':>7} {'bbar_T^2':>9} {'sum sigma^2 (eta=1)':>20}")
for fam in ALL_FAMILIES:
    s = make_schedule(fam, T, eta=1.0)
    budget = float(np.sum(s.sigma[1:] ** 2))
    print(f"{fam:<15} {s.alpha_bar[T]:7.4f} {s.beta_bar_T_sq:9.4f} {budget:20.6f}")

# DDIM-derived families keep their native terminal values unless the CLI's
# normalize_terminal option rescales them, hence abar_T < 1 for linear.

# Each step adds alpha_t * I_res and beta_t * noise; after t steps the state
# should have mean I_0 + abar_t * I_res and standard deviation bbar_t.
s = make_schedule("dec-inc", 50)
n = 100_000
trip = TripletBatch.from_pair(np.full((n, 1), 0.5), np.full((n, 1), -0.5))
traj = forward_trajectory(trip, s, RandomStream(0))
print("\n  t   empirical mean / closed form    empirical sd / closed form")
for t in (1, 10, 25, 50):
    c0, c_res, sd = marginal_params(t, s)
    x = traj[t][:, 0]
    print(f"{t:3d}   {x.mean():+.4f} / {c0 * 0.5 + c_res * -1.0:+.4f}"
          f"               {x.std():.4f} / {sd:.4f}")
