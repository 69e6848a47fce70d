"""Simulate N inspectees under the equilibrium policy and compare with the limit.

Run:  python demos/simulate_population.py
"""

import numpy as np

from inspectgame import ModelParams, TimeGrid, solve_mfg_fixed_point
from inspectgame.population import PopulationState, round_counts, run_replications, simulate_population

p = ModelParams()
sol = solve_mfg_fixed_point(p, TimeGrid(200, p.T), (0.5, 0.3, 0.2))
pol = sol.policy()

traj = simulate_population(100, pol, PopulationState(round_counts(sol.X[0], 100)), p, seed=1)
print(f"one path at N=100: {traj.times.size} switches, final counts {traj.replay()[-1]}")

for N in (50, 200, 800):
    out = run_replications(N, pol, round_counts(sol.X[0], N), p, seed=2, R=1000,
                           functional=lambda b: {"xT": b.counts()[:, -1] / b.N})
    xT = out["xT"]
    sd = xT.std(axis=0, ddof=1)
    print(f"N={N:4d}  mean X^N(T)={np.round(xT.mean(axis=0), 4)}  "
          f"sd*sqrt(N)={np.round(sd * np.sqrt(N), 3)}")
print(f"limit X(T) = {np.round(sol.X[-1], 4)}")
