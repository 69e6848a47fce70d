"""Solve the mean-field equilibrium and look at what the players do.

Run:  python demos/solve_equilibrium.py
"""

import numpy as np

from inspectgame import ModelParams, TimeGrid, solve_mfg_fixed_point
from inspectgame.model import best_response_payoff

p = ModelParams()
sol = solve_mfg_fixed_point(p, TimeGrid(200, p.T), (0.5, 0.3, 0.2))
print(f"converged in {sol.iterations} iterations, residual {sol.residual:.1e}, "
      f"contraction estimate {sol.contraction_estimate:.3f}")

# mass moves up the crime levels and the inspector raises the budget to match
for k in (0, 50, 100, 150, 200):
    t = sol.grid.nodes[k]
    x = np.round(sol.X[k], 4)
    print(f"t={t:.2f}  X={x}  alpha*={sol.alpha[k]:.4f}  q*(1->2)={sol.qstar[k, 0, 1]:.4f}")

print("inspectee values at t=0:", np.round(sol.V[0], 4))
u = best_response_payoff(sol.X, p)
print(f"inspector running payoff ranges over [{u.min():.4f}, {u.max():.4f}]")
