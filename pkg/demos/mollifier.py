"""Smoothing the clamped optimal rates: cost in rates and in payoff.

Run:  python demos/mollifier.py
"""

import numpy as np

from inspectgame import ModelParams, TimeGrid, solve_mfg_fixed_point
from inspectgame.epsnash import mollify_compare
from inspectgame.model import clamp_rate, mollify_rates

p = ModelParams()
z = np.linspace(-0.5, 2.5, 7)
print("z          ", np.round(z, 3))
print("clamp      ", np.round(clamp_rate(z, p.Q), 4))
print("eta=0.5    ", np.round(mollify_rates(z, 0.5, p), 4))

sol = solve_mfg_fixed_point(p, TimeGrid(200, p.T), (0.5, 0.3, 0.2))
for row in mollify_compare(sol, [0.5, 0.25, 0.1, 0.01]).rows:
    print(f"eta={row.eta:<5}  sup|q_eta - q*|={row.sup_gap:.2e}  payoff gap={row.payoff_gap:.2e}")
