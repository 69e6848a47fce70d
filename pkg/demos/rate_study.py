"""Propagator gap against N on log-log axes, with the smoothed policy.

Run:  python demos/rate_study.py
"""

from inspectgame import ModelParams, TimeGrid, solve_mfg_fixed_point
from inspectgame.epsnash import DeviationFamily, rate_study

p = ModelParams()
sol = solve_mfg_fixed_point(p, TimeGrid(200, p.T), (0.5, 0.3, 0.2), eta=0.1)
rep = rate_study(sol, [50, 100, 200, 400, 800], DeviationFamily(), seed=1, R=1000,
                 threads=4, with_eps=False)
for r in rep.rows:
    print(f"N={r.N:4d}  gap {r.gap:.3e} +- {r.gap_ci:.1e}")
fit = rep.gap_fit
print(f"slope {fit.slope:.3f}, 95% CI ({fit.slope_ci[0]:.3f}, {fit.slope_ci[1]:.3f})")
