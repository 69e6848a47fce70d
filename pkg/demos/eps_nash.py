"""How much can one inspectee gain by leaving the equilibrium policy?

Paired Monte Carlo: every deviation shares its random streams with the
conforming run, so the difference isolates the tagged player.

Run:  python demos/eps_nash.py
"""

from inspectgame import ModelParams, TimeGrid, solve_mfg_fixed_point
from inspectgame.epsnash import DeviationFamily, estimate_eps

p = ModelParams()
sol = solve_mfg_fixed_point(p, TimeGrid(200, p.T), (0.5, 0.3, 0.2))

for N in (50, 400):
    rep = estimate_eps(N, sol, DeviationFamily(), seed=3, R=500, threads=4)
    print(f"N={N}")
    for r in rep.results:
        d = r.difference
        print(f"  {r.name:15s} gain {d.mean:+.5f} +- {d.half_width:.5f}")
    g = rep.inspector_gap
    print(f"  eps={rep.eps:.2e}  inspector plug-in gap {g.mean:.5f} +- {g.half_width:.5f}")
