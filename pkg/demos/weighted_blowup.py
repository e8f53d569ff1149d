"""Weighted blow-up of the unit disk against |1 - zeta|^2 and a star-shapedness test.

The grown domain is the saturated set of a partial balayage; its radial
profile is printed along a few rays.

    python3 demos/weighted_blowup.py
"""
import math

import numpy as np

from pgflow import Grid, RationalMap, ScenarioTag, reference_state, star_shaped, weighted_blowup

Q = reference_state(ScenarioTag("CardioidLK"), 0.3)[0].Q
grid = Grid.centered(1.6, 0.01)
out = weighted_blowup(RationalMap(-1.0, [1.0]), Q, grid)

d = out.diagnostics
print(f"Q = {Q:.6f}, PSOR sweeps {out.iterations}, residual {out.residual:.1e}")
print(f"weighted mass added {d['added_mass']:.6f} vs 2 pi Q = {d['target_mass']:.6f}")

geometric, vmax = star_shaped(out)
print(f"star-shaped: {geometric}, max r du/dr outside the disk {vmax:.3g}")

sat = out.saturated
print("\nangle   outer radius")
for deg in range(0, 360, 45):
    r = np.arange(0, 1.6, grid.h / 2)
    inside = sat.sample(r * np.exp(1j * math.radians(deg))) > 0
    print(f"{deg:5d}   {r[np.nonzero(inside)[0][-1]]:.3f}")
