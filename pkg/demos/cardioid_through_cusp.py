"""Grow the cardioid 1 - zeta through its cusp and compare with the closed form.

At t = 0 the zero of g sits on the unit circle. The transition inserts a
double pole and two zeros at the reflected point; the restart then follows
the continued branch, after which plain RK4 takes over.

    python3 demos/cardioid_through_cusp.py
"""
import numpy as np

from pgflow import (
    PGState,
    RationalMap,
    ScenarioTag,
    harmonic_moments,
    integrate,
    pg_residual,
    reference_coefficients_lk,
    reference_schedule,
    restart_after_transition,
    transition_boundary,
)

LK = ScenarioTag("CardioidLK")
q = reference_schedule(LK)

start = PGState(0.0, RationalMap(-1.0, [1.0]))
print("M_0..M_2 at the cusp:", np.round(harmonic_moments(start, 2).real, 12))

prepared = transition_boundary(start, 0)
print("augmented structure:", prepared.g)

restarted = restart_after_transition(prepared, 0.05, q)
print(f"restart residual {restarted.meta['restart_residual']:.2e}")

traj = integrate(restarted, 1.0, 1e-3, q)
print(f"\n{'t':>5} {'zeta1':>12} {'closed form':>12} {'Q':>10} {'PG residual':>12}")
for s in traj.states[::190]:
    zeta1, *_, Q, _ = reference_coefficients_lk(s.t)
    print(f"{s.t:5.2f} {s.g.poles[0].real:12.8f} {zeta1:12.8f} {s.Q:10.6f} {pg_residual(s, q(s.t)):12.2e}")

end = traj.states[-1]
m = harmonic_moments(end, 3)
print(f"\nconserved M_1 = {m[1].real:.10f}, M_0 - 2Q = {m[0].real - 2 * end.Q:.10f}")
