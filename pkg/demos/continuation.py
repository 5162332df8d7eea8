"""Continuation: reaching a strong rigid charge through a ramp.

The rigid charge is raised in four stages, each warm-started from the
previous fixed point, and the iteration counts are compared with a direct
solve at the final strength.

Run with ``python demos/continuation.py`` (one to two minutes).
"""

from electroelastic.charges import DielectricParams
from electroelastic.coupled import (ContinuationSchedule, FixedPointConfig, Stage, run_continuation,
                                    solve_coupled, two_sphere_scenario)


def main():
    sc = two_sphere_scenario(1.0, h=0.5, diel=DielectricParams(kappa=0.1, kappa0=0.1))
    cfg = FixedPointConfig(tol=1e-6)
    stages = tuple(Stage(0.1, s, cfg) for s in (0.1, 0.2, 0.4, 0.8))
    for st, state in zip(stages, run_continuation(sc, ContinuationSchedule(stages))):
        print(f"stage scale {st.charge_scale:.1f}: {state.k:2d} iterations, max|u| = {state.u_max:.3e} A")
    direct = solve_coupled(sc.with_(charges=sc.charges.scaled_rigid(0.8)), cfg)
    print(f"direct solve at 0.8: {direct.k} iterations, max|u| = {direct.u_max:.3e} A")


if __name__ == "__main__":
    main()
