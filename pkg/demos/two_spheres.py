"""Two spheres: the coupled fixed point as the rigid charge grows.

A flexible charged ball is deformed by the field of a rigid charged ball
three radii away.  For each rigid-charge scale the relaxed fixed-point
iteration is run to convergence; the measured contraction factor, the
largest displacement and the four-step force ledger are printed.

Run with ``python demos/two_spheres.py`` (about a minute).
"""

from electroelastic.coupled import build_ledger, residual_weak_form, solve_coupled, two_sphere_scenario


def main():
    for s in (0.1, 0.2, 0.4):
        state = solve_coupled(two_sphere_scenario(s, h=0.5))
        print(f"scale {s:.1f}: {state.k:2d} iterations, contraction {state.contraction_factor:.3f}, "
              f"max|u| = {state.u_max:.3e} A, min J = {state.piola.min_J:.6f}, "
              f"weak residual {residual_weak_form(state):.1e}")
        ledger = build_ledger(state)
        for e in ledger.entries:
            print(f"    {e.name:14s} surface {e.delta.surface_norm():.3e}  body {e.delta.body_norm():.3e}")
        print(f"    identity error {ledger.identity_error:.1e}")


if __name__ == "__main__":
    main()
