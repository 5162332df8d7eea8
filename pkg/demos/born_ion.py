"""Born ion: the three-dimensional reaction field against the radial reference.

A unit charge sits at the centre of a unit ball (eps_m = 2) in water
(eps_s = 80).  The reaction potential at the charge is computed on three
meshes and compared with the one-dimensional solution, with and without
salt.

Run with ``python demos/born_ion.py``.
"""

import numpy as np

from electroelastic.charges import ChargeSystem, DielectricParams
from electroelastic.coupled import ball_mesh
from electroelastic.pbe import solve_pbe
from electroelastic.radial import RadialConfig, radial_surface_force, solve_radial_pb


def main():
    charge = ChargeSystem(np.zeros((1, 3)), [1.0], [1.0], [True])
    for kappa in (0.0, 1.0):
        ref = solve_radial_pb(RadialConfig(kappa=kappa))
        print(f"kappa = {kappa:g} 1/A: radial phi_r(0) = {ref.phi_r[0]:.6f}, "
              f"surface force = {radial_surface_force(ref):.5f}")
        for h in (0.5, 0.25, 0.125):
            mesh = ball_mesh(1.0, 4.0, h)
            d = solve_pbe(mesh, None, charge, DielectricParams(kappa=kappa))
            val = float(mesh.interpolate(d.phi_r, np.zeros((1, 3)))[0])
            err = abs(val - ref.phi_r[0]) / abs(ref.phi_r[0])
            print(f"  h = {h:5.3f}  vertices {mesh.n_vertices:7d}  phi_r(0) = {val:.6f}  "
                  f"rel. error {err:.2e}  Newton steps {len(d.trace) - 1}")


if __name__ == "__main__":
    main()
