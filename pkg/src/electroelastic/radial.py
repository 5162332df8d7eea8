"""Spherically symmetric reference solutions for a single centred ion.

The reaction field ``u = phi - q/(eps_m r)`` is solved on ``[0, r_out]``:
harmonic inside the ball, ``-eps_s lap u + kappa^2 sinh(u + G) = 0`` outside,
with the flux jump ``eps_s u'(R+) - eps_m u'(R-) = (eps_s - eps_m) q / (eps_m R^2)``
and the linearised screened far field as datum at ``r_out``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded


def born_reaction_potential(q: float, R: float, eps_m: float, eps_s: float,
                            kappa: float = 0.0) -> float:
    """Closed-form reaction potential at the centre for the linearised problem.

    Outside the ball ``phi = A exp(-k r) / r`` with ``k = kappa / sqrt(eps_s)``;
    matching flux gives ``A = q exp(kR) / (eps_s (1 + kR))`` and the interior
    constant follows from continuity at ``r = R``.
    """
    k = kappa / np.sqrt(eps_s)
    return q / (eps_s * (1.0 + k * R) * R) - q / (eps_m * R)


@dataclass(frozen=True)
class RadialConfig:
    q: float = 1.0
    R: float = 1.0
    eps_m: float = 2.0
    eps_s: float = 80.0
    kappa: float = 0.0
    r_out: float = 20.0
    n_points: int = 2000
    tol: float = 1e-12
    max_newton: int = 50


@dataclass(frozen=True)
class RadialSolution:
    config: RadialConfig
    r: np.ndarray
    phi_r: np.ndarray
    iterations: int
    linearized: bool
    du_outside: float = float("nan")

    @property
    def interface_index(self) -> int:
        return int(np.argmin(np.abs(self.r - self.config.R)))

    @property
    def phi(self) -> np.ndarray:
        """Total potential; infinite at the origin."""
        c = self.config
        with np.errstate(divide="ignore"):
            return self.phi_r + c.q / (c.eps_m * self.r)

    def derivative_inside(self) -> float:
        """phi'(R-) from the discrete interior solution."""
        c, i = self.config, self.interface_index
        du = (self.phi_r[i] - self.phi_r[i - 1]) / (self.r[i] - self.r[i - 1])
        return du - c.q / (c.eps_m * c.R**2)

    def derivative_outside(self) -> float:
        """phi'(R+) recovered from the conservative flux through the first solvent cell."""
        c = self.config
        return self.du_outside - c.q / (c.eps_m * c.R**2)


def _grid(cfg: RadialConfig) -> np.ndarray:
    n = cfg.n_points
    if n < 200:
        raise ValueError("the radial oracle needs at least 200 grid points")
    if not 0 < cfg.R < cfg.r_out:
        raise ValueError("require 0 < R < r_out")
    # uniform spacing on each side with a node exactly at r = R
    n_in = max(2, int(round((n - 1) * cfg.R / cfg.r_out)))
    n_out = n - 1 - n_in
    inner = np.linspace(0.0, cfg.R, n_in + 1)
    outer = np.linspace(cfg.R, cfg.r_out, n_out + 1)
    return np.concatenate([inner, outer[1:]])


def solve_radial_pb(cfg: RadialConfig, linearized: bool = False) -> RadialSolution:
    """Finite-volume Newton solve of the radial reaction-field problem.

    Face fluxes use the weight ``r_i r_{i+1}``, which is exact for
    ``a + b/r`` so the kappa = 0 problem is reproduced to rounding.
    """
    r = _grid(cfg)
    n = len(r)
    iR = int(np.argmin(np.abs(r - cfg.R)))
    k = cfg.kappa / np.sqrt(cfg.eps_s)

    eps_face = np.where(np.arange(n - 1) < iR, cfg.eps_m, cfg.eps_s)
    wface = r[:-1] * r[1:]
    wface[0] = (0.5 * r[1]) ** 2  # first face; u is flat near the origin
    cond = eps_face * wface / np.diff(r)

    mid = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1]]])
    lo = np.maximum(mid[:-1], cfg.R)
    hi = np.maximum(mid[1:], cfg.R)
    mass = np.where(hi > lo, (hi**3 - lo**3) / 3.0, 0.0)
    mass[iR] = (mid[iR + 1] ** 3 - cfg.R**3) / 3.0
    k2 = cfg.kappa**2

    with np.errstate(divide="ignore"):
        G = np.where(r > 0, cfg.q / (cfg.eps_m * np.where(r > 0, r, 1.0)), 0.0)
    src = np.zeros(n)
    src[iR] = (cfg.eps_s - cfg.eps_m) * cfg.q / cfg.eps_m  # R^2 * flux jump
    r_end = r[-1]
    # screened far field of the linearised problem, matched to the ball radius
    u_end = (cfg.q * np.exp(-k * (r_end - cfg.R)) / (cfg.eps_s * (1.0 + k * cfg.R) * r_end)
             - cfg.q / (cfg.eps_m * r_end))

    wet = mass > 0

    def reaction(u, lin=linearized):
        f = np.zeros(n)
        df = np.zeros(n)
        z = u[wet] + G[wet]
        if lin:
            f[wet], df[wet] = k2 * mass[wet] * z, k2 * mass[wet]
            return f, df
        if np.any(np.abs(z) > 700):
            raise OverflowError("sinh argument exceeds 700 in the radial solve")
        f[wet], df[wet] = k2 * mass[wet] * np.sinh(z), k2 * mass[wet] * np.cosh(z)
        return f, df

    def residual(u, lin=linearized):
        flux = cond * np.diff(u)
        res = np.zeros(n)
        res[:-1] -= flux
        res[1:] += flux
        nl, _ = reaction(u, lin)
        res += nl + src
        res[-1] = 0.0
        return res

    def jacobian(u, lin=linearized):
        _, dnl = reaction(u, lin)
        diag = np.zeros(n)
        diag[:-1] += cond
        diag[1:] += cond
        diag += dnl
        ab = np.zeros((3, n))
        ab[0, 1:] = -cond
        ab[1] = diag
        ab[2, :-1] = -cond
        ab[1, -1] = 1.0
        ab[2, -2] = 0.0
        return ab

    u = np.full(n, u_end)
    res = residual(u, True)
    target = cfg.tol * max(np.linalg.norm(res), 1e-300)
    # the linearised problem is affine: one Newton step solves it, and its
    # solution starts the nonlinear iteration inside the basin of attraction
    u = u + solve_banded((1, 1), jacobian(u, True), -res)
    res = residual(u)
    it = 0
    while np.linalg.norm(res) > target:
        if it == cfg.max_newton:
            raise RuntimeError("radial Newton did not converge")
        it += 1
        du = solve_banded((1, 1), jacobian(u), -res)
        t = 1.0
        while True:
            trial = u + t * du
            try:
                new = residual(trial)
            except OverflowError:
                new = None
            if new is not None and (np.linalg.norm(new) <= target or
                                    np.linalg.norm(new) < (1 - 1e-4 * t) * np.linalg.norm(res)):
                break
            t *= 0.5
            if t < 1e-10:
                if np.linalg.norm(du, np.inf) <= 1e-11 * (1 + np.abs(u).max()):
                    trial, new = u, res  # already at rounding level
                    break
                raise RuntimeError("radial Newton line search failed")
        u, res = trial, new
        # a Newton direction at rounding level means the residual cannot drop further
        if np.linalg.norm(du, np.inf) <= 1e-11 * (1 + np.abs(u).max()):
            break
    flux_out = cond[iR] * (u[iR + 1] - u[iR])
    z = u[iR] + G[iR]
    half = (mid[iR + 1] ** 3 - cfg.R**3) / 3.0
    # flux at r = R+ from the face flux minus the reaction in the half cell
    flux_R = flux_out - k2 * half * (z if linearized else np.sinh(z))
    du_out = flux_R / (cfg.eps_s * cfg.R**2)
    return RadialSolution(cfg, r, u, it, linearized, du_out)


def radial_surface_force(sol: RadialSolution) -> float:
    """Normal surface force density on the ball.

    ``-(1/2)(eps_s phi'(R+)^2 - eps_m phi'(R-)^2) - kappa^2 (cosh phi(R) - 1)``;
    positive values point outward.
    """
    c = sol.config
    dm = sol.derivative_inside()
    ds = sol.derivative_outside()
    phi_R = sol.phi_r[sol.interface_index] + c.q / (c.eps_m * c.R)
    osm = 0.0 if sol.linearized else c.kappa**2 * (np.cosh(phi_R) - 1.0)
    if sol.linearized:
        osm = 0.5 * c.kappa**2 * phi_R**2
    return -0.5 * (c.eps_s * ds**2 - c.eps_m * dm**2) - osm


def write_profile_csv(sol: RadialSolution, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("r,phi_r,phi\n")
        for ri, ui, pi in zip(sol.r.tolist(), sol.phi_r.tolist(), sol.phi.tolist()):
            fh.write(f"{ri!r},{ui!r},{pi!r}\n")
