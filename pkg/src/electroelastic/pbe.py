"""Regularised Poisson-Boltzmann solve on the reference configuration.

The potential is split as ``phi = G + phi_l + phi_n``.  ``phi_l`` absorbs the
dielectric jump of the Coulomb field through an interface source and the
far-field datum on the box; ``phi_n`` carries the ionic response and is found
by a damped Newton method that decreases the convex energy

    E(w) = int eps/2 F grad w . grad w + J kappa^2 cosh(w + G) + <f_G, w>

at every accepted step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .charges import ChargeSystem, DielectricParams, chunked, eval_G, eval_g_boundary, eval_grad_G
from .fem import SPDSolver, _scatter, assemble_scalar, quadrature_points
from .mesh import FaceTag, Mesh
from .piola import DisplacementField, PiolaFields
from .quadrature import tet_rule, tri_rule

SINH_LIMIT = 700.0


class ClippedArgumentError(FloatingPointError):
    """``|phi_n + phi_l + G|`` exceeded the overflow guard."""


class NewtonDivergence(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


class InternalConsistencyError(RuntimeError):
    """A property that the discrete solution must satisfy was violated."""


@dataclass(frozen=True)
class PBEConfig:
    tol: float = 1e-10
    max_newton: int = 50
    backtrack: float = 0.5
    armijo: float = 1e-4
    quad_order: int = 4
    max_backtracks: int = 40
    linear_rtol: float = 1e-13


@dataclass(frozen=True)
class NewtonStep:
    iteration: int
    residual: float
    energy: float
    damping: float


@dataclass(frozen=True, eq=False)
class PotentialDecomposition:
    """Nodal ``phi_l`` and ``phi_n`` together with everything needed to rebuild G."""

    mesh: Mesh
    piola: PiolaFields
    disp: DisplacementField
    charges: ChargeSystem
    images: ChargeSystem
    diel: DielectricParams
    phi_l: np.ndarray
    phi_n: np.ndarray
    mode: str
    trace: list = field(default_factory=list)

    @property
    def phi_r(self) -> np.ndarray:
        return self.phi_l + self.phi_n

    @property
    def energy(self) -> float:
        return self.trace[-1].energy if self.trace else float("nan")

    def G(self, x) -> np.ndarray:
        """Coulomb field of the displaced charges at physical points."""
        return eval_G(self.images, self.diel.eps_m, x)


class _Problem:
    """Assembled operators for one configuration (mesh, deformation, charges, medium)."""

    def __init__(self, mesh: Mesh, piola: PiolaFields, charges: ChargeSystem,
                 diel: DielectricParams, disp: DisplacementField | None, order: int):
        self.mesh, self.piola, self.diel, self.order = mesh, piola, diel, order
        self.disp = disp if disp is not None else DisplacementField.zero(mesh)
        self.charges = charges
        d = self.disp.values
        if len(charges) and np.any(d):
            self.images = charges.moved(charges.positions + self.disp.at(charges.positions))
        else:
            self.images = charges

        eps = diel.cell_eps(mesh)
        K = eps[:, None, None] * piola.F
        self.A = assemble_scalar(mesh, np.arange(mesh.n_cells), K)
        self.outer = mesh.nodes_on(FaceTag.OUTER)
        mask = np.ones(mesh.n_vertices, dtype=bool)
        mask[self.outer] = False
        self.free = np.flatnonzero(mask)
        self.A_ff = self.A[self.free][:, self.free].tocsr()

        x_out = mesh.vertices[self.outer] + d[self.outer]
        if len(charges):
            self.datum = (chunked(eval_g_boundary, self.images, x_out, diel)
                          - chunked(eval_G, self.images, x_out, diel.eps_m))
        else:
            self.datum = np.zeros(len(self.outer))
        self.b_G = self._interface_source()

        k2 = diel.cell_kappa2(mesh)
        self.wet = np.flatnonzero(k2 > 0)
        bary, w = tet_rule(order)
        self.bary = bary
        if len(self.wet):
            xq = quadrature_points(mesh, self.wet, order)
            if np.any(d):
                xq = xq + np.einsum("qa,cai->cqi", bary, d[mesh.cells[self.wet]])
            shape = xq.shape[:2]
            Gq = chunked(eval_G, self.images, xq.reshape(-1, 3), diel.eps_m) if len(charges) \
                else np.zeros(shape[0] * shape[1])
            self.Gq = Gq.reshape(shape)
            self.cq = (piola.J[self.wet] * k2[self.wet] * mesh.volumes[self.wet])[:, None] * w[None, :]
        else:
            self.Gq = np.zeros((0, len(w)))
            self.cq = np.zeros((0, len(w)))
        self.wet_conn = mesh.cells[self.wet]

    def _interface_source(self) -> np.ndarray:
        """``<f_G, v> = -int_Gamma [eps] F grad(G o Phi) . n v`` with n leaving the molecule."""
        mesh, diel = self.mesh, self.diel
        out = np.zeros(mesh.n_vertices)
        if len(self.charges) == 0:
            return out
        jump = diel.eps_s - diel.eps_m
        if jump == 0.0:
            return out
        bary, w = tri_rule(self.order)
        _, nrm, area = mesh.face_geometry
        d = self.disp.values
        for tag in diel.jump_tags():
            ids = mesh.faces_tagged(tag)
            if len(ids) == 0:
                continue
            tri = mesh.faces[ids]
            solvent = mesh.face_cells[ids, 1]
            xq = np.einsum("qa,fai->fqi", bary, mesh.vertices[tri] + d[tri])
            gq = chunked(eval_grad_G, self.images, xq.reshape(-1, 3), diel.eps_m).reshape(xq.shape)
            P = self.piola
            vec = P.J[solvent][:, None, None] * np.einsum("fij,fqj->fqi", P.inv_grad_phi[solvent], gq)
            flux = np.einsum("fqi,fi->fq", vec, nrm[ids])
            contrib = -jump * np.einsum("q,f,fq,qa->fa", w, area[ids], flux, bary)
            np.add.at(out, tri, contrib)
        return out

    # -- nonlinear pieces -------------------------------------------------
    def z_at_q(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("qa,ca->cq", self.bary, w[self.wet_conn]) + self.Gq

    def reaction(self, z: np.ndarray, linear: bool) -> tuple[np.ndarray, np.ndarray]:
        """Nodal ``int J kappa^2 s(z) v`` and the per-point derivative weights."""
        if linear:
            s, ds = z, np.ones_like(z)
        else:
            if z.size and np.max(np.abs(z)) > SINH_LIMIT:
                raise ClippedArgumentError(f"sinh argument {np.max(np.abs(z)):.4g} exceeds {SINH_LIMIT}")
            s, ds = np.sinh(z), np.cosh(z)
        contrib = np.einsum("cq,qa->ca", self.cq * s, self.bary)
        out = np.zeros(self.mesh.n_vertices)
        np.add.at(out, self.wet_conn, contrib)
        return out, ds

    def potential_part(self, z: np.ndarray, linear: bool) -> float:
        if linear:
            return float(np.sum(self.cq * (1.0 + 0.5 * z * z)))
        if z.size and np.max(np.abs(z)) > SINH_LIMIT:
            raise ClippedArgumentError("cosh argument exceeds the overflow guard")
        return float(np.sum(self.cq * np.cosh(z)))

    def energy(self, w: np.ndarray, linear: bool) -> float:
        z = self.z_at_q(w)
        return 0.5 * float(w @ (self.A @ w)) + self.potential_part(z, linear) + float(self.b_G @ w)

    def jacobian(self, ds: np.ndarray) -> sp.csr_matrix:
        J = self.A
        if len(self.wet):
            ke = np.einsum("cq,qa,qb->cab", self.cq * ds, self.bary, self.bary)
            J = J + _scatter(self.mesh.n_vertices, self.wet_conn, ke)
        return J[self.free][:, self.free].tocsr()


def _problem(mesh, piola, charges, diel, disp, order):
    if piola is None:
        piola = PiolaFields.identity(mesh)
    return _Problem(mesh, piola, charges, diel, disp, order)


def _linear_solve(prob: _Problem, rtol: float) -> np.ndarray:
    phi = np.zeros(prob.mesh.n_vertices)
    phi[prob.outer] = prob.datum
    rhs = -(prob.b_G + prob.A @ phi)[prob.free]
    if np.any(rhs):
        phi[prob.free] = SPDSolver(prob.A_ff, rtol).solve(rhs)
    return phi


def solve_linear_component(mesh: Mesh, piola: PiolaFields | None, charges: ChargeSystem,
                           diel: DielectricParams, disp: DisplacementField | None = None,
                           cfg: PBEConfig = PBEConfig()) -> np.ndarray:
    """Nodal ``phi_l``: interface source from the Coulomb field plus the far-field datum."""
    prob = _problem(mesh, piola, charges, diel, disp, cfg.quad_order)
    return _linear_solve(prob, cfg.linear_rtol)


def _newton(prob: _Problem, phi_l: np.ndarray, cfg: PBEConfig, linear: bool):
    free = prob.free
    w = phi_l.copy()
    phi_n = np.zeros_like(phi_l)
    trace = []
    z = prob.z_at_q(w)
    nl, ds = prob.reaction(z, linear)
    grad = prob.A @ w + prob.b_G + nl
    res = grad[free]
    energy = prob.energy(w, linear)
    r0 = float(np.linalg.norm(res))
    trace.append(NewtonStep(0, r0, energy, 0.0))
    scale = max(r0, float(np.linalg.norm(prob.b_G[free])), float(np.linalg.norm(nl[free])))
    target = cfg.tol * max(scale, 1e-300)
    it = 0
    while trace[-1].residual > target:
        if it >= cfg.max_newton:
            raise NewtonDivergence(f"no convergence in {cfg.max_newton} Newton steps", trace)
        it += 1
        Jf = prob.jacobian(ds)
        d_free = -SPDSolver(Jf, cfg.linear_rtol).solve(res)
        d = np.zeros_like(w)
        d[free] = d_free
        slope = float(res @ d_free)
        if slope >= 0:
            raise NewtonDivergence("Newton direction is not a descent direction", trace)
        Ad = prob.A @ d
        quad_lin = float((prob.A @ w + prob.b_G) @ d)
        quad_sq = float(d @ Ad)
        dq = np.einsum("qa,ca->cq", prob.bary, d[prob.wet_conn])
        t = 1.0
        for _ in range(cfg.max_backtracks):
            try:
                dE = t * quad_lin + 0.5 * t * t * quad_sq + _potential_change(prob, z, dq, t, linear)
            except FloatingPointError:
                dE = np.inf
            if dE <= cfg.armijo * t * slope:
                break
            t *= cfg.backtrack
        else:
            if np.linalg.norm(d_free, np.inf) <= 1e-13 * (1 + np.abs(w).max()):
                break  # already at rounding level
            raise NewtonDivergence("line search failed to decrease the energy", trace)
        w = w + t * d
        phi_n = phi_n + t * d
        z = prob.z_at_q(w)
        nl, ds = prob.reaction(z, linear)
        res = (prob.A @ w + prob.b_G + nl)[free]
        energy = energy + dE
        trace.append(NewtonStep(it, float(np.linalg.norm(res)), energy, t))
        if np.linalg.norm(t * d_free, np.inf) <= 1e-14 * (1 + np.abs(w).max()):
            break
    return phi_n, trace


def _potential_change(prob: _Problem, z, dq, t, linear):
    if linear:
        return float(np.sum(prob.cq * (t * z * dq + 0.5 * (t * dq) ** 2)))
    half = 0.5 * t * dq
    arg = z + half
    if arg.size and (np.max(np.abs(arg)) > SINH_LIMIT or np.max(np.abs(z + t * dq)) > SINH_LIMIT):
        raise FloatingPointError("trial step leaves the overflow guard")
    return float(np.sum(prob.cq * 2.0 * np.sinh(arg) * np.sinh(half)))


def solve_nonlinear_component(mesh: Mesh, piola: PiolaFields | None, charges: ChargeSystem,
                              diel: DielectricParams, phi_l: np.ndarray,
                              cfg: PBEConfig = PBEConfig(), linearized: bool = False,
                              disp: DisplacementField | None = None):
    """Newton solve for ``phi_n`` given ``phi_l``; returns ``(phi_n, trace)``."""
    prob = _problem(mesh, piola, charges, diel, disp, cfg.quad_order)
    return _newton(prob, np.asarray(phi_l, dtype=float), cfg, linearized)


def _check_bound(prob: _Problem, phi_l: np.ndarray, phi_n: np.ndarray) -> None:
    if len(prob.wet) == 0:
        return
    nodes = np.unique(prob.wet_conn)
    x = prob.mesh.vertices[nodes] + prob.disp.values[nodes]
    G = chunked(eval_G, prob.images, x, prob.diel.eps_m) if len(prob.charges) else np.zeros(len(nodes))
    bound = np.abs(phi_l[nodes]).max() + np.abs(G).max() + 1e-8
    got = np.abs(phi_n).max()
    if got > bound:
        raise InternalConsistencyError(f"|phi_n|_inf = {got:.6g} exceeds the bound {bound:.6g}")


def solve_pbe(mesh: Mesh, piola: PiolaFields | None, charges: ChargeSystem,
              diel: DielectricParams, cfg: PBEConfig = PBEConfig(), mode: str = "nonlinear",
              disp: DisplacementField | None = None) -> PotentialDecomposition:
    """Solve for ``phi_l`` and ``phi_n``.

    ``mode`` is ``"nonlinear"`` or ``"linearized"`` (sinh replaced by its
    argument).  Raises :class:`NewtonDivergence` if Newton stalls and
    :class:`InternalConsistencyError` if the L-infinity bound fails.
    """
    if mode not in ("nonlinear", "linearized"):
        raise ValueError(f"unknown mode {mode!r}")
    prob = _problem(mesh, piola, charges, diel, disp, cfg.quad_order)
    phi_l = _linear_solve(prob, cfg.linear_rtol)
    phi_n, trace = _newton(prob, phi_l, cfg, mode == "linearized")
    _check_bound(prob, phi_l, phi_n)
    return PotentialDecomposition(mesh, prob.piola, prob.disp, charges, prob.images, diel,
                                  phi_l, phi_n, mode, trace)


def pbe_residual(decomp: PotentialDecomposition, order: int = 4) -> np.ndarray:
    """Discrete weak residual of the reaction-field equation at the free nodes."""
    prob = _problem(decomp.mesh, decomp.piola, decomp.charges, decomp.diel, decomp.disp, order)
    w = decomp.phi_r
    nl, _ = prob.reaction(prob.z_at_q(w), decomp.mode == "linearized")
    return (prob.A @ w + prob.b_G + nl)[prob.free]


def eval_energy(mesh: Mesh, piola: PiolaFields | None, charges: ChargeSystem,
                diel: DielectricParams, w: np.ndarray, disp: DisplacementField | None = None,
                linearized: bool = False, order: int = 4) -> float:
    """Energy of ``w = phi_l + phi_n`` (constant terms included)."""
    prob = _problem(mesh, piola, charges, diel, disp, order)
    return prob.energy(np.asarray(w, dtype=float), linearized)
