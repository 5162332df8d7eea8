"""St Venant-Kirchhoff elasticity of the flexible molecule.

P1 vector elements on the flexible cells, clamped on the GAMMA_F0 cap,
loaded by a body force and a traction on the rest of the interface.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import SPDSolver, load_at_quadrature
from .mesh import FaceTag, Mesh, Region, _face_key


class InadmissibleLoadError(RuntimeError):
    """No admissible Newton iterate (``J > 0``) could be found."""


class ElasticNonConvergence(RuntimeError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass(frozen=True)
class ElasticParams:
    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ValueError("Lame parameters must be positive")


def strain(grad_u: np.ndarray) -> np.ndarray:
    """Green-Lagrange strain ``(grad u^T + grad u + grad u^T grad u) / 2``."""
    gT = np.swapaxes(grad_u, -1, -2)
    return 0.5 * (gT + grad_u + gT @ grad_u)


def second_pk(E: np.ndarray, params: ElasticParams) -> np.ndarray:
    tr = np.trace(E, axis1=-2, axis2=-1)
    return params.lam * tr[..., None, None] * np.eye(3) + 2.0 * params.mu * E


def stress(grad_u: np.ndarray, params: ElasticParams) -> np.ndarray:
    """First Piola-Kirchhoff stress ``(I + grad u)(lam tr E I + 2 mu E)``."""
    return (np.eye(3) + grad_u) @ second_pk(strain(grad_u), params)


def energy_density(grad_u: np.ndarray, params: ElasticParams) -> np.ndarray:
    E = strain(grad_u)
    tr = np.trace(E, axis1=-2, axis2=-1)
    return 0.5 * params.lam * tr**2 + params.mu * np.einsum("...ij,...ij->...", E, E)


def tangent_modulus(grad_u: np.ndarray, params: ElasticParams) -> np.ndarray:
    """``dP_ik / dG_pq`` per cell, shape (..., 3, 3, 3, 3)."""
    F = np.eye(3) + grad_u
    S = second_pk(strain(grad_u), params)
    FFt = F @ np.swapaxes(F, -1, -2)
    I = np.eye(3)
    C = np.einsum("ip,...qk->...ikpq", I, S)
    C = C + params.lam * np.einsum("...ik,...pq->...ikpq", F, F)
    C = C + params.mu * (np.einsum("...iq,...pk->...ikpq", F, F) + np.einsum("...ip,qk->...ikpq", FFt, I))
    return C


@dataclass(frozen=True, eq=False)
class LoadSet:
    """Body force at the quadrature points of the flexible cells and traction per GAMMA_F face."""

    mesh: Mesh
    body: np.ndarray
    traction: np.ndarray
    order: int = 4

    @staticmethod
    def zero(mesh: Mesh, order: int = 4) -> "LoadSet":
        from .quadrature import tet_rule

        nq = len(tet_rule(order)[1])
        return LoadSet(mesh, np.zeros((len(mesh.cells_in(Region.MF)), nq, 3)),
                       np.zeros((len(mesh.faces_tagged(FaceTag.GAMMA_F)), 3)), order)


def clamped_face_mask(mesh: Mesh) -> np.ndarray:
    """Boolean mask over the GAMMA_F faces that also belong to GAMMA_F0."""
    gf = mesh.faces_tagged(FaceTag.GAMMA_F)
    f0 = mesh.faces_tagged(FaceTag.GAMMA_F0)
    keys = _face_key(mesh.faces[gf], mesh.n_vertices)
    return np.isin(keys, _face_key(mesh.faces[f0], mesh.n_vertices))


class _ElasticSystem:
    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.cells = mesh.cells_in(Region.MF)
        self.nodes = mesh.nodes_in(Region.MF)
        local = np.full(mesh.n_vertices, -1)
        local[self.nodes] = np.arange(len(self.nodes))
        self.local = local
        self.conn = local[mesh.cells[self.cells]]
        self.g = mesh.grads[self.cells]
        self.vol = mesh.volumes[self.cells]
        n = len(self.nodes)
        self.ndof = 3 * n
        clamp = local[mesh.nodes_on(FaceTag.GAMMA_F0)]
        if len(clamp) == 0:
            raise ValueError("no GAMMA_F0 faces: the elastic problem is not clamped")
        fixed = np.zeros(self.ndof, dtype=bool)
        fixed[(3 * clamp[:, None] + np.arange(3)).ravel()] = True
        self.free = np.flatnonzero(~fixed)
        dofs = 3 * self.conn[:, :, None] + np.arange(3)
        self.dofs = dofs.reshape(len(self.cells), 12)
        self.gf = mesh.faces_tagged(FaceTag.GAMMA_F)
        self.loaded = ~clamped_face_mask(mesh)
        self.nullspace = self._rigid_modes()

    def _rigid_modes(self) -> np.ndarray:
        X = self.mesh.vertices[self.nodes]
        X = X - X.mean(axis=0)
        B = np.zeros((len(self.nodes), 3, 6))
        for k in range(3):
            B[:, k, k] = 1.0
        B[:, 0, 3], B[:, 1, 3] = -X[:, 1], X[:, 0]
        B[:, 1, 4], B[:, 2, 4] = -X[:, 2], X[:, 1]
        B[:, 0, 5], B[:, 2, 5] = X[:, 2], -X[:, 0]
        return B.reshape(self.ndof, 6)[self.free]

    def grad_u(self, U: np.ndarray) -> np.ndarray:
        return np.einsum("cak,cai->cki", U[self.conn], self.g)

    def internal(self, U: np.ndarray) -> np.ndarray:
        P = stress(self.grad_u(U), self._params)
        fe = self.vol[:, None, None] * np.einsum("cki,cai->cak", P, self.g)
        out = np.zeros((len(self.nodes), 3))
        np.add.at(out, self.conn, fe)
        return out.ravel()

    def tangent(self, U: np.ndarray) -> sp.csr_matrix:
        C = tangent_modulus(self.grad_u(U), self._params)
        ke = np.einsum("c,cak,cikpq,cbq->caibp", self.vol, self.g, C, self.g).reshape(-1, 12, 12)
        rows = np.repeat(self.dofs, 12, axis=1).ravel()
        cols = np.tile(self.dofs, (1, 12)).ravel()
        K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()
        return K

    def external(self, loads: LoadSet) -> np.ndarray:
        mesh = self.mesh
        fb = load_at_quadrature(mesh, self.cells, loads.body, loads.order)[self.nodes]
        tr = np.asarray(loads.traction, dtype=float)
        if np.any(tr[~self.loaded]):
            warnings.warn("nonzero traction on clamped faces is ignored", RuntimeWarning, stacklevel=3)
        _, _, area = mesh.face_geometry
        ids = self.gf[self.loaded]
        fs = np.zeros((mesh.n_vertices, 3))
        contrib = (area[ids][:, None] * tr[self.loaded] / 3.0)
        for a in range(3):
            np.add.at(fs, mesh.faces[ids, a], contrib)
        return (fb + fs[self.nodes]).ravel()

    def energy(self, U: np.ndarray, f: np.ndarray) -> float:
        W = energy_density(self.grad_u(U), self._params)
        return float(np.sum(self.vol * W) - f @ U.ravel())


_SYSTEMS = {}


def _system(mesh: Mesh, params: ElasticParams) -> _ElasticSystem:
    key = id(mesh)
    sysm = _SYSTEMS.get(key)
    if sysm is None or sysm.mesh is not mesh:
        sysm = _ElasticSystem(mesh)
        _SYSTEMS.clear()
        _SYSTEMS[key] = sysm
    sysm._params = params
    return sysm


@dataclass(frozen=True, eq=False)
class ElasticSolution:
    mesh: Mesh
    u: np.ndarray
    iterations: int
    residual_history: list = field(default_factory=list)
    energy: float = 0.0
    volume_change: float = 0.0


def elastic_residual(mesh: Mesh, u: np.ndarray, loads: LoadSet, params: ElasticParams) -> np.ndarray:
    """Discrete weak residual ``int P : grad v - <f, v>`` for every flexible DOF.

    Entries for clamped DOFs are zeroed.  ``u`` is a nodal (N, 3) array.
    """
    s = _system(mesh, params)
    U = np.asarray(u, dtype=float)[s.nodes]
    r = s.internal(U) - s.external(loads)
    out = np.zeros(s.ndof)
    out[s.free] = r[s.free]
    return out


def elastic_energy(mesh: Mesh, u: np.ndarray, loads: LoadSet, params: ElasticParams) -> float:
    s = _system(mesh, params)
    return s.energy(np.asarray(u, dtype=float)[s.nodes], s.external(loads))


def volume_change_diagnostic(mesh: Mesh, u: np.ndarray) -> float:
    """``int_{Gamma_F} Phi . cof(grad Phi) n dA - 3 |Omega_mf|``.

    This is three times the volume gained by the flexible region; it
    vanishes for volume-preserving deformations.
    """
    ids = mesh.faces_tagged(FaceTag.GAMMA_F)
    cells = mesh.face_cells[ids, 0]
    _, nrm, area = mesh.face_geometry
    u = np.asarray(u, dtype=float)
    A = np.eye(3) + np.einsum("cak,cai->cki", u[mesh.cells[cells]], mesh.grads[cells])
    cof = np.linalg.det(A)[:, None, None] * np.linalg.inv(A).transpose(0, 2, 1)
    tri = mesh.faces[ids]
    phi_mean = (mesh.vertices[tri] + u[tri]).mean(axis=1)
    flux = np.einsum("fi,fij,fj->f", phi_mean, cof, nrm[ids]) * area[ids]
    vol = mesh.volumes[mesh.cells_in(Region.MF)].sum()
    return float(flux.sum() - 3.0 * vol)


def solve_elasticity(mesh: Mesh, loads: LoadSet, params: ElasticParams, tol: float = 1e-10,
                     max_iter: int = 50, u0: np.ndarray | None = None) -> ElasticSolution:
    """Newton solve with backtracking on the residual norm.

    Converges when the free residual is below ``tol`` times the load norm.
    """
    s = _system(mesh, params)
    f = s.external(loads)
    U = np.zeros((len(s.nodes), 3)) if u0 is None else np.asarray(u0, dtype=float)[s.nodes].copy()
    fnorm = float(np.linalg.norm(f[s.free]))
    r = (s.internal(U) - f)[s.free]
    hist = [float(np.linalg.norm(r))]
    target = tol * fnorm
    it = 0
    while hist[-1] > target:
        if it >= max_iter:
            raise ElasticNonConvergence(f"no convergence in {max_iter} Newton steps", hist)
        it += 1
        K = s.tangent(U)[s.free][:, s.free]
        du = np.zeros(s.ndof)
        du[s.free] = -SPDSolver(K, 1e-13, s.nullspace).solve(r)
        du = du.reshape(-1, 3)
        t = 1.0
        while True:
            trial = U + t * du
            J = np.linalg.det(np.eye(3) + s.grad_u(trial))
            if np.all(J > 0):
                rt = (s.internal(trial) - f)[s.free]
                nrm = float(np.linalg.norm(rt))
                if nrm <= target or nrm < (1.0 - 1e-4 * t) * hist[-1]:
                    break
            t *= 0.5
            if t < 1e-8:
                if not np.all(J > 0):
                    raise InadmissibleLoadError("no Newton iterate keeps det(I + grad u) > 0")
                raise ElasticNonConvergence("residual line search failed", hist)
        U, r = trial, rt
        hist.append(nrm)
    u = np.zeros((mesh.n_vertices, 3))
    u[s.nodes] = U
    return ElasticSolution(mesh, u, it, hist, s.energy(U, f), volume_change_diagnostic(mesh, u))
