"""P1 assembly helpers and sparse solves shared by the solvers."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh
from .quadrature import tet_rule


def assemble_scalar(mesh: Mesh, cells: np.ndarray, K: np.ndarray | None = None,
                    coef: np.ndarray | None = None) -> sp.csr_matrix:
    """Stiffness ``sum_c |c| (K_c grad phi_a) . grad phi_b`` over the given cells.

    ``K`` is an optional (len(cells), 3, 3) tensor and ``coef`` a scalar factor.
    """
    g = mesh.grads[cells]
    vol = mesh.volumes[cells]
    if K is None:
        ke = np.einsum("cai,cbi->cab", g, g)
    else:
        ke = np.einsum("cai,cij,cbj->cab", g, K, g)
    w = vol if coef is None else vol * coef
    ke *= w[:, None, None]
    return _scatter(mesh.n_vertices, mesh.cells[cells], ke)


def assemble_mass(mesh: Mesh, cells: np.ndarray, coef: np.ndarray) -> sp.csr_matrix:
    """Consistent P1 mass matrix weighted by a per-cell constant."""
    base = (np.ones((4, 4)) + np.eye(4)) / 20.0
    ke = (mesh.volumes[cells] * coef)[:, None, None] * base[None]
    return _scatter(mesh.n_vertices, mesh.cells[cells], ke)


def assemble_weighted_mass(mesh: Mesh, cells: np.ndarray, wq: np.ndarray,
                           order: int = 4) -> sp.csr_matrix:
    """Mass matrix with a weight given at quadrature points, wq (len(cells), nq)."""
    bary, w = tet_rule(order)
    ke = np.einsum("q,cq,qa,qb->cab", w, wq * mesh.volumes[cells][:, None], bary, bary)
    return _scatter(mesh.n_vertices, mesh.cells[cells], ke)


def _scatter(n: int, conn: np.ndarray, ke: np.ndarray) -> sp.csr_matrix:
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def load_at_quadrature(mesh: Mesh, cells: np.ndarray, fq: np.ndarray,
                       order: int = 4) -> np.ndarray:
    """Nodal load ``int f phi_a`` from values at quadrature points.

    ``fq`` has shape (len(cells), nq) or (len(cells), nq, d).
    """
    bary, w = tet_rule(order)
    vol = mesh.volumes[cells]
    contrib = np.einsum("q,c,qa,cq...->ca...", w, vol, bary, fq)
    out = np.zeros((mesh.n_vertices,) + fq.shape[2:])
    np.add.at(out, mesh.cells[cells], contrib)
    return out


def quadrature_points(mesh: Mesh, cells: np.ndarray, order: int = 4) -> np.ndarray:
    bary, _ = tet_rule(order)
    return np.einsum("qa,cai->cqi", bary, mesh.cell_coords[cells])


def at_quadrature(mesh: Mesh, cells: np.ndarray, nodal: np.ndarray, order: int = 4) -> np.ndarray:
    bary, _ = tet_rule(order)
    return np.einsum("qa,ca...->cq...", bary, nodal[mesh.cells[cells]])


def cell_gradient(mesh: Mesh, nodal: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
    """Per-cell gradient of a P1 field; (M, 3) for scalars, (M, d, 3) for vectors."""
    if cells is None:
        cells = np.arange(mesh.n_cells)
    vals = nodal[mesh.cells[cells]]
    if vals.ndim == 2:
        return np.einsum("ca,cai->ci", vals, mesh.grads[cells])
    return np.einsum("cak,cai->cki", vals, mesh.grads[cells])


DIRECT_LIMIT = 6_000


class SPDSolver:
    """Reusable solver for a fixed symmetric positive definite matrix.

    Small systems use a sparse LU factorisation, large ones conjugate
    gradients preconditioned by smoothed-aggregation AMG.  Both paths are
    deterministic.
    """

    def __init__(self, A: sp.spmatrix, rtol: float = 1e-13,
                 near_nullspace: np.ndarray | None = None):
        self.n = A.shape[0]
        self.rtol = rtol
        self.A = sp.csr_matrix(A)
        self._lu = None
        self._ml = None
        if self.n == 0:
            return
        if self.n <= DIRECT_LIMIT:
            self._lu = splu(sp.csc_matrix(A), permc_spec="COLAMD")
        else:
            import pyamg

            self._ml = pyamg.smoothed_aggregation_solver(self.A, B=near_nullspace,
                                                         symmetry="symmetric")

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        if self._lu is not None:
            return self._lu.solve(b)
        cols = b.reshape(self.n, -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            rhs = cols[:, j]
            nb = np.linalg.norm(rhs)
            if nb == 0.0:
                out[:, j] = 0.0
                continue
            res = []
            out[:, j] = self._ml.solve(rhs, tol=self.rtol, accel="cg", maxiter=1000,
                                       residuals=res)
            if res[-1] > 1e3 * self.rtol * nb:
                raise RuntimeError(f"iterative solve stalled at residual {res[-1]:.3e}")
        return out.reshape(b.shape)


def solve_spd(A: sp.spmatrix, b: np.ndarray, rtol: float = 1e-13,
              near_nullspace: np.ndarray | None = None) -> np.ndarray:
    """One-shot solve of a symmetric positive definite system."""
    return SPDSolver(A, rtol, near_nullspace).solve(b)


def restrict(A: sp.csr_matrix, rows: np.ndarray, cols: np.ndarray) -> sp.csr_matrix:
    return A[rows][:, cols]
