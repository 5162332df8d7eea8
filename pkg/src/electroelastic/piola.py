"""Harmonic extension of the flexible displacement and the Piola coefficient.

For a deformation ``Phi = I + d`` the transformed problem carries the
per-cell coefficient ``F = J (grad Phi)^-1 (grad Phi)^-T`` with
``J = det grad Phi``.  Outside the flexible region ``d`` is the harmonic
extension of the flexible displacement that vanishes on the outer box.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .fem import SPDSolver, assemble_scalar, cell_gradient
from .mesh import FaceTag, Mesh, Region
from .norms import region_norms


class InadmissibleDeformation(ValueError):
    """The deformation gradient has ``J <= j_min`` in some cell."""

    def __init__(self, cell: int, J: float, j_min: float):
        super().__init__(f"cell {cell} has J = {J:.6g} <= {j_min:g}")
        self.cell = cell
        self.J = J


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Nodal displacement on the whole mesh.

    Values on the closure of the flexible region are the elastic
    displacement, elsewhere the harmonic extension.
    """

    mesh: Mesh
    values: np.ndarray

    @staticmethod
    def zero(mesh: Mesh) -> "DisplacementField":
        return DisplacementField(mesh, np.zeros((mesh.n_vertices, 3)))

    @property
    def mf_nodes(self) -> np.ndarray:
        return _topology(self.mesh).mf_nodes

    def at(self, points) -> np.ndarray:
        return self.mesh.interpolate(self.values, points)


class _ExtensionTopology:
    def __init__(self, mesh: Mesh):
        self.mf_nodes = mesh.nodes_in(Region.MF)
        ext_cells = np.flatnonzero(mesh.cell_region != int(Region.MF))
        ext_nodes = np.unique(mesh.cells[ext_cells])
        fixed = np.union1d(self.mf_nodes, mesh.nodes_on(FaceTag.OUTER))
        self.free = np.setdiff1d(ext_nodes, fixed)
        self.bc = np.intersect1d(ext_nodes, self.mf_nodes)
        A = assemble_scalar(mesh, ext_cells)
        self.A_ff = A[self.free][:, self.free].tocsr()
        self.A_fb = A[self.free][:, self.bc].tocsr()
        self._solver = None

    @property
    def solver(self) -> SPDSolver:
        if self._solver is None:
            self._solver = SPDSolver(self.A_ff)
        return self._solver


_TOPO: "weakref.WeakKeyDictionary[Mesh, _ExtensionTopology]" = weakref.WeakKeyDictionary()


def _topology(mesh: Mesh) -> _ExtensionTopology:
    topo = _TOPO.get(mesh)
    if topo is None:
        topo = _ExtensionTopology(mesh)
        _TOPO[mesh] = topo
    return topo


def harmonic_extend(mesh: Mesh, u) -> DisplacementField:
    """Extend a displacement given on the flexible nodes to the whole box.

    ``u`` is a (N, 3) nodal array (only flexible-region entries are read) or
    a :class:`DisplacementField`.  Each component solves the discrete
    Laplace problem on the solvent and rigid cells with ``w = u`` on the
    flexible interface and ``w = 0`` on the box.
    """
    vals = u.values if isinstance(u, DisplacementField) else np.asarray(u, dtype=float)
    if vals.shape != (mesh.n_vertices, 3):
        raise ValueError(f"expected nodal array of shape ({mesh.n_vertices}, 3)")
    topo = _topology(mesh)
    out = np.zeros((mesh.n_vertices, 3))
    out[topo.mf_nodes] = vals[topo.mf_nodes]
    ub = vals[topo.bc]
    if np.any(ub) and len(topo.free):
        out[topo.free] = topo.solver.solve(-(topo.A_fb @ ub))
    return DisplacementField(mesh, out)


@dataclass(frozen=True, eq=False)
class PiolaFields:
    """Per-cell deformation gradient, Jacobian and Piola coefficient."""

    grad_phi: np.ndarray
    J: np.ndarray
    F: np.ndarray
    inv_grad_phi: np.ndarray

    @staticmethod
    def identity(mesh: Mesh) -> "PiolaFields":
        eye = np.broadcast_to(np.eye(3), (mesh.n_cells, 3, 3)).copy()
        return PiolaFields(eye, np.ones(mesh.n_cells), eye.copy(), eye.copy())

    @property
    def min_J(self) -> float:
        return float(self.J.min())


def deformation_gradient(mesh: Mesh, disp: DisplacementField) -> np.ndarray:
    return np.eye(3)[None] + cell_gradient(mesh, disp.values)


def compute_piola(mesh: Mesh, disp: DisplacementField, j_min: float = 0.1) -> PiolaFields:
    """Per-cell ``grad Phi``, ``J`` and symmetric ``F``; raises if ``J <= j_min``."""
    if not np.any(disp.values):
        return PiolaFields.identity(mesh)
    A = deformation_gradient(mesh, disp)
    J = np.linalg.det(A)
    bad = np.flatnonzero(J <= j_min)
    if len(bad):
        c = int(bad[np.argmin(J[bad])])
        raise InadmissibleDeformation(c, float(J[c]), j_min)
    Ainv = np.linalg.inv(A)
    F = J[:, None, None] * np.einsum("cij,ckj->cik", Ainv, Ainv)
    F = 0.5 * (F + F.transpose(0, 2, 1))
    return PiolaFields(A, J, F, Ainv)


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    min_J: float
    min_J_cell: int
    surrogate_norm: float
    max_grad: float
    bound_M: float
    j_min: float

    def reason(self) -> str:
        if self.admissible:
            return "admissible"
        parts = []
        if self.min_J <= self.j_min:
            parts.append(f"J = {self.min_J:.4g} in cell {self.min_J_cell}")
        if self.surrogate_norm > self.bound_M:
            parts.append(f"norm {self.surrogate_norm:.4g} exceeds bound {self.bound_M:.4g}")
        return "; ".join(parts)


def check_admissible(disp: DisplacementField, bound_M: float, j_min: float = 0.1,
                     p: float = 4.0) -> AdmissibilityReport:
    """Gate a displacement by ``min J > j_min`` and a W^{2,p} surrogate bound.

    The surrogate is measured on the flexible region, where the elastic
    displacement lives.
    """
    mesh = disp.mesh
    A = deformation_gradient(mesh, disp)
    J = np.linalg.det(A)
    c = int(np.argmin(J))
    mf = mesh.cells_in(Region.MF)
    norms = region_norms(mesh, disp.values, mf, p)
    grad = np.linalg.norm((A - np.eye(3)).reshape(-1, 9), axis=1).max()
    ok = bool(J[c] > j_min and norms.surrogate <= bound_M)
    return AdmissibilityReport(ok, float(J[c]), c, float(norms.surrogate), float(grad),
                               float(bound_M), float(j_min))


def write_piola_ascii(piola: PiolaFields, path) -> None:
    """Dump per-cell J and the eigenvalues of F, one cell per line."""
    ev = np.linalg.eigvalsh(piola.F)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("cell,J,f1,f2,f3\n")
        for i, (j, e) in enumerate(zip(piola.J.tolist(), ev.tolist())):
            fh.write(f"{i},{j!r},{e[0]!r},{e[1]!r},{e[2]!r}\n")


__all__ = ["DisplacementField", "PiolaFields", "AdmissibilityReport", "InadmissibleDeformation",
           "harmonic_extend", "compute_piola", "check_admissible", "write_piola_ascii"]
