"""Region-wise norms of P1 fields and the a-priori estimate report."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import at_quadrature, cell_gradient
from .mesh import Mesh, Region
from .quadrature import tet_rule


@dataclass(frozen=True)
class RegionNorms:
    lp: float
    linf: float
    h1: float
    h1_semi: float
    surrogate: float
    p: float = 2.0


@dataclass(frozen=True)
class BrokenNorms:
    per_region: dict = field(default_factory=dict)
    total: RegionNorms | None = None

    def __getitem__(self, region: Region) -> RegionNorms:
        return self.per_region[Region(region)]


def _lp(mesh: Mesh, cells: np.ndarray, values_q: np.ndarray, p: float) -> float:
    """(int |v|^p)^(1/p) from values at the quadrature points of ``cells``."""
    _, w = tet_rule(4)
    mag = values_q if values_q.ndim == 2 else np.linalg.norm(
        values_q.reshape(values_q.shape[0], values_q.shape[1], -1), axis=2)
    integral = float(np.einsum("q,c,cq->", w, mesh.volumes[cells], np.abs(mag) ** p))
    return integral ** (1.0 / p)


def _const_lp(mesh: Mesh, cells: np.ndarray, per_cell: np.ndarray, p: float) -> float:
    mag = np.linalg.norm(per_cell.reshape(len(cells), -1), axis=1)
    return float(np.sum(mesh.volumes[cells] * mag**p)) ** (1.0 / p)


def recover_gradient(mesh: Mesh, nodal: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Volume-weighted average of cell gradients at each node of ``cells``."""
    g = cell_gradient(mesh, nodal, cells)
    vol = mesh.volumes[cells]
    shape = (mesh.n_vertices,) + g.shape[1:]
    acc = np.zeros(shape)
    wsum = np.zeros(mesh.n_vertices)
    conn = mesh.cells[cells]
    weighted = vol.reshape((-1,) + (1,) * (g.ndim - 1)) * g
    for a in range(4):
        np.add.at(acc, conn[:, a], weighted)
        np.add.at(wsum, conn[:, a], vol)
    touched = wsum > 0
    acc[touched] /= wsum[touched].reshape((-1,) + (1,) * (g.ndim - 1))
    return acc


def second_derivative(mesh: Mesh, nodal: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Per-cell Hessian surrogate: gradient of the recovered gradient."""
    rec = recover_gradient(mesh, nodal, cells)
    flat = rec.reshape(mesh.n_vertices, -1)
    return cell_gradient(mesh, flat, cells)


def region_norms(mesh: Mesh, nodal: np.ndarray, cells: np.ndarray, p: float = 2.0) -> RegionNorms:
    nodal = np.asarray(nodal, dtype=float)
    if len(cells) == 0:
        return RegionNorms(0.0, 0.0, 0.0, 0.0, 0.0, p)
    vq = at_quadrature(mesh, cells, nodal)
    lp = _lp(mesh, cells, vq, p)
    nodes = np.unique(mesh.cells[cells])
    vals = nodal[nodes]
    linf = float(np.max(np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals, axis=1)))
    g = cell_gradient(mesh, nodal.reshape(mesh.n_vertices, -1) if nodal.ndim > 1 else nodal, cells)
    l2 = _lp(mesh, cells, vq, 2.0)
    semi = _const_lp(mesh, cells, g, 2.0)
    h1 = float(np.hypot(l2, semi))
    surrogate = lp + _const_lp(mesh, cells, g, p) + _const_lp(mesh, cells, second_derivative(mesh, nodal, cells), p)
    return RegionNorms(lp, linf, h1, semi, surrogate, p)


def broken_norm(field, mesh: Mesh, p: float = 2.0) -> BrokenNorms:
    """Lp, L-infinity, H1 and W^{2,p} surrogate norms per region and combined.

    ``field`` is a nodal array of shape (N,) or (N, d).
    """
    per = {}
    for reg in Region:
        cells = mesh.cells_in(reg)
        if len(cells):
            per[reg] = region_norms(mesh, field, cells, p)
    vals = list(per.values())
    total = RegionNorms(
        lp=float(sum(v.lp**p for v in vals) ** (1.0 / p)),
        linf=max(v.linf for v in vals),
        h1=float(np.sqrt(sum(v.h1**2 for v in vals))),
        h1_semi=float(np.sqrt(sum(v.h1_semi**2 for v in vals))),
        surrogate=float(sum(v.surrogate for v in vals)),
        p=p,
    )
    return BrokenNorms(per, total)


def h1_norm(mesh: Mesh, nodal: np.ndarray, cells: np.ndarray) -> float:
    """Discrete H1 norm over ``cells`` (exact for P1 fields)."""
    return region_norms(mesh, nodal, cells, 2.0).h1


def estimate_report(state, p: float = 4.0) -> list[dict]:
    """One row relating the net loads to the size of the perturbation.

    ``state`` is a coupled state; see :mod:`electroelastic.coupled`.
    """
    sc = state.scenario
    mesh = sc.mesh
    piola = state.piola
    mr = mesh.cells_in(Region.MR)
    v_mr = float(mesh.volumes[mr].sum()) if sc.diel.rigid_cavity else 0.0
    added = float(np.abs(sc.charges.charges[~sc.charges.flexible]).sum())
    FI = (piola.F - np.eye(3)).reshape(mesh.n_cells, 9)
    all_cells = np.arange(mesh.n_cells)
    # piecewise constant field: Lp of the values plus a recovered-gradient term
    nodal_FI = recover_gradient_cellwise(mesh, FI)
    fi_norm = _const_lp(mesh, all_cells, FI, p) + _const_lp(
        mesh, all_cells, cell_gradient(mesh, nodal_FI, all_cells), p)
    net = state.net_forces
    fb = net.body_norm(p)
    fs = net.surface_norm(p)
    return [{
        "kappa_shift": abs(sc.diel.kappa - sc.diel.kappa0),
        "rigid_volume": v_mr,
        "piola_norm": float(fi_norm),
        "jacobian_dev": float(np.max(np.abs(piola.J - 1.0))),
        "added_charge": added,
        "body_force_norm": fb,
        "surface_force_norm": fs,
    }]


def recover_gradient_cellwise(mesh: Mesh, per_cell: np.ndarray) -> np.ndarray:
    """Average a piecewise constant field to the nodes (volume weighted)."""
    vol = mesh.volumes
    acc = np.zeros((mesh.n_vertices,) + per_cell.shape[1:])
    wsum = np.zeros(mesh.n_vertices)
    w = vol.reshape((-1,) + (1,) * (per_cell.ndim - 1)) * per_cell
    for a in range(4):
        np.add.at(acc, mesh.cells[:, a], w)
        np.add.at(wsum, mesh.cells[:, a], vol)
    return acc / wsum.reshape((-1,) + (1,) * (per_cell.ndim - 1))
