"""Electrostatic loads on the flexible molecule.

Point forces on atoms are smeared into Gaussian blobs supported on the
atomic balls.  Each blob carries the magnitude ``|A_i|`` of the finite
site force on its charge and has value ``delta / N_f`` on the ball surface.  The
interface carries the Maxwell-plus-osmotic traction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .charges import eval_G, eval_grad_G
from .elasticity import LoadSet, clamped_face_mask
from .fem import quadrature_points
from .mesh import FaceTag, Mesh, Region
from .pbe import PotentialDecomposition
from .quadrature import tet_rule

GRAD_ZERO = 1e-12


@dataclass(frozen=True)
class GaussianBlob:
    """``a exp(-|x - center|^2 / sigma) n`` restricted to ``|x - center| <= radius``."""

    center: np.ndarray
    radius: float
    a: float
    sigma: float
    direction: np.ndarray
    magnitude: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - self.center) ** 2, axis=-1)
        if self.a == 0.0:
            return np.zeros(x.shape)
        val = np.where(r2 <= self.radius**2, self.a * np.exp(-r2 / self.sigma), 0.0)
        return val[..., None] * self.direction


def _log_core(x: float) -> float:
    """``log( e^{x^2} int_0^x t^2 e^{-t^2} dt )`` without cancellation."""
    if x < 4.0:
        # e^{x^2} int_0^x t^2 e^{-t^2} dt = sum_{n>=1} 2^{n-1} x^{2n+1} / (2n+1)!!
        term = x**3 / 3.0
        total = term
        n = 1
        while True:
            n += 1
            term *= 2.0 * x * x / (2 * n + 1)
            total += term
            if term < 1e-17 * total:
                break
        return float(np.log(total))
    inner = 0.5 * (0.5 * np.sqrt(np.pi) * erf(x) - x * np.exp(-x * x))
    return float(x * x + np.log(inner))


def blob_log_mass(sigma: float, radius: float, surface_value: float) -> float:
    """Log of ``int_{|x|<=R} a e^{-|x|^2/sigma}`` with ``a`` fixed by the surface value."""
    x = radius / np.sqrt(sigma)
    return float(np.log(4.0 * np.pi * surface_value) + 1.5 * np.log(sigma) + _log_core(x))


def fit_gaussian(A: float, R: float, delta_target: float, N_f: int) -> GaussianBlob:
    """Blob of mass ``|A|`` on the ball of radius R with surface value ``delta_target / N_f``.

    The mass is strictly decreasing in sigma and tends to the ball volume
    times the surface value, so there is no solution when ``|A|`` does not
    exceed that volume; the blob is then zero and a warning is issued.
    Returns a blob centred at the origin pointing along +x; callers set the
    centre and direction.
    """
    if R <= 0 or delta_target <= 0 or N_f <= 0:
        raise ValueError("R, delta_target and N_f must be positive")
    mag = abs(float(A))
    s = delta_target / N_f
    zero = GaussianBlob(np.zeros(3), R, 0.0, R * R, np.array([1.0, 0.0, 0.0]), mag)
    if mag == 0.0:
        return zero
    floor = s * 4.0 / 3.0 * np.pi * R**3
    if mag <= floor:
        warnings.warn(f"|A| = {mag:.4g} does not exceed delta/N_f times the atom volume "
                      f"({floor:.4g}); using a zero blob", RuntimeWarning, stacklevel=2)
        return zero
    target = np.log(mag)

    def f(logsig):
        return blob_log_mass(np.exp(logsig), R, s) - target

    lo, hi = np.log(R * R) - 1.0, np.log(R * R) + 1.0
    while f(lo) < 0:
        lo -= 2.0
        if lo < np.log(R * R) - 12.0:
            raise ValueError("blob is too concentrated to represent (a overflows)")
    while f(hi) > 0:
        hi += 2.0
        if hi > 200:
            raise ValueError("could not bracket the blob width")
    logsig = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    sigma = float(np.exp(logsig))
    a = s * float(np.exp(R * R / sigma))
    return GaussianBlob(np.zeros(3), R, a, sigma, np.array([1.0, 0.0, 0.0]), mag)


# -------------------------------------------------------------- site values

def charge_site_potential(decomp: PotentialDecomposition, i: int) -> float:
    """``phi_r(x_i) + sum_{j != i} G_j(x_i)``, with Coulomb terms at the displaced positions."""
    x = decomp.charges.positions[i]
    val = float(decomp.mesh.interpolate(decomp.phi_r, x[None, :])[0])
    others = np.arange(len(decomp.charges)) != i
    if np.any(others):
        val += float(eval_G(decomp.images.subset(others), decomp.diel.eps_m, decomp.images.positions[i]))
    return val


def charge_site_gradient(decomp: PotentialDecomposition, i: int) -> np.ndarray:
    """Physical gradient of the same field at the charge.

    The P1 part is averaged over every cell whose closure contains the
    charge, so a charge sitting on a symmetric vertex sees no spurious bias.
    """
    mesh = decomp.mesh
    x = decomp.charges.positions[i]
    star = mesh.star(x)
    g = np.einsum("ca,cai->ci", decomp.phi_r[mesh.cells[star]], mesh.grads[star])
    g = np.einsum("cji,cj->ci", decomp.piola.inv_grad_phi[star], g)
    vol = mesh.volumes[star]
    grad = (vol[:, None] * g).sum(axis=0) / vol.sum()
    others = np.arange(len(decomp.charges)) != i
    if np.any(others):
        grad = grad + eval_grad_G(decomp.images.subset(others), decomp.diel.eps_m,
                                  decomp.images.positions[i])
    return grad


def site_force(decomp: PotentialDecomposition, i: int) -> np.ndarray:
    """Finite force ``q_i grad(phi_r + sum_{j != i} G_j)(x_i)`` on charge i."""
    return decomp.charges.charges[i] * charge_site_gradient(decomp, i)


def site_blobs(decomp: PotentialDecomposition, delta_target: float) -> list[GaussianBlob]:
    """One blob per flexible charge carrying its site force.

    The blob mass is the magnitude of the site force and its direction is
    the direction of that force.  A gradient below ``GRAD_ZERO`` leaves the
    direction undefined and the blob is zeroed.
    """
    ch = decomp.charges
    flex = np.flatnonzero(ch.flexible)
    n_f = len(flex)
    blobs = []
    for i in flex:
        g = charge_site_gradient(decomp, i)
        gn = float(np.linalg.norm(g))
        F = ch.charges[i] * g
        A = float(np.linalg.norm(F))
        if gn < GRAD_ZERO or A == 0.0:
            blobs.append(GaussianBlob(ch.positions[i].copy(), float(ch.radii[i]), 0.0,
                                      float(ch.radii[i]) ** 2, np.zeros(3), A))
            continue
        blob = fit_gaussian(A, float(ch.radii[i]), delta_target, n_f)
        blobs.append(GaussianBlob(ch.positions[i].copy(), blob.radius, blob.a, blob.sigma, F / A, A))
    return blobs


def assemble_body_force(decomp: PotentialDecomposition, mesh: Mesh, delta_target: float,
                        order: int = 4) -> tuple[np.ndarray, list[GaussianBlob]]:
    """Body force at the quadrature points of the flexible cells, (n_mf, nq, 3)."""
    blobs = site_blobs(decomp, delta_target)
    cells = mesh.cells_in(Region.MF)
    xq = quadrature_points(mesh, cells, order)
    fb = np.zeros(xq.shape)
    for b in blobs:
        if b.a != 0.0:
            fb += b(xq)
    return fb, blobs


def assemble_surface_force(decomp: PotentialDecomposition, mesh: Mesh,
                           trace: str = "transmission") -> np.ndarray:
    """Traction on every GAMMA_F face, (n_faces, 3).

    ``-(1/2)(eps_s |F grad phi_s|^2 - eps_m |F grad phi_m|^2) n - kappa^2 (cosh phi_s - 1) n``.
    The molecule-side gradient is the P1 gradient of ``phi_r`` in the
    adjacent cell plus the exact Coulomb gradient at the face centroid.

    Parameters
    ----------
    trace : {"transmission", "one_sided"}
        How the solvent-side gradient is obtained.  ``"one_sided"`` uses the
        solvent cell directly, where ``grad phi_r`` nearly cancels
        ``grad G`` and the P1 error is amplified by ``eps_s / eps_m``.
        ``"transmission"`` rebuilds it from the molecule side: the
        tangential part is kept and the normal part is fixed by continuity
        of ``eps F grad phi . n``.
    """
    if trace not in ("transmission", "one_sided"):
        raise ValueError(f"unknown trace mode {trace!r}")
    ids = mesh.faces_tagged(FaceTag.GAMMA_F)
    fc = mesh.face_cells[ids]
    cen, nrm, _ = mesh.face_geometry
    d = decomp.disp.values
    tri = mesh.faces[ids]
    P = decomp.piola
    diel = decomp.diel

    def ref_grad(cells, xc):
        gG = eval_grad_G(decomp.images, diel.eps_m, xc) if len(decomp.images) else np.zeros((len(cells), 3))
        g = np.einsum("ca,cai->ci", decomp.phi_r[mesh.cells[cells]], mesh.grads[cells])
        return g + np.einsum("cji,cj->ci", P.grad_phi[cells], gG)  # (grad Phi)^T grad G

    N = nrm[ids]
    Fm, Fs = P.F[fc[:, 0]], P.F[fc[:, 1]]
    xf = cen[ids] + d[tri].mean(axis=1)
    gm = ref_grad(fc[:, 0], xf)
    if trace == "one_sided":
        # pair the cell-constant P1 gradient with the Coulomb gradient at the
        # cell centroid so the singular parts cancel to O(h^2)
        cs = fc[:, 1]
        gs = ref_grad(cs, mesh.centroids[cs] + d[mesh.cells[cs]].mean(axis=1))
    else:
        t = gm - np.sum(gm * N, axis=1)[:, None] * N
        flux_m = np.einsum("fi,fij,fj->f", N, Fm, gm)
        FsN = np.einsum("fij,fj->fi", Fs, N)
        alpha = (diel.eps_m / diel.eps_s * flux_m - np.sum(FsN * t, axis=1)) / np.sum(FsN * N, axis=1)
        gs = t + alpha[:, None] * N
    Em = np.einsum("fij,fj->fi", Fm, gm)
    Es = np.einsum("fij,fj->fi", Fs, gs)
    phys_v = mesh.vertices[tri] + d[tri]
    Gv = eval_G(decomp.images, diel.eps_m, phys_v.reshape(-1, 3)).reshape(-1, 3) \
        if len(decomp.images) else np.zeros((len(ids), 3))
    phi_s = (decomp.phi_r[tri] + Gv).mean(axis=1)
    if decomp.mode == "linearized":
        osm = 0.5 * diel.kappa**2 * phi_s**2
    else:
        osm = diel.kappa**2 * (np.cosh(phi_s) - 1.0)
    p = -0.5 * (diel.eps_s * np.sum(Es**2, axis=1) - diel.eps_m * np.sum(Em**2, axis=1)) - osm
    return p[:, None] * nrm[ids]


# -------------------------------------------------------------- force sets

@dataclass(frozen=True, eq=False)
class ForceSet:
    """Body force at flexible quadrature points, traction per GAMMA_F face, and the blobs."""

    mesh: Mesh
    body: np.ndarray
    surface: np.ndarray
    blobs: list = field(default_factory=list)
    order: int = 4
    label: str = ""

    def as_loads(self) -> LoadSet:
        """Loads for the elastic solve; traction on the clamped cap is dropped."""
        surface = self.surface.copy()
        surface[clamped_face_mask(self.mesh)] = 0.0
        return LoadSet(self.mesh, self.body, surface, self.order)

    def __sub__(self, other: "ForceSet") -> "ForceSet":
        _check_layout(self, other)
        return ForceSet(self.mesh, self.body - other.body, self.surface - other.surface, [], self.order,
                        self.label)

    def __add__(self, other: "ForceSet") -> "ForceSet":
        _check_layout(self, other)
        return ForceSet(self.mesh, self.body + other.body, self.surface + other.surface, [], self.order,
                        self.label)

    def body_norm(self, p: float = 2.0) -> float:
        _, w = tet_rule(self.order)
        vol = self.mesh.volumes[self.mesh.cells_in(Region.MF)]
        mag = np.linalg.norm(self.body, axis=2)
        return float(np.einsum("q,c,cq->", w, vol, mag**p)) ** (1.0 / p)

    def surface_norm(self, p: float = 2.0) -> float:
        _, _, area = self.mesh.face_geometry
        a = area[self.mesh.faces_tagged(FaceTag.GAMMA_F)]
        return float(np.sum(a * np.linalg.norm(self.surface, axis=1) ** p)) ** (1.0 / p)

    def max_abs(self) -> float:
        return float(max(np.abs(self.body).max(initial=0.0), np.abs(self.surface).max(initial=0.0)))

    def integrated_body(self) -> np.ndarray:
        _, w = tet_rule(self.order)
        vol = self.mesh.volumes[self.mesh.cells_in(Region.MF)]
        return np.einsum("q,c,cqi->i", w, vol, self.body)


def _check_layout(a: ForceSet, b: ForceSet) -> None:
    if a.body.shape != b.body.shape or a.surface.shape != b.surface.shape:
        raise ValueError(f"force layouts differ: body {a.body.shape} vs {b.body.shape}, "
                         f"surface {a.surface.shape} vs {b.surface.shape}")


def compute_forces(decomp: PotentialDecomposition, delta_target: float, order: int = 4,
                   label: str = "", trace: str = "transmission") -> ForceSet:
    mesh = decomp.mesh
    body, blobs = assemble_body_force(decomp, mesh, delta_target, order)
    return ForceSet(mesh, body, assemble_surface_force(decomp, mesh, trace), blobs, order, label)


def net_forces(current: ForceSet, reference: ForceSet) -> ForceSet:
    """``current - reference``; layouts must match."""
    return current - reference


LEDGER_NAMES = ("ionic_shift", "rigid_cavity", "rigid_charges", "deformation")


@dataclass(frozen=True)
class LedgerEntry:
    name: str
    delta: ForceSet


@dataclass(frozen=True)
class PerturbationLedger:
    entries: tuple
    total: ForceSet
    identity_error: float

    def check(self, tol: float = 1e-12) -> bool:
        return self.identity_error <= tol


def build_perturbation_ledger(states) -> PerturbationLedger:
    """Successive differences between the five force states.

    ``states`` is ``[free, kappa shifted, cavity, rigid charges, coupled]``.
    The differences telescope to ``coupled - free``; the largest mismatch
    relative to the size of the total is recorded.
    """
    states = list(states)
    if len(states) != 5:
        raise ValueError("expected five force states")
    for s in states[1:]:
        _check_layout(states[0], s)
    entries = tuple(LedgerEntry(n, states[k + 1] - states[k]) for k, n in enumerate(LEDGER_NAMES))
    total = states[-1] - states[0]
    body = sum(e.delta.body for e in entries)
    surf = sum(e.delta.surface for e in entries)
    scale = max(1.0, total.max_abs())
    err = max(np.abs(body - total.body).max(initial=0.0), np.abs(surf - total.surface).max(initial=0.0))
    return PerturbationLedger(entries, total, float(err / scale))


def write_face_csv(forces: ForceSet, path) -> None:
    mesh = forces.mesh
    ids = mesh.faces_tagged(FaceTag.GAMMA_F)
    cen = mesh.face_geometry[0][ids]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("face,cx,cy,cz,fx,fy,fz\n")
        for k, (c, f) in enumerate(zip(cen.tolist(), forces.surface.tolist())):
            fh.write(f"{int(ids[k])},{c[0]!r},{c[1]!r},{c[2]!r},{f[0]!r},{f[1]!r},{f[2]!r}\n")


def write_blob_csv(forces: ForceSet, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("atom,x,y,z,radius,magnitude,a,sigma,nx,ny,nz\n")
        for i, b in enumerate(forces.blobs):
            c, n = b.center.tolist(), b.direction.tolist()
            vals = c + [b.radius, b.magnitude, b.a, b.sigma] + n
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in vals) + "\n")
