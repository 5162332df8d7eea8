"""Tetrahedral meshes of one or two balls embedded in a box.

Meshes are built from a structured "onion" of hexahedra: an inner cube,
a shell blending the cube into the sphere, and graded layers blending the
sphere into the box.  Every hexahedron is split into 24 tetrahedra around
its centre and the centres of its six faces.  The split is conforming
without any diagonal choice and keeps the mirror symmetries of the grid.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree


class Region(enum.IntEnum):
    SOLVENT = 0
    MF = 1
    MR = 2


class FaceTag(enum.IntEnum):
    GAMMA_F = 1
    GAMMA_F0 = 2
    GAMMA_R = 3
    OUTER = 4


class MeshGenerationError(RuntimeError):
    """Raised when the generator produces a degenerate cell."""

    def __init__(self, message: str, cell: int | None = None):
        super().__init__(message)
        self.cell = cell


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Sphere:
    region: Region
    center: tuple[float, float, float]
    radius: float


@dataclass(frozen=True, eq=False)
class Mesh:
    """Tetrahedral mesh with region tags per cell and tagged boundary faces.

    Faces are stored with their vertices ordered so that the right-hand
    normal points out of the molecule (interfaces) or out of the box (OUTER).
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_region: np.ndarray
    faces: np.ndarray
    face_tag: np.ndarray
    h: float
    spheres: tuple[Sphere, ...] = field(default=())

    def __post_init__(self):
        for name in ("vertices", "cells", "cell_region", "faces", "face_tag"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def cell_coords(self) -> np.ndarray:
        return self.vertices[self.cells]

    @cached_property
    def _edge_inverse(self) -> tuple[np.ndarray, np.ndarray]:
        X = self.cell_coords
        D = X[:, 1:, :] - X[:, :1, :]
        det = np.linalg.det(D)
        return D, det

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return self._edge_inverse[1] / 6.0

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def grads(self) -> np.ndarray:
        """Gradients of the four barycentric functions per cell, (M, 4, 3)."""
        D, _ = self._edge_inverse
        inv = np.linalg.inv(D)
        g = np.empty((self.n_cells, 4, 3))
        g[:, 1:, :] = inv.transpose(0, 2, 1)
        g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
        return g

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.cell_coords.mean(axis=1)

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def cells_in(self, *regions: Region) -> np.ndarray:
        return np.flatnonzero(np.isin(self.cell_region, [int(r) for r in regions]))

    def nodes_in(self, *regions: Region) -> np.ndarray:
        """Vertices touched by any cell of the given regions (closure)."""
        return np.unique(self.cells[self.cells_in(*regions)])

    def faces_tagged(self, *tags: FaceTag) -> np.ndarray:
        return np.flatnonzero(np.isin(self.face_tag, [int(t) for t in tags]))

    def nodes_on(self, *tags: FaceTag) -> np.ndarray:
        return np.unique(self.faces[self.faces_tagged(*tags)])

    @cached_property
    def face_geometry(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(centroids, unit normals, areas) of the stored faces."""
        P = self.vertices[self.faces]
        nrm = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
        area = 0.5 * np.linalg.norm(nrm, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = nrm / (2.0 * area[:, None])
        return P.mean(axis=1), unit, area

    @cached_property
    def _face_lookup(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        keys, owners = _tet_face_keys(self.cells, self.n_vertices)
        order = np.argsort(keys, kind="stable")
        return keys[order], owners[order], order

    @cached_property
    def face_cells(self) -> np.ndarray:
        """Cells on either side of each stored face, (K, 2).

        Column 0 is the cell the normal points away from, column 1 the cell it
        points into, or -1 on the outer boundary.
        """
        skeys, sowners, _ = self._face_lookup
        fk = _face_key(self.faces, self.n_vertices)
        lo = np.searchsorted(skeys, fk, side="left")
        hi = np.searchsorted(skeys, fk, side="right")
        out = np.full((len(fk), 2), -1, dtype=np.int64)
        if np.any(hi - lo == 0):
            bad = int(np.flatnonzero(hi - lo == 0)[0])
            raise MeshFormatError(f"face {bad} is not a face of any cell")
        first = sowners[lo]
        second = np.where(hi - lo > 1, sowners[np.minimum(lo + 1, len(sowners) - 1)], -1)
        cen, nrm, _ = self.face_geometry
        side = np.einsum("ij,ij->i", self.centroids[first] - cen, nrm)
        inside_first = side < 0
        out[:, 0] = np.where(inside_first, first, second)
        out[:, 1] = np.where(inside_first, second, first)
        return out

    @cached_property
    def vertex_cells(self) -> csr_matrix:
        """Vertex-to-cell incidence as a sparse (N, M) matrix."""
        rows = self.cells.ravel()
        cols = np.repeat(np.arange(self.n_cells), 4)
        data = np.ones(len(rows))
        return coo_matrix((data, (rows, cols)), shape=(self.n_vertices, self.n_cells)).tocsr()

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    @cached_property
    def _vertex_tree(self) -> cKDTree:
        return cKDTree(self.vertices)

    def barycentric(self, cell: np.ndarray, x: np.ndarray) -> np.ndarray:
        g = self.grads[cell]
        x0 = self.vertices[self.cells[cell, 0]]
        lam = np.empty(np.shape(cell) + (4,))
        lam[..., 1:] = np.einsum("...kj,...j->...k", g[..., 1:, :], x - x0)
        lam[..., 0] = 1.0 - lam[..., 1:].sum(axis=-1)
        return lam

    def locate(self, points, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
        """Containing cell and barycentric coordinates for each point.

        Raises ValueError for points outside the mesh.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(32, self.n_cells)
        _, cand = self._centroid_tree.query(pts, k=k)
        cand = np.asarray(cand).reshape(len(pts), k)
        cells = np.full(len(pts), -1, dtype=np.int64)
        lams = np.zeros((len(pts), 4))
        for i, p in enumerate(pts):
            for pool in (cand[i], np.arange(self.n_cells)):
                lam = self.barycentric(pool, np.broadcast_to(p, (len(pool), 3)))
                m = lam.min(axis=1)
                j = int(np.argmax(m))
                if m[j] >= -tol:
                    cells[i] = pool[j]
                    lams[i] = lam[j]
                    break
            if cells[i] < 0:
                raise ValueError(f"point {p.tolist()} lies outside the mesh")
        return cells, lams

    def star(self, point, tol: float = 1e-9) -> np.ndarray:
        """All cells whose closure contains ``point``."""
        p = np.asarray(point, dtype=float)
        _, v = self._vertex_tree.query(p)
        pool = set(self.vertex_cells[v].indices.tolist())
        _, cand = self._centroid_tree.query(p, k=min(64, self.n_cells))
        pool.update(np.atleast_1d(cand).tolist())
        pool = np.array(sorted(pool))
        lam = self.barycentric(pool, np.broadcast_to(p, (len(pool), 3)))
        hit = pool[lam.min(axis=1) >= -tol]
        if len(hit) == 0:
            hit, _ = self.locate(p[None, :])
        return hit

    def interpolate(self, values: np.ndarray, points) -> np.ndarray:
        """Evaluate a P1 nodal field at arbitrary points."""
        cells, lam = self.locate(points)
        vals = np.asarray(values)[self.cells[cells]]
        return np.einsum("pk,pk...->p...", lam, vals)


def _face_key(tri: np.ndarray, n: int) -> np.ndarray:
    s = np.sort(tri, axis=1).astype(np.int64)
    return (s[:, 0] * n + s[:, 1]) * n + s[:, 2]


_TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def _tet_face_keys(cells: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    tris = cells[:, _TET_FACES].reshape(-1, 3)
    owners = np.repeat(np.arange(len(cells)), 4)
    return _face_key(tris, n), owners


# ---------------------------------------------------------------- generation

def _unit_param(n: int) -> np.ndarray:
    xi = (2.0 * np.arange(n + 1) - n) / n
    t = np.tan(0.25 * np.pi * xi)
    t[0], t[-1] = -1.0, 1.0
    return t


def _cube_surface(n: int) -> np.ndarray:
    """Equiangular points on the unit cube surface, (6, n+1, n+1, 3)."""
    t = _unit_param(n)
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    out = np.empty((6, n + 1, n + 1, 3))
    p = 0
    for axis in range(3):
        others = [k for k in range(3) if k != axis]
        for sign in (-1.0, 1.0):
            out[p, ..., axis] = sign
            out[p, ..., others[0]] = T1
            out[p, ..., others[1]] = T2
            p += 1
    return out


def _shell_hexes(S: np.ndarray) -> np.ndarray:
    a, b = S[:-1], S[1:]

    def quad(X):
        return [X[:, :, :-1, :-1], X[:, :, 1:, :-1], X[:, :, 1:, 1:], X[:, :, :-1, 1:]]

    return np.stack(quad(a) + quad(b), axis=-2).reshape(-1, 8, 3)


def _cube_hexes(P: np.ndarray) -> np.ndarray:
    c = [P[:-1, :-1, :-1], P[1:, :-1, :-1], P[1:, 1:, :-1], P[:-1, 1:, :-1],
         P[:-1, :-1, 1:], P[1:, :-1, 1:], P[1:, 1:, 1:], P[:-1, 1:, 1:]]
    return np.stack(c, axis=-2).reshape(-1, 8, 3)


def _block(center, radius, lo, hi, n, h, core=0.4):
    """Hexahedra (H, 8, 3) and a molecule flag (H,) for one sphere block."""
    c = np.asarray(center, dtype=float)
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    C = _cube_surface(n)
    Chat = C / np.linalg.norm(C, axis=-1, keepdims=True)
    a = core * radius

    t = _unit_param(n)
    P = c + a * np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1)
    hexes = [_cube_hexes(P)]
    flags = [np.ones(n**3, dtype=bool)]

    m_in = max(1, int(round((radius - a) / h)))
    s = np.linspace(0.0, 1.0, m_in + 1)[:, None, None, None, None]
    S = c + (1 - s) * a * C + s * radius * Chat
    hexes.append(_shell_hexes(S))
    flags.append(np.ones(m_in * 6 * n * n, dtype=bool))

    gap = min(np.min(hi - c), np.min(c - lo)) - radius
    if gap <= 0:
        raise MeshGenerationError("sphere does not fit inside its box")
    B = np.where(C >= 0, c + C * (hi - c), c + C * (c - lo))
    rho = 1.0 + h / radius
    first = 0.5 * h
    m_out = max(1, int(np.ceil(np.log1p((rho - 1.0) * gap / first) / np.log(rho))))
    k = np.arange(m_out + 1)
    tau = (rho**k - 1.0) / (rho**m_out - 1.0)
    tau = tau[:, None, None, None, None]
    S = (1 - tau) * (c + radius * Chat) + tau * B
    hexes.append(_shell_hexes(S))
    flags.append(np.zeros(m_out * 6 * n * n, dtype=bool))
    return np.concatenate(hexes), np.concatenate(flags)


_HEX_QUADS = np.array([[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4],
                       [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]])


def _merge_points(pts: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicate points closer than tol; returns (unique_points, index)."""
    tree = cKDTree(pts)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    n = len(pts)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, label = connected_components(g, directed=False)
    _, first, inv = np.unique(label, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return pts[first[order]], rank[inv]


def _assemble(blocks, h, spheres, f0_direction, f0_half_angle_deg) -> Mesh:
    hex_pts = np.concatenate([b[0] for b in blocks])
    hex_region = np.concatenate([np.where(b[1], int(b[2]), int(Region.SOLVENT)) for b in blocks])
    hex_sphere = np.concatenate([np.full(len(b[0]), i) for i, b in enumerate(blocks)])
    H = len(hex_pts)
    lo, hi = hex_pts.reshape(-1, 3).min(axis=0), hex_pts.reshape(-1, 3).max(axis=0)
    tol = 1e-9 * float(np.max(hi - lo))
    verts, idx = _merge_points(hex_pts.reshape(-1, 3), tol)
    hv = idx.reshape(H, 8)

    quads = hv[:, _HEX_QUADS]  # (H, 6, 4)
    qs = np.sort(quads.reshape(-1, 4), axis=1)
    _, qfirst, qinv = np.unique(qs, axis=0, return_index=True, return_inverse=True)
    qinv = qinv.ravel()
    nq = len(qfirst)
    qcent = verts[quads.reshape(-1, 4)[qfirst]].mean(axis=1)

    # project interface quad centres onto their sphere
    qhex = np.repeat(np.arange(H), 6)
    mol = hex_region != int(Region.SOLVENT)
    n_mol = np.bincount(qinv, weights=mol[qhex].astype(float), minlength=nq)
    n_all = np.bincount(qinv, minlength=nq)
    iface = (n_all == 2) & (n_mol == 1)
    owner = np.full(nq, -1)
    sel = mol[qhex]
    owner[qinv[sel]] = qhex[sel]
    for q in np.flatnonzero(iface):
        sph = spheres[hex_sphere[owner[q]]]
        cc = np.asarray(sph.center)
        d = qcent[q] - cc
        qcent[q] = cc + sph.radius * d / np.linalg.norm(d)

    hcent = verts[hv].mean(axis=1)
    nv = len(verts)
    allv = np.concatenate([verts, hcent, qcent])
    hc_id = nv + np.arange(H)
    qc_id = (nv + H + qinv).reshape(H, 6)

    q4 = quads  # (H, 6, 4)
    a = q4
    b = np.roll(q4, -1, axis=2)
    tets = np.empty((H, 6, 4, 4), dtype=np.int64)
    tets[..., 0] = a
    tets[..., 1] = b
    tets[..., 2] = qc_id[:, :, None]
    tets[..., 3] = hc_id[:, None, None]
    tets = tets.reshape(-1, 4)
    region = np.repeat(hex_region, 24)

    X = allv[tets]
    det = np.linalg.det(X[:, 1:] - X[:, :1])
    scale = (tol / 1e-9) ** 3
    bad = np.flatnonzero(np.abs(det) <= 1e-14 * scale)
    if len(bad):
        raise MeshGenerationError(f"degenerate cell {int(bad[0])}", int(bad[0]))
    neg = det < 0
    tets[neg, 0], tets[neg, 1] = tets[neg, 1].copy(), tets[neg, 0].copy()

    faces, tags = _boundary_faces(allv, tets, region)
    mesh = Mesh(allv, tets, region.astype(np.int8), faces, tags, float(h), tuple(spheres))
    return _tag_f0(mesh, f0_direction, f0_half_angle_deg)


def _boundary_faces(verts, cells, region):
    n = len(verts)
    keys, owners = _tet_face_keys(cells, n)
    order = np.argsort(keys, kind="stable")
    sk, so = keys[order], owners[order]
    brk = np.flatnonzero(np.diff(sk)) + 1
    starts = np.concatenate([[0], brk])
    counts = np.diff(np.concatenate([starts, [len(sk)]]))
    if np.any(counts > 2):
        raise MeshGenerationError("non-manifold face in cell complex")
    c0 = so[starts]
    c1 = np.where(counts == 2, so[np.minimum(starts + 1, len(so) - 1)], -1)
    r0 = region[c0]
    r1 = np.where(c1 >= 0, region[np.maximum(c1, 0)], -1)

    sel_keys, tags, inner = [], [], []
    outer_mask = counts == 1
    sel_keys.append(sk[starts[outer_mask]])
    tags.append(np.full(outer_mask.sum(), int(FaceTag.OUTER)))
    inner.append(c0[outer_mask])
    two = counts == 2
    for mol, tag in ((Region.MF, FaceTag.GAMMA_F), (Region.MR, FaceTag.GAMMA_R)):
        a = two & (r0 == int(mol)) & (r1 == int(Region.SOLVENT))
        b = two & (r1 == int(mol)) & (r0 == int(Region.SOLVENT))
        sel_keys.append(np.concatenate([sk[starts[a]], sk[starts[b]]]))
        tags.append(np.full(a.sum() + b.sum(), int(tag)))
        inner.append(np.concatenate([c0[a], c1[b]]))
    contact = two & (((r0 == 1) & (r1 == 2)) | ((r0 == 2) & (r1 == 1)))
    if np.any(contact):
        raise MeshGenerationError("flexible and rigid regions share a face")
    tri = _decode_key(np.concatenate(sel_keys), n)
    inner = np.concatenate(inner)
    return _orient(verts, cells, tri, inner), np.concatenate(tags).astype(np.int8)


def _decode_key(keys, n):
    a = keys // (n * n)
    b = (keys // n) % n
    c = keys % n
    return np.column_stack([a, b, c])


def _orient(verts, cells, tri, inner):
    P = verts[tri]
    nrm = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    cc = verts[cells[inner]].mean(axis=1)
    flip = np.einsum("ij,ij->i", nrm, P.mean(axis=1) - cc) < 0
    tri = tri.copy()
    tri[flip, 1], tri[flip, 2] = tri[flip, 2].copy(), tri[flip, 1].copy()
    return tri


def _tag_f0(mesh: Mesh, direction, half_angle_deg) -> Mesh:
    gf = mesh.faces_tagged(FaceTag.GAMMA_F)
    sph = [s for s in mesh.spheres if s.region == Region.MF]
    if len(gf) == 0 or not sph or half_angle_deg <= 0:
        return mesh
    c = np.asarray(sph[0].center)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    cen = mesh.face_geometry[0][gf] - c
    cosang = cen @ d / np.linalg.norm(cen, axis=1)
    pick = gf[cosang >= np.cos(np.deg2rad(half_angle_deg))]
    if len(pick) == 0:
        raise MeshGenerationError("clamped cap contains no faces; widen the cap angle")
    faces = np.concatenate([mesh.faces, mesh.faces[pick]])
    tags = np.concatenate([mesh.face_tag, np.full(len(pick), int(FaceTag.GAMMA_F0))])
    return Mesh(mesh.vertices, mesh.cells, mesh.cell_region, faces, tags.astype(np.int8),
                mesh.h, mesh.spheres)


def _subdivisions(radius, h):
    if h <= 0 or radius <= 0:
        raise ValueError("radius and h must be positive")
    return max(2, int(np.ceil(0.5 * np.pi * radius / h)))


def build_ball_in_box(radius: float, box_half_width: float, h: float,
                      region: Region = Region.MF, *, center=(0.0, 0.0, 0.0),
                      f0_direction=(-1.0, 0.0, 0.0), f0_half_angle_deg: float = 30.0) -> Mesh:
    """Mesh a ball of the given region inside the cube ``[-L, L]^3`` (shifted by center).

    Interface vertices lie exactly on the sphere.  For a flexible ball a
    spherical cap around ``f0_direction`` is tagged as the clamped part of
    the interface.
    """
    if box_half_width <= radius:
        raise MeshGenerationError("box must strictly contain the ball")
    c = np.asarray(center, dtype=float)
    n = _subdivisions(radius, h)
    lo, hi = c - box_half_width, c + box_half_width
    hexes, flag = _block(c, radius, lo, hi, n, h)
    sph = Sphere(Region(region), tuple(c.tolist()), float(radius))
    return _assemble([(hexes, flag, Region(region))], h, [sph], f0_direction, f0_half_angle_deg)


def build_two_balls_in_box(radius_f: float, radius_r: float, distance: float,
                           box_margin: float, h: float, *, split: float | None = None,
                           f0_direction=(-1.0, 0.0, 0.0), f0_half_angle_deg: float = 30.0) -> Mesh:
    """Flexible ball at the origin and rigid ball at ``(distance, 0, 0)``.

    The box extends ``box_margin`` beyond each centre.  The two blocks meet
    at the plane ``x = split`` (default: middle of the gap).
    """
    if distance <= radius_f + radius_r:
        raise MeshGenerationError("balls overlap")
    if split is None:
        split = 0.5 * (radius_f + distance - radius_r)
    if not (radius_f < split < distance - radius_r):
        raise MeshGenerationError("split plane must lie between the balls")
    n = _subdivisions(radius_f, h)
    W = float(box_margin)
    c1 = np.zeros(3)
    c2 = np.array([distance, 0.0, 0.0])
    b1 = _block(c1, radius_f, [-W, -W, -W], [split, W, W], n, h)
    b2 = _block(c2, radius_r, [split, -W, -W], [distance + W, W, W], n, h)
    spheres = [Sphere(Region.MF, (0.0, 0.0, 0.0), float(radius_f)),
               Sphere(Region.MR, tuple(c2.tolist()), float(radius_r))]
    return _assemble([(b1[0], b1[1], Region.MF), (b2[0], b2[1], Region.MR)], h, spheres,
                     f0_direction, f0_half_angle_deg)


# ---------------------------------------------------------------- inspection

@dataclass(frozen=True)
class InterfaceSet:
    """Faces of one tag with adjacent cells and geometry."""

    tag: FaceTag
    face_ids: np.ndarray
    triangles: np.ndarray
    inside_cells: np.ndarray
    outside_cells: np.ndarray
    centroids: np.ndarray
    normals: np.ndarray
    areas: np.ndarray


def extract_interface(mesh: Mesh, tag: FaceTag) -> InterfaceSet:
    ids = mesh.faces_tagged(FaceTag(tag))
    cen, nrm, area = mesh.face_geometry
    fc = mesh.face_cells[ids]
    return InterfaceSet(FaceTag(tag), ids, mesh.faces[ids], fc[:, 0], fc[:, 1],
                        cen[ids], nrm[ids], area[ids])


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _edges_closed(tris: np.ndarray) -> bool:
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e = np.sort(e, axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def validate_mesh(mesh: Mesh, debye_length: float | None = None) -> ValidationReport:
    """Check orientation, tagging, watertightness and volume bookkeeping."""
    rep = ValidationReport()
    vol = mesh.signed_volumes
    bad = np.flatnonzero(vol <= 0)
    if len(bad):
        rep.violations.append(f"cell {int(bad[0])} has non-positive volume ({len(bad)} total)")

    try:
        fc = mesh.face_cells
    except MeshFormatError as err:
        rep.violations.append(str(err))
        return rep
    reg = mesh.cell_region
    expect = {FaceTag.GAMMA_F: Region.MF, FaceTag.GAMMA_F0: Region.MF, FaceTag.GAMMA_R: Region.MR}
    for tag, mol in expect.items():
        ids = mesh.faces_tagged(tag)
        if len(ids) == 0:
            continue
        ok = (fc[ids, 1] >= 0) & (reg[fc[ids, 0]] == int(mol))
        ok &= reg[np.maximum(fc[ids, 1], 0)] == int(Region.SOLVENT)
        if not np.all(ok):
            j = int(ids[np.flatnonzero(~ok)[0]])
            rep.violations.append(f"face {j} tagged {tag.name} does not separate {mol.name} from SOLVENT")
        if tag != FaceTag.GAMMA_F0 and not _edges_closed(mesh.faces[ids]):
            rep.violations.append(f"{tag.name} is not watertight")

    f0 = mesh.faces_tagged(FaceTag.GAMMA_F0)
    if len(f0):
        gf = set(_face_key(mesh.faces[mesh.faces_tagged(FaceTag.GAMMA_F)], mesh.n_vertices).tolist())
        k0 = _face_key(mesh.faces[f0], mesh.n_vertices)
        if not all(int(k) in gf for k in k0):
            rep.violations.append("GAMMA_F0 is not a subset of GAMMA_F")

    # interfaces recomputed from cell regions must agree with the tags
    keys, owners = _tet_face_keys(mesh.cells, mesh.n_vertices)
    order = np.argsort(keys, kind="stable")
    sk, so = keys[order], owners[order]
    dup = np.flatnonzero(sk[1:] == sk[:-1])
    ra, rb = reg[so[dup]], reg[so[dup + 1]]
    mfmr = ((ra == 1) & (rb == 2)) | ((ra == 2) & (rb == 1))
    if np.any(mfmr):
        rep.violations.append("MF and MR cells share a face")
    for mol, tag in ((Region.MF, FaceTag.GAMMA_F), (Region.MR, FaceTag.GAMMA_R)):
        n_geo = int(np.sum(((ra == int(mol)) & (rb == 0)) | ((rb == int(mol)) & (ra == 0))))
        if n_geo != len(mesh.faces_tagged(tag)):
            rep.violations.append(f"{tag.name} tags ({len(mesh.faces_tagged(tag))}) "
                                  f"disagree with region boundary ({n_geo})")

    lo, hi = mesh.bounds
    ext = float(np.max(hi - lo))
    outer = mesh.faces_tagged(FaceTag.OUTER)
    P = mesh.vertices[mesh.faces[outer]]
    on_plane = np.zeros(len(outer), dtype=bool)
    for ax in range(3):
        for val in (lo[ax], hi[ax]):
            on_plane |= np.all(np.abs(P[:, :, ax] - val) <= 1e-9 * ext, axis=1)
    if not np.all(on_plane):
        rep.violations.append(f"OUTER face {int(outer[np.flatnonzero(~on_plane)[0]])} is off the box")
    n_boundary = int(np.sum(np.diff(np.concatenate([[0], np.flatnonzero(np.diff(sk)) + 1, [len(sk)]])) == 1))
    if n_boundary != len(outer):
        rep.violations.append("OUTER tags do not cover the domain boundary")

    box = float(np.prod(hi - lo))
    if abs(vol.sum() - box) > 1e-9 * box:
        rep.violations.append(f"cell volumes sum to {vol.sum():.12g}, box volume is {box:.12g}")

    if debye_length is not None and np.isfinite(debye_length):
        iface = mesh.nodes_on(FaceTag.GAMMA_F, FaceTag.GAMMA_R)
        if len(iface):
            X = mesh.vertices[iface]
            dist = float(np.min(np.minimum(X - lo, hi - X)))
            if dist < 2.0 * debye_length:
                msg = (f"interface is {dist:.3g} from the outer boundary, "
                       f"less than two Debye lengths ({2 * debye_length:.3g})")
                rep.warnings.append(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return rep


# ---------------------------------------------------------------- ascii format

_MAGIC = "electroelastic-mesh 1"


def write_mesh(mesh: Mesh, path) -> None:
    """Write the self-describing ASCII mesh format."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"h {float(mesh.h)!r}\n")
        fh.write(f"spheres {len(mesh.spheres)}\n")
        for s in mesh.spheres:
            c = [float(v) for v in s.center]
            fh.write(f"{s.region.name} {c[0]!r} {c[1]!r} {c[2]!r} {float(s.radius)!r}\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        fh.writelines(f"{x!r} {y!r} {z!r}\n" for x, y, z in mesh.vertices.tolist())
        fh.write(f"cells {mesh.n_cells}\n")
        names = {int(r): r.name for r in Region}
        fh.writelines(f"{a} {b} {c} {d} {names[r]}\n"
                      for (a, b, c, d), r in zip(mesh.cells.tolist(), mesh.cell_region.tolist()))
        fh.write(f"faces {len(mesh.faces)}\n")
        tnames = {int(t): t.name for t in FaceTag}
        fh.writelines(f"{a} {b} {c} {tnames[t]}\n"
                      for (a, b, c), t in zip(mesh.faces.tolist(), mesh.face_tag.tolist()))


def read_mesh(path) -> Mesh:
    """Read a mesh written by :func:`write_mesh`."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    pos = 0

    def header(word):
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"missing '{word}' section", pos + 1)
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != word:
            raise MeshFormatError(f"expected '{word} <value>'", pos + 1)
        pos += 1
        return parts[1]

    def block(count, ncols, kinds):
        nonlocal pos
        rows = []
        for i in range(count):
            ln = pos + i
            if ln >= len(lines):
                raise MeshFormatError("unexpected end of file", ln + 1)
            parts = lines[ln].split()
            if len(parts) != ncols:
                raise MeshFormatError(f"expected {ncols} fields", ln + 1)
            try:
                rows.append([k(p) for k, p in zip(kinds, parts)])
            except (ValueError, KeyError):
                raise MeshFormatError(f"cannot parse '{lines[ln]}'", ln + 1) from None
        pos += count
        return rows

    if not lines or lines[0].strip() != _MAGIC:
        raise MeshFormatError("not an electroelastic mesh file", 1)
    pos = 1
    try:
        h = float(header("h"))
        ns = int(header("spheres"))
    except ValueError:
        raise MeshFormatError("malformed header", pos) from None
    sph = block(ns, 5, [lambda s: Region[s], float, float, float, float])
    spheres = tuple(Sphere(r, (x, y, z), rad) for r, x, y, z, rad in sph)
    nv = int(header("vertices"))
    V = np.array(block(nv, 3, [float] * 3), dtype=float).reshape(nv, 3)
    nc = int(header("cells"))
    C = block(nc, 5, [int] * 4 + [lambda s: int(Region[s])])
    C = np.array(C, dtype=np.int64).reshape(nc, 5)
    nf = int(header("faces"))
    F = block(nf, 4, [int] * 3 + [lambda s: int(FaceTag[s])])
    F = np.array(F, dtype=np.int64).reshape(nf, 4)
    if nc and (C[:, :4].min() < 0 or C[:, :4].max() >= nv):
        raise MeshFormatError("cell references a missing vertex")
    if nf and (F[:, :3].min() < 0 or F[:, :3].max() >= nv):
        raise MeshFormatError("face references a missing vertex")
    return Mesh(V, C[:, :4], C[:, 4].astype(np.int8), F[:, :3], F[:, 3].astype(np.int8), h, spheres)
