"""Point charges, their Coulomb kernel and the Debye-Hueckel far field."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mesh import Mesh, Region, FaceTag


@dataclass(frozen=True)
class DielectricParams:
    """Material constants.

    ``kappa`` enters the equation as ``kappa**2 sinh(phi)`` without a
    permittivity factor, so the far-field decay rate is ``kappa / sqrt(eps_s)``.
    ``rigid_cavity`` selects whether rigid cells are a low-dielectric cavity
    (True) or are filled with solvent (False).
    """

    eps_m: float = 2.0
    eps_s: float = 80.0
    kappa: float = 0.0
    kappa0: float = 0.0
    rigid_cavity: bool = True

    def __post_init__(self):
        # equality is the homogeneous reference case
        if not 0 < self.eps_m <= self.eps_s:
            raise ValueError("permittivities must satisfy 0 < eps_m <= eps_s")
        if self.kappa < 0 or self.kappa0 < 0:
            raise ValueError("kappa must be non-negative")

    @property
    def decay(self) -> float:
        return self.kappa / np.sqrt(self.eps_s)

    @property
    def debye_length(self) -> float:
        return np.inf if self.kappa == 0 else np.sqrt(self.eps_s) / self.kappa

    def with_(self, **kw) -> "DielectricParams":
        return replace(self, **kw)

    def cell_eps(self, mesh: Mesh) -> np.ndarray:
        reg = mesh.cell_region
        mol = (reg == int(Region.MF)) | ((reg == int(Region.MR)) & self.rigid_cavity)
        return np.where(mol, self.eps_m, self.eps_s)

    def cell_kappa2(self, mesh: Mesh) -> np.ndarray:
        reg = mesh.cell_region
        mol = (reg == int(Region.MF)) | ((reg == int(Region.MR)) & self.rigid_cavity)
        return np.where(mol, 0.0, self.kappa**2)

    def jump_tags(self) -> tuple[FaceTag, ...]:
        return (FaceTag.GAMMA_F, FaceTag.GAMMA_R) if self.rigid_cavity else (FaceTag.GAMMA_F,)


@dataclass(frozen=True, eq=False)
class ChargeSystem:
    """Point charges with radii and a flexible/rigid flag per atom."""

    positions: np.ndarray
    charges: np.ndarray
    radii: np.ndarray
    flexible: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(pos)
        q = np.asarray(self.charges, dtype=float).reshape(n)
        r = np.broadcast_to(np.asarray(self.radii, dtype=float), (n,)).copy()
        f = np.broadcast_to(np.asarray(self.flexible, dtype=bool), (n,)).copy()
        for name, arr in (("positions", pos), ("charges", q), ("radii", r), ("flexible", f)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.charges)

    @property
    def n_flexible(self) -> int:
        return int(self.flexible.sum())

    @property
    def n_rigid(self) -> int:
        return len(self) - self.n_flexible

    def subset(self, mask) -> "ChargeSystem":
        m = np.asarray(mask, dtype=bool)
        return ChargeSystem(self.positions[m], self.charges[m], self.radii[m], self.flexible[m])

    def flexible_only(self) -> "ChargeSystem":
        return self.subset(self.flexible)

    def moved(self, positions) -> "ChargeSystem":
        return ChargeSystem(positions, self.charges, self.radii, self.flexible)

    def scaled_rigid(self, s: float) -> "ChargeSystem":
        q = np.where(self.flexible, self.charges, s * self.charges)
        return ChargeSystem(self.positions, q, self.radii, self.flexible)

    @staticmethod
    def concat(*systems: "ChargeSystem") -> "ChargeSystem":
        return ChargeSystem(np.concatenate([s.positions for s in systems]),
                            np.concatenate([s.charges for s in systems]),
                            np.concatenate([s.radii for s in systems]),
                            np.concatenate([s.flexible for s in systems]))

    def check_placement(self, mesh: Mesh) -> None:
        """Flexible charges must sit in MF cells and rigid ones in MR cells."""
        if len(self) == 0:
            return
        cells, _ = mesh.locate(self.positions)
        reg = mesh.cell_region[cells]
        want = np.where(self.flexible, int(Region.MF), int(Region.MR))
        bad = np.flatnonzero(reg != want)
        if len(bad):
            i = int(bad[0])
            raise ValueError(f"charge {i} at {self.positions[i].tolist()} lies in "
                             f"{Region(int(reg[i])).name}, expected {Region(int(want[i])).name}")

    def exclusion_distance(self, mesh: Mesh) -> float:
        """Smallest distance from a charge to an interface vertex."""
        nodes = mesh.nodes_on(FaceTag.GAMMA_F, FaceTag.GAMMA_R)
        if len(self) == 0 or len(nodes) == 0:
            return np.inf
        d = np.linalg.norm(mesh.vertices[nodes][None, :, :] - self.positions[:, None, :], axis=2)
        return float(d.min())


def _distances(charges: ChargeSystem, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    diff = X[:, None, :] - charges.positions[None, :, :]
    r = np.linalg.norm(diff, axis=2)
    hit = r == 0.0
    if np.any(hit):
        if np.any(hit & (charges.charges[None, :] != 0.0)):
            raise ZeroDivisionError("evaluation point coincides with a charge")
        r = np.where(hit, np.inf, r)  # a zero charge contributes nothing
    return single, diff, r


def eval_G(charges: ChargeSystem, eps_m: float, x) -> np.ndarray | float:
    """Singular Coulomb field ``sum q_i / (eps_m |x - x_i|)``."""
    single, _, r = _distances(charges, x)
    val = (charges.charges[None, :] / r).sum(axis=1) / eps_m
    return float(val[0]) if single else val


def eval_grad_G(charges: ChargeSystem, eps_m: float, x) -> np.ndarray:
    single, diff, r = _distances(charges, x)
    g = -(charges.charges[None, :, None] * diff / r[:, :, None] ** 3).sum(axis=1) / eps_m
    return g[0] if single else g


def eval_g_boundary(charges: ChargeSystem, diel: DielectricParams, x) -> np.ndarray | float:
    """Debye-Hueckel far field ``sum q_i exp(-k r_i) / (eps_s r_i)``, k = kappa/sqrt(eps_s)."""
    single, _, r = _distances(charges, x)
    k = diel.decay
    val = (charges.charges[None, :] * np.exp(-k * r) / r).sum(axis=1) / diel.eps_s
    return float(val[0]) if single else val


def chunked(fn, charges: ChargeSystem, x: np.ndarray, *args, chunk: int = 200_000):
    """Apply a kernel to many points without building a huge (points, charges) array."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    step = max(1, chunk // max(1, len(charges)))
    parts = [fn(charges, *args, x[i:i + step]) for i in range(0, len(x), step)]
    if not parts:
        return np.zeros((0,) if fn is not eval_grad_G else (0, 3))
    return np.concatenate(parts)


_MOLECULE = {"flexible": True, "rigid": False}


def read_pqr(path) -> ChargeSystem:
    """Read ATOM/HETATM records.

    The last five numeric fields are x, y, z, charge and radius.  An optional
    trailing ``flexible`` or ``rigid`` token assigns the atom to a molecule;
    atoms without it are flexible.
    """
    pos, q, rad, flex = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0] not in ("ATOM", "HETATM"):
                continue
            flag = True
            if tok[-1].lower() in _MOLECULE:
                flag = _MOLECULE[tok.pop().lower()]
            try:
                x, y, z, c, r = (float(t) for t in tok[-5:])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed atom record") from None
            if len(tok) < 7:
                raise ValueError(f"{path}:{lineno}: too few fields")
            pos.append((x, y, z))
            q.append(c)
            rad.append(r)
            flex.append(flag)
    return ChargeSystem(np.array(pos, dtype=float).reshape(-1, 3), q, rad, flex)


def write_pqr(charges: ChargeSystem, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, (p, c, r, f) in enumerate(zip(charges.positions.tolist(), charges.charges.tolist(),
                                             charges.radii.tolist(), charges.flexible.tolist()), 1):
            tag = "flexible" if f else "rigid"
            fh.write(f"ATOM {i} {p[0]!r} {p[1]!r} {p[2]!r} {c!r} {r!r} {tag}\n")
