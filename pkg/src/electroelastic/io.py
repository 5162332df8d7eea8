"""Legacy-VTK ASCII export and import, and run manifests.

Values are written with ``repr`` so a round trip through text is exact.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import FaceTag, Mesh

_VTK_TET = 10
_VTK_TRI = 5


def _fmt(x: float) -> str:
    return repr(float(x))


def _rows(arr: np.ndarray) -> str:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    return "\n".join(" ".join(_fmt(v) for v in row) for row in arr.tolist()) + "\n"


def _data_block(kind: str, n: int, fields: dict) -> str:
    if not fields:
        return ""
    out = [f"{kind} {n}\n"]
    for name, values in fields.items():
        v = np.asarray(values, dtype=float)
        if v.shape[0] != n:
            raise ValueError(f"field {name!r} has {v.shape[0]} entries, expected {n}")
        if v.ndim == 1:
            out.append(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            out.append(_rows(v[:, None]))
        elif v.ndim == 2 and v.shape[1] == 3:
            out.append(f"VECTORS {name} double\n")
            out.append(_rows(v))
        else:
            raise ValueError(f"field {name!r} must be scalar or 3-vector per entry")
    return "".join(out)


def _write_grid(path, title: str, points: np.ndarray, conn: np.ndarray, ctype: int,
                point_data: dict, cell_data: dict) -> None:
    npts, ncell = len(points), len(conn)
    k = conn.shape[1]
    parts = ["# vtk DataFile Version 3.0\n", f"{title}\n", "ASCII\n", "DATASET UNSTRUCTURED_GRID\n",
             f"POINTS {npts} double\n", _rows(points),
             f"CELLS {ncell} {ncell * (k + 1)}\n"]
    parts.append("".join(f"{k} " + " ".join(str(i) for i in row) + "\n" for row in conn.tolist()))
    parts.append(f"CELL_TYPES {ncell}\n")
    parts.append(f"{ctype}\n" * ncell)
    parts.append(_data_block("POINT_DATA", npts, point_data))
    parts.append(_data_block("CELL_DATA", ncell, cell_data))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(parts))


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "electroelastic") -> None:
    """Tetrahedral mesh with nodal and per-cell fields."""
    cd = {"region": mesh.cell_region.astype(float)}
    cd.update(cell_data or {})
    _write_grid(path, title, mesh.vertices, mesh.cells, _VTK_TET, point_data or {}, cd)


def write_face_vtk(path, mesh: Mesh, tag: FaceTag, face_data: dict | None = None,
                   title: str = "electroelastic faces") -> None:
    """Triangles of one face tag with per-face fields; points are the full vertex table."""
    ids = mesh.faces_tagged(tag)
    _write_grid(path, title, mesh.vertices, mesh.faces[ids], _VTK_TRI, {}, face_data or {})


@dataclass
class VTKData:
    points: np.ndarray
    cells: np.ndarray
    cell_types: np.ndarray
    point_data: dict = field(default_factory=dict)
    cell_data: dict = field(default_factory=dict)


def read_vtk(path) -> VTKData:
    """Read the subset of legacy VTK written by :func:`write_vtk` and :func:`write_face_vtk`."""
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    lines = [ln.strip() for ln in tokens]
    if not lines[0].startswith("# vtk DataFile"):
        raise ValueError(f"{path}: not a legacy VTK file")
    if lines[2] != "ASCII" or lines[3] != "DATASET UNSTRUCTURED_GRID":
        raise ValueError(f"{path}: only ASCII unstructured grids are supported")
    i = 4
    out = VTKData(np.zeros((0, 3)), np.zeros((0, 0), int), np.zeros(0, int))
    section = None
    n_section = 0

    def take(count):
        nonlocal i
        block = lines[i:i + count]
        i += count
        return block

    while i < len(lines):
        ln = lines[i]
        i += 1
        if not ln:
            continue
        head = ln.split()
        key = head[0]
        if key == "POINTS":
            n = int(head[1])
            out.points = np.array([[float(v) for v in r.split()] for r in take(n)]).reshape(n, 3)
        elif key == "CELLS":
            n = int(head[1])
            rows = [[int(v) for v in r.split()] for r in take(n)]
            out.cells = np.array([r[1:] for r in rows], dtype=np.int64)
        elif key == "CELL_TYPES":
            n = int(head[1])
            out.cell_types = np.array([int(r) for r in take(n)], dtype=np.int64)
        elif key in ("POINT_DATA", "CELL_DATA"):
            section = out.point_data if key == "POINT_DATA" else out.cell_data
            n_section = int(head[1])
        elif key == "SCALARS":
            take(1)  # LOOKUP_TABLE
            section[head[1]] = np.array([float(r) for r in take(n_section)])
        elif key == "VECTORS":
            section[head[1]] = np.array([[float(v) for v in r.split()] for r in take(n_section)])
        else:
            raise ValueError(f"{path}: unexpected line {ln!r}")
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, files, extra: dict | None = None, name: str = "manifest.json") -> Path:
    """List every file (relative to ``directory``) with its sha256."""
    directory = Path(directory)
    entries = []
    for f in sorted(Path(p) for p in files):
        rel = os.path.relpath(f, directory)
        entries.append({"file": rel.replace(os.sep, "/"), "sha256": sha256_file(f)})
    doc = dict(extra or {})
    doc["files"] = entries
    path = directory / name
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def verify_manifest(path) -> list[str]:
    """Return the files whose checksum no longer matches."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="ascii"))
    bad = []
    for e in doc["files"]:
        f = path.parent / e["file"]
        if not f.exists() or sha256_file(f) != e["sha256"]:
            bad.append(e["file"])
    return bad


def write_table_csv(path, header, rows) -> None:
    """Generic CSV with ``repr`` formatting for floats."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(cell(v) for v in r) + "\n")


__all__ = ["write_vtk", "write_face_vtk", "read_vtk", "VTKData", "sha256_file", "write_manifest",
           "verify_manifest", "write_table_csv"]
