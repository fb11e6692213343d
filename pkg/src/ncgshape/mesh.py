"""Triangular meshes of planar domains and their deformation.

A :class:`Mesh` stores vertex coordinates and counter-clockwise triangle
connectivity. The boundary is never stored; it is derived from the edges that
are incident to exactly one cell. Deformation fields are plain ``(N, 2)``
arrays aligned with ``Mesh.coords``.
"""

from __future__ import annotations

import dataclasses
import functools
from pathlib import Path

import numpy as np

from ncgshape.errors import AlignmentError, MeshError

MAX_DISC_LEVEL = 8


@dataclasses.dataclass(frozen=True, eq=False)
class Mesh:
    """Vertex coordinates plus triangle connectivity.

    Attributes:
        coords: ``(N, 2)`` float array of vertex positions.
        cells: ``(M, 3)`` integer array of vertex indices, counter-clockwise.

    """

    coords: np.ndarray
    cells: np.ndarray

    def __post_init__(self) -> None:
        coords = np.array(self.coords, dtype=float)
        cells = np.array(self.cells, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise MeshError(f"coords must have shape (N, 2), got {coords.shape}")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshError(f"cells must have shape (M, 3), got {cells.shape}")
        if cells.size and (cells.min() < 0 or cells.max() >= len(coords)):
            raise MeshError("cell references a vertex index out of range")
        dup = (
            (cells[:, 0] == cells[:, 1])
            | (cells[:, 1] == cells[:, 2])
            | (cells[:, 0] == cells[:, 2])
        )
        if np.any(dup):
            raise MeshError(f"cell {int(np.argmax(dup))} repeats a vertex")
        if not np.all(np.isfinite(coords)):
            raise MeshError("non-finite vertex coordinates")
        coords.setflags(write=False)
        cells.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "cells", cells)

    @property
    def num_vertices(self) -> int:
        return len(self.coords)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @functools.cached_property
    def boundary_edges(self) -> np.ndarray:
        """``(B, 2)`` array of boundary edges, oriented as in their cell."""
        c = self.cells
        edges = np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
        key = np.sort(edges, axis=1)
        _, inverse, counts = np.unique(
            key, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise MeshError("non-manifold edge shared by more than two cells")
        out = edges[counts[inverse] == 1]
        out.setflags(write=False)
        return out

    @functools.cached_property
    def boundary_vertex_indices(self) -> np.ndarray:
        idx = np.unique(self.boundary_edges)
        idx.setflags(write=False)
        return idx

    def signed_areas(self) -> np.ndarray:
        p = self.coords[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        return float(np.sum(self.signed_areas()))


def as_field(values, mesh: Mesh) -> np.ndarray:
    """Validate ``values`` as a deformation field on ``mesh``.

    Accepts either ``(N, 2)`` or interleaved ``(2N,)`` input and returns a
    float ``(N, 2)`` array.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1 and arr.size == 2 * mesh.num_vertices:
        arr = arr.reshape(-1, 2)
    if arr.shape != (mesh.num_vertices, 2):
        raise AlignmentError(
            f"field of shape {arr.shape} does not match mesh with "
            f"{mesh.num_vertices} vertices"
        )
    if not np.all(np.isfinite(arr)):
        raise AlignmentError("field has non-finite entries")
    return arr


def field_from_function(mesh: Mesh, fun) -> np.ndarray:
    """Evaluate a vector function ``fun(x, y) -> (vx, vy)`` at the vertices."""
    vx, vy = fun(mesh.coords[:, 0], mesh.coords[:, 1])
    n = mesh.num_vertices
    return np.column_stack(
        [np.broadcast_to(vx, (n,)), np.broadcast_to(vy, (n,))]
    ).astype(float)


def _orient_ccw(coords: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = coords[cells]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    neg = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) < 0
    cells = cells.copy()
    cells[neg] = cells[neg][:, [0, 2, 1]]
    return cells


def generate_unit_disc(refinement_level: int = 3) -> Mesh:
    """Triangulate the unit disc with concentric rings.

    Level ``L`` uses ``n = 2**(L + 1)`` rings; ring ``k`` sits at radius
    ``k / n`` and carries ``8 k`` equally spaced vertices, so the mesh has
    ``1 + 4 n (n + 1)`` vertices and ``8 n**2`` triangles.
    """
    level = int(refinement_level)
    if level < 0 or level > MAX_DISC_LEVEL:
        raise ValueError(f"refinement_level must lie in [0, {MAX_DISC_LEVEL}]")
    n = 2 ** (level + 1)

    points = [np.zeros((1, 2))]
    angles = [np.zeros(1)]
    for k in range(1, n + 1):
        theta = 2.0 * np.pi * np.arange(8 * k) / (8 * k)
        points.append(np.column_stack([np.cos(theta), np.sin(theta)]) * (k / n))
        angles.append(theta)
    coords = np.concatenate(points)
    coords[-8 * n :] /= np.hypot(coords[-8 * n :, 0], coords[-8 * n :, 1])[:, None]

    def offset(k: int) -> int:
        return 1 + 4 * k * (k - 1)

    cells = []
    outer = offset(1) + np.arange(8)
    for j in range(8):
        cells.append((0, outer[j], outer[(j + 1) % 8]))
    for k in range(2, n + 1):
        m, q = 8 * (k - 1), 8 * k
        a0, b0 = offset(k - 1), offset(k)
        i = j = 0
        while i < m or j < q:
            next_inner = 2.0 * np.pi * (i + 1) / m
            next_outer = 2.0 * np.pi * (j + 1) / q
            if j == q or (i < m and next_inner < next_outer):
                cells.append((a0 + i, a0 + (i + 1) % m, b0 + j % q))
                i += 1
            else:
                cells.append((a0 + i % m, b0 + (j + 1) % q, b0 + j))
                j += 1
    cells = _orient_ccw(coords, np.asarray(cells, dtype=np.int64))
    return Mesh(coords, cells)


def generate_unit_square(n: int = 4) -> Mesh:
    """Structured triangulation of ``[0, 1]^2`` with ``n`` cells per side."""
    if n < 1:
        raise ValueError("n must be positive")
    s = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(s, s, indexing="xy")
    coords = np.column_stack([xx.ravel(), yy.ravel()])
    cells = []
    for r in range(n):
        for c in range(n):
            v0 = r * (n + 1) + c
            v1, v2, v3 = v0 + 1, v0 + n + 2, v0 + n + 1
            cells.append((v0, v1, v2))
            cells.append((v0, v2, v3))
    return Mesh(coords, np.asarray(cells, dtype=np.int64))


def scale(mesh: Mesh, sx: float, sy: float) -> Mesh:
    """Anisotropically scale a mesh about the origin (``sx, sy > 0``)."""
    if sx <= 0 or sy <= 0:
        raise ValueError("scale factors must be positive")
    return Mesh(mesh.coords * np.array([sx, sy]), mesh.cells)


def boundary_vertices(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Boundary vertex indices and their outward unit normals.

    Each boundary edge contributes its outward unit normal to both end points.
    With two boundary edges per vertex the angle weights coincide, so the
    vertex normal is the renormalized sum of the two edge normals.

    Returns:
        ``(indices, normals)`` with ``normals`` of shape ``(len(indices), 2)``.

    Raises:
        MeshError: if the mesh has no boundary.

    """
    edges = mesh.boundary_edges
    if len(edges) == 0:
        raise MeshError("closed surface unsupported")
    d = mesh.coords[edges[:, 1]] - mesh.coords[edges[:, 0]]
    en = np.column_stack([d[:, 1], -d[:, 0]])
    en /= np.linalg.norm(en, axis=1)[:, None]
    acc = np.zeros_like(mesh.coords)
    np.add.at(acc, edges[:, 0], en)
    np.add.at(acc, edges[:, 1], en)
    idx = mesh.boundary_vertex_indices
    normals = acc[idx]
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return idx, normals


def deform(mesh: Mesh, field, t: float = 1.0) -> Mesh:
    """Perturbation of identity: move every vertex ``x`` to ``x + t V(x)``.

    No validity check is made on the result; see :func:`is_valid`.
    """
    values = as_field(field, mesh)
    if t == 0:
        return Mesh(mesh.coords.copy(), mesh.cells)
    return Mesh(mesh.coords + t * values, mesh.cells)


def cell_quality(mesh: Mesh) -> np.ndarray:
    """Per-cell ``4 sqrt(3) area / sum(edge_length**2)``; 1 for equilateral."""
    p = mesh.coords[mesh.cells]
    l2 = (
        np.sum((p[:, 1] - p[:, 0]) ** 2, axis=1)
        + np.sum((p[:, 2] - p[:, 1]) ** 2, axis=1)
        + np.sum((p[:, 0] - p[:, 2]) ** 2, axis=1)
    )
    # collapsed cells (all vertices coincident) get quality 0
    safe = np.where(l2 > 0, l2, 1.0)
    return np.where(l2 > 0, 4.0 * np.sqrt(3.0) * mesh.signed_areas() / safe, 0.0)


def is_valid(mesh: Mesh) -> bool:
    return bool(mesh.num_cells > 0 and np.all(mesh.signed_areas() > 0))


def min_cell_quality(mesh: Mesh) -> float:
    return float(np.min(cell_quality(mesh)))


# --- file formats -----------------------------------------------------------


def write_mesh(mesh: Mesh, path) -> None:
    """Write the plain ASCII mesh format (``N M``, coordinates, cells)."""
    lines = [f"{mesh.num_vertices} {mesh.num_cells}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.coords]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    tokens = Path(path).read_text().split("\n")
    rows = [line.split() for line in tokens if line.strip()]
    if not rows or len(rows[0]) != 2:
        raise MeshError(f"{path}: first line must be 'N M'")
    n, m = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 1 + n + m:
        raise MeshError(f"{path}: expected {1 + n + m} lines, found {len(rows)}")
    coords = np.array([[float(v) for v in r] for r in rows[1 : 1 + n]])
    cells = np.array([[int(v) for v in r] for r in rows[1 + n :]], dtype=np.int64)
    return Mesh(coords.reshape(n, 2), cells.reshape(m, 3))


def write_vtk(
    mesh: Mesh,
    path,
    *,
    title: str = "ncgshape mesh",
    point_scalars: dict[str, np.ndarray] | None = None,
    point_vectors: dict[str, np.ndarray] | None = None,
) -> None:
    """Write a legacy-VTK ASCII unstructured grid of triangles."""
    out = [
        "# vtk DataFile Version 2.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_vertices} double",
    ]
    out += [f"{x!r} {y!r} 0" for x, y in mesh.coords.tolist()]
    out.append(f"CELLS {mesh.num_cells} {4 * mesh.num_cells}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    out.append(f"CELL_TYPES {mesh.num_cells}")
    out += ["5"] * mesh.num_cells
    if point_scalars or point_vectors:
        out.append(f"POINT_DATA {mesh.num_vertices}")
        for name, vals in (point_scalars or {}).items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (mesh.num_vertices,):
                raise AlignmentError(f"scalar field {name!r} has shape {vals.shape}")
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(v) for v in vals.tolist()]
        for name, vals in (point_vectors or {}).items():
            vals = as_field(vals, mesh)
            out.append(f"VECTORS {name} double")
            out += [f"{vx!r} {vy!r} 0" for vx, vy in vals.tolist()]
    Path(path).write_text("\n".join(out) + "\n")
