"""Triangular meshes of 2D polygonal domains.

Meshes are immutable: vertex coordinates, counterclockwise triangles and a
per-vertex Dirichlet flag. ``build_uniform_mesh`` produces the unit-square
family used by the experiments; ``load_mesh``/``dump_mesh`` handle the
plain-text ``v``/``t`` format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_MAX_LEVEL = 10


class MeshError(ValueError):
    """Raised for invalid mesh data or malformed mesh files."""


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def boundary_vertices_from_edges(n_vertices: int, triangles: np.ndarray) -> np.ndarray:
    """Flag vertices lying on an edge that belongs to exactly one triangle."""
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    edges.sort(axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    flags = np.zeros(n_vertices, dtype=bool)
    flags[uniq[counts == 1].ravel()] = True
    return flags


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with Dirichlet boundary flags.

    ``h`` is the largest edge length over all triangles.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    is_boundary: np.ndarray
    h: float = field(init=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        is_boundary = np.ascontiguousarray(self.is_boundary, dtype=bool)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (n, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (m, 3)")
        if is_boundary.shape != (len(vertices),):
            raise MeshError("is_boundary must have one flag per vertex")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle references a vertex index out of range")
        if np.any(signed_areas(vertices, triangles) <= 0.0):
            raise MeshError("every triangle must have strictly positive signed area")
        for arr in (vertices, triangles, is_boundary):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "is_boundary", is_boundary)
        object.__setattr__(self, "h", _max_edge_length(vertices, triangles))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def interior(self) -> np.ndarray:
        """Indices of the non-Dirichlet vertices, in increasing order."""
        return np.flatnonzero(~self.is_boundary)

    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    def same_as(self, other: "Mesh") -> bool:
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.is_boundary, other.is_boundary)
        )


def _max_edge_length(vertices, triangles) -> float:
    if len(triangles) == 0:
        return 0.0
    p = vertices[triangles]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return float(lengths.max())


def uniform_divisions(level: int) -> int:
    """Number of cells per side of the level-``level`` unit-square mesh."""
    return 2 ** (level + 1)


def build_uniform_mesh(level: int, max_level: int = DEFAULT_MAX_LEVEL) -> Mesh:
    """Uniform right-triangle mesh of the unit square.

    The square is cut into ``n x n`` cells with ``n = 2**(level + 1)`` and
    every cell is split along its lower-left to upper-right diagonal, so the
    P1 stiffness matrix coincides with the 5-point Laplacian stencil.
    """
    if level < 0:
        raise MeshError(f"level must be nonnegative, got {level}")
    if level > max_level:
        raise MeshError(f"level {level} exceeds the configured cap {max_level}")
    n = uniform_divisions(level)
    ticks = np.arange(n + 1) / n
    x, y = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([x.ravel(), y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    is_boundary = (
        (vertices[:, 0] == 0.0)
        | (vertices[:, 0] == 1.0)
        | (vertices[:, 1] == 0.0)
        | (vertices[:, 1] == 1.0)
    )
    return Mesh(vertices, triangles, is_boundary)


def load_mesh(text: str) -> Mesh:
    """Parse the ``v x y`` / ``t i j k`` text format.

    Clockwise triangles are reoriented. Boundary vertices are those lying on
    an edge shared by a single triangle.
    """
    verts: list[tuple[float, float]] = []
    tris: list[tuple[int, int, int]] = []
    tri_lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        tag, args = tokens[0], tokens[1:]
        try:
            if tag == "v" and len(args) == 2:
                verts.append((float(args[0]), float(args[1])))
            elif tag == "t" and len(args) == 3:
                tris.append(tuple(int(a) for a in args))
                tri_lines.append(lineno)
            else:
                raise ValueError
        except ValueError:
            raise MeshError(f"line {lineno}: cannot parse {raw.strip()!r}") from None

    vertices = np.array(verts, dtype=float).reshape(-1, 2)
    triangles = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if len(triangles) == 0:
        raise MeshError("mesh file contains no triangles")
    for lineno, tri in zip(tri_lines, triangles):
        bad = [int(v) for v in tri if v < 0 or v >= len(vertices)]
        if bad:
            raise MeshError(
                f"line {lineno}: vertex index {bad[0]} out of range "
                f"(file defines {len(vertices)} vertices)"
            )

    areas = signed_areas(vertices, triangles)
    for lineno, area in zip(tri_lines, areas):
        if area == 0.0:
            raise MeshError(f"line {lineno}: degenerate triangle with zero area")
    flip = areas < 0.0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    is_boundary = boundary_vertices_from_edges(len(vertices), triangles)
    return Mesh(vertices, triangles, is_boundary)


def dump_mesh(mesh: Mesh) -> str:
    lines = [f"# {mesh.n_vertices} vertices, {mesh.n_triangles} triangles"]
    lines += [f"v {x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"t {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"
