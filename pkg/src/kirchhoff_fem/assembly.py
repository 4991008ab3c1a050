"""P1 finite element machinery on triangular meshes.

Functions of space and time follow the signature ``f(x, y, t)`` and must be
numpy-vectorized; exact gradients return a pair ``(dudx, dudy)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable

import numpy as np

from .mesh import Mesh
from .sparse import SolveReport, SolverError, SparseMatrix, cg_solve

ScalarField = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
GradientField = Callable[[np.ndarray, np.ndarray, float], tuple]

_REF_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class QuadratureRule:
    """Triangle rule in barycentric coordinates; weights sum to one."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if points.shape != (len(weights), 3):
            raise ValueError("points must be barycentric triples, one per weight")
        if np.any(weights <= 0.0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)


def _orbit(*bary):
    return sorted(set(permutations(bary)))


def _symmetric_rule(orbits, degree):
    points, weights = [], []
    for weight, bary in orbits:
        pts = _orbit(*bary)
        points += pts
        weights += [weight] * len(pts)
    return QuadratureRule(np.array(points), np.array(weights), degree)


# Dunavant rules; the last barycentric coordinate is 1 - a - b so each
# point sums to one exactly.
def _dunavant(orbits, degree):
    return _symmetric_rule([(w, (a, b, 1.0 - a - b)) for w, a, b in orbits], degree)


CENTROID = QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), 1)
MIDPOINT = _symmetric_rule([(1 / 3, (0.5, 0.5, 0.0))], 2)
DUNAVANT4 = _dunavant(
    [
        (0.223381589678011, 0.445948490915965, 0.445948490915965),
        (0.109951743655322, 0.091576213509771, 0.091576213509771),
    ],
    4,
)
DUNAVANT6 = _dunavant(
    [
        (0.116786275726379, 0.249286745170910, 0.249286745170910),
        (0.050844906370207, 0.063089014491502, 0.063089014491502),
        (0.082851075618374, 0.053145049844817, 0.310352451033784),
    ],
    6,
)
RULES = {1: CENTROID, 2: MIDPOINT, 4: DUNAVANT4, 6: DUNAVANT6}


def rule_of_degree(degree: int) -> QuadratureRule:
    """Cheapest tabulated rule exact for polynomials of ``degree``."""
    for d in sorted(RULES):
        if d >= degree:
            return RULES[d]
    raise ValueError(f"no quadrature rule of degree {degree}")


def element_matrices(coords) -> tuple[np.ndarray, np.ndarray]:
    """Local P1 mass and stiffness matrices of one triangle."""
    coords = np.asarray(coords, dtype=float)
    (x0, y0), (x1, y1), (x2, y2) = coords
    area = 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    if area <= 0.0:
        raise ValueError(f"triangle must have positive area, got {area}")
    grads = _p1_gradients(coords[None], np.array([area]))[0]
    return area * _REF_MASS, area * grads @ grads.T


def _p1_gradients(coords: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Constant gradients of the three hat functions, shape (m, 3, 2)."""
    # grad phi_i = perp(edge opposite i) / (2 |K|)
    x = coords[:, :, 0]
    y = coords[:, :, 1]
    dy = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    dx = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    return np.stack([dy, dx], axis=2) / (2.0 * areas[:, None, None])


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Mass and stiffness matrices restricted to the interior unknowns.

    ``interior`` lists the vertex of each unknown; ``interior_map`` maps a
    vertex to its unknown index, or -1 on the Dirichlet boundary.
    """

    mesh: Mesh
    M: SparseMatrix
    A: SparseMatrix
    interior: np.ndarray
    interior_map: np.ndarray
    full_M: SparseMatrix = field(repr=False)
    full_A: SparseMatrix = field(repr=False)
    areas: np.ndarray = field(repr=False)
    gradients: np.ndarray = field(repr=False)

    @property
    def n_unknowns(self) -> int:
        return len(self.interior)

    def restrict(self, u: "NodalField") -> np.ndarray:
        _check_mesh(u, self)
        return u.coeffs[self.interior]

    def extend(self, values: np.ndarray) -> "NodalField":
        coeffs = np.zeros(self.mesh.n_vertices)
        coeffs[self.interior] = values
        return NodalField(self.mesh, coeffs)

    def zero_field(self) -> "NodalField":
        return NodalField(self.mesh, np.zeros(self.mesh.n_vertices))


@dataclass(frozen=True, eq=False)
class NodalField:
    """P1 function given by its vertex values; zero on Dirichlet vertices."""

    mesh: Mesh
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.shape != (self.mesh.n_vertices,):
            raise ValueError("need exactly one coefficient per mesh vertex")
        if np.any(coeffs[self.mesh.is_boundary] != 0.0):
            raise ValueError("field must vanish on Dirichlet boundary vertices")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    def __sub__(self, other: "NodalField") -> "NodalField":
        if other.mesh is not self.mesh:
            raise ValueError("fields live on different meshes")
        return NodalField(self.mesh, self.coeffs - other.coeffs)


def _check_mesh(u: NodalField, sys: FemSystem):
    if u.mesh is not sys.mesh:
        raise ValueError("field and system are defined on different meshes")


def interpolate(func, mesh: Mesh, t: float | None = None) -> NodalField:
    """Nodal interpolant, with boundary values forced to zero.

    ``func`` is called as ``func(x, y)`` when ``t`` is None, else ``func(x, y, t)``.
    """
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    vals = func(x, y) if t is None else func(x, y, t)
    coeffs = np.broadcast_to(np.asarray(vals, dtype=float), (mesh.n_vertices,)).copy()
    coeffs[mesh.is_boundary] = 0.0
    return NodalField(mesh, coeffs)


def _element_matrices_batch(mesh: Mesh):
    coords = mesh.vertices[mesh.triangles]
    areas = mesh.areas()
    grads = _p1_gradients(coords, areas)
    stiff = areas[:, None, None] * np.einsum("kid,kjd->kij", grads, grads)
    mass = areas[:, None, None] * _REF_MASS[None]
    return mass, stiff, areas, grads


def assemble_global(triangles: np.ndarray, local: np.ndarray, n: int) -> SparseMatrix:
    """Sum element matrices ``local[k]`` into an ``n x n`` global matrix."""
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return SparseMatrix.from_triplets(rows, cols, local.ravel(), (n, n))


def assemble(mesh: Mesh) -> FemSystem:
    """Global P1 mass/stiffness matrices with Dirichlet rows/columns removed."""
    interior = mesh.interior
    if len(interior) == 0:
        raise ValueError("mesh has no interior vertex; nothing to solve for")
    mass, stiff, areas, grads = _element_matrices_batch(mesh)
    n = mesh.n_vertices
    full_M = assemble_global(mesh.triangles, mass, n)
    full_A = assemble_global(mesh.triangles, stiff, n)
    interior_map = np.full(n, -1, dtype=np.int64)
    interior_map[interior] = np.arange(len(interior))
    return FemSystem(
        mesh=mesh,
        M=full_M.submatrix(interior, interior),
        A=full_A.submatrix(interior, interior),
        interior=interior,
        interior_map=interior_map,
        full_M=full_M,
        full_A=full_A,
        areas=areas,
        gradients=grads,
    )


def quadrature_points(mesh: Mesh, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature nodes, each of shape (n_triangles, n_points)."""
    coords = mesh.vertices[mesh.triangles]
    pts = np.einsum("qi,kid->kqd", rule.points, coords)
    return pts[..., 0], pts[..., 1]


def integrate(values: np.ndarray, areas: np.ndarray, rule: QuadratureRule) -> float:
    """Sum of elementwise quadratures for values sampled at ``quadrature_points``."""
    return float(np.sum(areas * (values @ rule.weights)))


def load_vector(f: ScalarField, t: float, sys: FemSystem, rule: QuadratureRule = MIDPOINT) -> np.ndarray:
    """Interior load vector with entries approximating ``(f(., t), phi_i)``."""
    if rule.degree < 2:
        raise ValueError("load vectors need a quadrature rule of degree >= 2")
    mesh = sys.mesh
    xq, yq = quadrature_points(mesh, rule)
    fq = np.broadcast_to(np.asarray(f(xq, yq, t), dtype=float), xq.shape)
    # local[k, i] = |K| sum_q w_q f(x_q) lambda_i(x_q)
    local = sys.areas[:, None] * ((fq * rule.weights) @ rule.points)
    full = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    return full[sys.interior]


def function_l2_norm(f: ScalarField, t: float, sys: FemSystem, rule: QuadratureRule = DUNAVANT4) -> float:
    xq, yq = quadrature_points(sys.mesh, rule)
    fq = np.broadcast_to(np.asarray(f(xq, yq, t), dtype=float), xq.shape)
    return np.sqrt(integrate(fq**2, sys.areas, rule))


def l2_norm(u: NodalField, sys: FemSystem) -> float:
    v = sys.restrict(u)
    return float(np.sqrt(max(sys.M.quadratic_form(v), 0.0)))


def h1_seminorm_sq(u: NodalField, sys: FemSystem) -> float:
    """``||grad u||^2`` computed exactly as ``u^T A u``."""
    v = sys.restrict(u)
    return sys.A.quadratic_form(v)


def _vertex_values(u, sys: FemSystem) -> np.ndarray:
    """Vertex values of a NodalField, or of a raw array (boundary values allowed)."""
    if isinstance(u, NodalField):
        _check_mesh(u, sys)
        return u.coeffs
    values = np.asarray(u, dtype=float)
    if values.shape != (sys.mesh.n_vertices,):
        raise ValueError("need one value per mesh vertex")
    return values


def l2_error(u_exact: ScalarField, u_h: NodalField, t: float, sys: FemSystem,
             rule: QuadratureRule = DUNAVANT4) -> float:
    values = _vertex_values(u_h, sys)
    if rule.degree < 4:
        raise ValueError("error norms need a quadrature rule of degree >= 4")
    xq, yq = quadrature_points(sys.mesh, rule)
    diff = u_exact(xq, yq, t) - values[sys.mesh.triangles] @ rule.points.T
    return np.sqrt(integrate(diff**2, sys.areas, rule))


def h1_error(grad_exact: GradientField, u_h: NodalField, t: float, sys: FemSystem,
             rule: QuadratureRule = DUNAVANT4) -> float:
    """Seminorm error ``||grad(u - u_h)||``.

    ``u_h`` may be a NodalField or a plain array of vertex values.
    """
    values = _vertex_values(u_h, sys)
    if rule.degree < 4:
        raise ValueError("error norms need a quadrature rule of degree >= 4")
    xq, yq = quadrature_points(sys.mesh, rule)
    gx, gy = grad_exact(xq, yq, t)
    # piecewise-constant discrete gradient, shape (m, 2)
    gh = np.einsum("ki,kid->kd", values[sys.mesh.triangles], sys.gradients)
    sq = (gx - gh[:, :1]) ** 2 + (gy - gh[:, 1:]) ** 2
    return np.sqrt(integrate(sq, sys.areas, rule))


def h1_full_error(u_exact, grad_exact, u_h, t, sys, rule=DUNAVANT4) -> float:
    return float(np.hypot(l2_error(u_exact, u_h, t, sys, rule), h1_error(grad_exact, u_h, t, sys, rule)))


def apply_discrete_laplacian(u: NodalField, sys: FemSystem, tol: float = 1e-12) -> NodalField:
    """Return ``w = Delta_h u``, i.e. the solution of ``M w = -A u``."""
    w, report = _discrete_laplacian_interior(sys.restrict(u), sys, tol)
    return sys.extend(w)


def _discrete_laplacian_interior(v: np.ndarray, sys: FemSystem, tol: float = 1e-12,
                                 x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    w, report = cg_solve(sys.M, -sys.A.matvec(v), tol=tol, x0=x0)
    if not report.converged:
        raise SolverError(f"mass solve for the discrete Laplacian failed: {report}")
    return w, report


def ritz_rhs(grad_exact: GradientField, t: float, sys: FemSystem,
             rule: QuadratureRule = DUNAVANT4) -> np.ndarray:
    """Interior vector ``b_i = (grad u(., t), grad phi_i)``."""
    mesh = sys.mesh
    xq, yq = quadrature_points(mesh, rule)
    gx, gy = grad_exact(xq, yq, t)
    # elementwise integral of grad u, shape (m, 2)
    mean_grad = sys.areas[:, None] * np.stack([gx @ rule.weights, gy @ rule.weights], axis=1)
    local = np.einsum("kid,kd->ki", sys.gradients, mean_grad)
    full = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    return full[sys.interior]


def ritz_projection(grad_exact: GradientField, t: float, sys: FemSystem,
                    rule: QuadratureRule = DUNAVANT4, tol: float = 1e-12) -> NodalField:
    """Stiffness-orthogonal projection of ``u(., t)`` onto the P1 space.

    Only the exact gradient is needed; solves ``A u = ritz_rhs(...)``.
    """
    x, report = cg_solve(sys.A, ritz_rhs(grad_exact, t, sys, rule), tol=tol)
    if not report.converged:
        raise SolverError(f"Ritz projection solve failed: {report}")
    return sys.extend(x)
