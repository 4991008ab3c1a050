from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kirchhoff_fem.assembly import (
    DUNAVANT4,
    MIDPOINT,
    RULES,
    NodalField,
    apply_discrete_laplacian,
    assemble,
    assemble_global,
    element_matrices,
    h1_error,
    h1_full_error,
    h1_seminorm_sq,
    interpolate,
    l2_error,
    load_vector,
    ritz_projection,
    ritz_rhs,
)
from kirchhoff_fem.mesh import Mesh, build_uniform_mesh, load_mesh
from kirchhoff_fem.problems import example2
from kirchhoff_fem.sparse import inverse_power_iteration

from conftest import uniform_system

UNIT = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]


def test_reference_element_matrices():
    mass, stiff = element_matrices(UNIT)
    expected_stiff = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    expected_mass = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    assert np.max(np.abs(stiff - expected_stiff)) <= 1e-14
    assert np.max(np.abs(mass - expected_mass)) <= 1e-14


def test_element_rejects_inverted():
    with pytest.raises(ValueError):
        element_matrices([UNIT[0], UNIT[2], UNIT[1]])
    with pytest.raises(ValueError):
        element_matrices([(0, 0), (1, 1), (2, 2)])


coord = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(st.tuples(coord, coord), min_size=3, max_size=3), shift=st.tuples(coord, coord))
def test_element_translation_invariance_and_row_sums(pts, shift):
    pts = np.array(pts)
    d1, d2 = pts[1] - pts[0], pts[2] - pts[0]
    area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
    if abs(area) < 1e-2:
        return
    if area < 0:
        pts = pts[[0, 2, 1]]
    mass, stiff = element_matrices(pts)
    mass2, stiff2 = element_matrices(pts + np.array(shift))
    scale = np.abs(stiff).max()
    assert np.allclose(stiff, stiff2, atol=1e-9 * scale)
    assert np.allclose(mass, mass2, rtol=1e-9)
    assert np.max(np.abs(stiff.sum(axis=1))) <= 1e-10 * scale
    assert mass.sum() == pytest.approx(abs(area), rel=1e-12)


def test_level0_system():
    sys = uniform_system(0)
    assert sys.A.to_dense() == pytest.approx(np.array([[4.0]]), abs=1e-14)
    assert sys.M.to_dense() == pytest.approx(np.array([[1 / 8]]), abs=1e-15)


def test_level1_is_five_point_laplacian():
    sys = uniform_system(1)
    T = 2 * np.eye(3) - np.eye(3, k=1) - np.eye(3, k=-1)
    five_point = np.kron(np.eye(3), T) + np.kron(T, np.eye(3))
    assert np.max(np.abs(sys.A.to_dense() - five_point)) <= 1e-14


def test_stiffness_spd(rng):
    sys = uniform_system(2)
    for _ in range(100):
        x = rng.normal(size=sys.n_unknowns)
        assert sys.A.quadratic_form(x) > 0
        assert sys.M.quadratic_form(x) > 0
    assert sys.A.is_symmetric() and sys.M.is_symmetric()


@pytest.mark.parametrize("level", [0, 2, 4])
def test_full_stiffness_kills_constants(level):
    sys = uniform_system(level)
    assert np.max(np.abs(sys.full_A.matvec(np.ones(sys.mesh.n_vertices)))) <= 1e-12


def test_no_interior_vertex():
    mesh = load_mesh("v 0 0\nv 1 0\nv 0 1\nt 0 1 2\n")
    with pytest.raises(ValueError):
        assemble(mesh)


def test_shuffled_assembly_matches(rng):
    mesh = build_uniform_mesh(2)
    perm = rng.permutation(mesh.n_triangles)
    tris = mesh.triangles[perm]
    tris = np.array([np.roll(t, rng.integers(3)) for t in tris])
    shuffled = assemble(Mesh(mesh.vertices, tris, mesh.is_boundary))
    ref = uniform_system(2)
    assert np.max(np.abs(shuffled.A.to_dense() - ref.A.to_dense())) <= 1e-15
    assert np.max(np.abs(shuffled.M.to_dense() - ref.M.to_dense())) <= 1e-15


def test_assembly_equals_sum_of_elements():
    mesh = build_uniform_mesh(1)
    dense = np.zeros((mesh.n_vertices,) * 2)
    for tri in mesh.triangles:
        _, stiff = element_matrices(mesh.vertices[tri])
        dense[np.ix_(tri, tri)] += stiff
    assert np.max(np.abs(uniform_system(1).full_A.to_dense() - dense)) <= 1e-15


@pytest.mark.parametrize("degree, rule", sorted(RULES.items()))
def test_quadrature_monomials(degree, rule):
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(rule.weights > 0)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = 2 * factorial(a) * factorial(b) / factorial(a + b + 2)
            approx = np.sum(rule.weights * rule.points[:, 1] ** a * rule.points[:, 2] ** b)
            assert abs(approx - exact) <= 1e-13 * exact


def test_load_zero():
    assert np.array_equal(load_vector(lambda x, y, t: 0 * x, 0.0, uniform_system(2)), np.zeros(49))


@pytest.mark.parametrize("level", [0, 2])
def test_load_constant(level):
    sys = uniform_system(level)
    expected = np.zeros(sys.mesh.n_vertices)
    for tri, area in zip(sys.mesh.triangles, sys.mesh.areas()):
        expected[tri] += area / 3
    got = load_vector(lambda x, y, t: np.ones_like(x), 0.0, sys)
    assert np.max(np.abs(got - expected[sys.interior])) <= 1e-15


def test_load_linear_exact():
    # int_K (x+y) phi_i = |K|/12 (2 s_i + sum_{j != i} s_j), s = x + y at vertices
    sys = uniform_system(2)
    mesh = sys.mesh
    expected = np.zeros(mesh.n_vertices)
    for tri, area in zip(mesh.triangles, mesh.areas()):
        s = mesh.vertices[tri].sum(axis=1)
        expected[tri] += area / 12 * (s + s.sum())
    got = load_vector(lambda x, y, t: x + y, 0.0, sys)
    assert np.max(np.abs(got - expected[sys.interior])) <= 1e-14


def test_load_needs_degree_two():
    with pytest.raises(ValueError):
        load_vector(lambda x, y, t: x, 0.0, uniform_system(0), RULES[1])


def test_h1_seminorm_values():
    sys0 = uniform_system(0)
    assert h1_seminorm_sq(sys0.zero_field(), sys0) == 0.0
    assert h1_seminorm_sq(sys0.extend(np.ones(1)), sys0) == pytest.approx(4.0, abs=1e-14)
    sys4 = uniform_system(4)
    u = interpolate(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), sys4.mesh)
    assert h1_seminorm_sq(u, sys4) == pytest.approx(np.pi**2 / 2, rel=0.015)


def test_mesh_mismatch():
    with pytest.raises(ValueError):
        h1_seminorm_sq(uniform_system(1).zero_field(), uniform_system(0))


@pytest.mark.parametrize("mesh_text", [None, "v 0 0\nv 2 0\nv 1 1.5\nv 0.3 2\nv 1.1 0.6\n"
                                       "t 0 1 4\nt 1 2 4\nt 2 3 4\nt 3 0 4\n"])
def test_linear_reproduced_exactly(mesh_text):
    mesh = build_uniform_mesh(3) if mesh_text is None else load_mesh(mesh_text)
    sys = assemble(mesh)
    values = mesh.vertices.sum(axis=1)
    u = lambda x, y, t: x + y
    grad = lambda x, y, t: (np.ones_like(x), np.ones_like(y))
    assert l2_error(u, values, 0.0, sys) <= 1e-13
    assert h1_error(grad, values, 0.0, sys) <= 1e-13


def test_zero_field_error_against_sine():
    sys = uniform_system(4)
    u = lambda x, y, t: np.sin(np.pi * x) * np.sin(np.pi * y)
    assert l2_error(u, sys.zero_field(), 0.3, sys) == pytest.approx(0.5, rel=1e-6)


def test_error_rule_degree_enforced():
    sys = uniform_system(0)
    with pytest.raises(ValueError):
        l2_error(lambda x, y, t: x, sys.zero_field(), 0.0, sys, MIDPOINT)


def test_full_h1_error_combines():
    sys = uniform_system(2)
    p = example2()
    U = interpolate(p.exact_u, sys.mesh, 1.0)
    e0 = l2_error(p.exact_u, U, 1.0, sys)
    e1 = h1_error(p.exact_grad, U, 1.0, sys)
    assert h1_full_error(p.exact_u, p.exact_grad, U, 1.0, sys) == pytest.approx(np.hypot(e0, e1))


def test_discrete_laplacian_zero():
    sys = uniform_system(2)
    assert np.array_equal(apply_discrete_laplacian(sys.zero_field(), sys).coeffs, np.zeros(81))


def test_discrete_laplacian_eigenvector():
    sys = uniform_system(3)
    res = inverse_power_iteration(sys.A, sys.M, tol=1e-14)
    u = sys.extend(res.eigenvector)
    w = apply_discrete_laplacian(u, sys)
    assert np.max(np.abs(w.coeffs + res.eigenvalue * u.coeffs)) <= 1e-6 * res.eigenvalue


def test_discrete_laplacian_duality(rng):
    sys = uniform_system(2)
    for _ in range(50):
        u = rng.normal(size=sys.n_unknowns)
        v = rng.normal(size=sys.n_unknowns)
        w = sys.restrict(apply_discrete_laplacian(sys.extend(u), sys))
        lhs = -sys.M.quadratic_form(w, v)
        rhs = sys.A.quadratic_form(u, v)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


def _piecewise_gradient(field, level):
    """Exact gradient of a P1 field on the uniform mesh, by point location."""
    sys = uniform_system(level)
    n = 2 ** (level + 1)
    grads = np.einsum("ki,kid->kd", field.coeffs[sys.mesh.triangles], sys.gradients)

    def grad(x, y, t):
        i = np.minimum((x * n).astype(int), n - 1)
        j = np.minimum((y * n).astype(int), n - 1)
        upper = (y * n - j) > (x * n - i)
        k = 2 * (j * n + i) + upper
        return grads[k, 0], grads[k, 1]

    return grad


@pytest.mark.parametrize("level", [0, 2])
def test_ritz_reproduces_discrete_functions(level, rng):
    sys = uniform_system(level)
    v = sys.extend(rng.normal(size=sys.n_unknowns))
    proj = ritz_projection(_piecewise_gradient(v, level), 0.0, sys)
    assert np.max(np.abs(proj.coeffs - v.coeffs)) <= 1e-10


def test_ritz_galerkin_orthogonality():
    sys = uniform_system(3)
    p = example2()
    b = ritz_rhs(p.exact_grad, 1.0, sys)
    proj = ritz_projection(p.exact_grad, 1.0, sys)
    assert np.linalg.norm(b - sys.A.matvec(sys.restrict(proj))) <= 1e-9 * np.linalg.norm(b)


def test_ritz_error_halves():
    p = example2()
    errs = []
    for level in range(1, 5):
        sys = uniform_system(level)
        errs.append(h1_error(p.exact_grad, ritz_projection(p.exact_grad, 1.0, sys), 1.0, sys))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios >= 1.8) & (ratios <= 2.2)), ratios


def test_nodal_field_invariants():
    mesh = build_uniform_mesh(0)
    with pytest.raises(ValueError):
        NodalField(mesh, np.ones(mesh.n_vertices))
    with pytest.raises(ValueError):
        NodalField(mesh, np.zeros(3))


def test_monotonicity_property(rng):
    sys = uniform_system(1)

    def a(w):
        return 1 + sys.A.quadratic_form(w)

    for _ in range(200):
        u, v = rng.normal(size=(2, sys.n_unknowns)) * rng.exponential(2.0, size=(2, 1))
        d = u - v
        lhs = a(u) * sys.A.quadratic_form(u, d) - a(v) * sys.A.quadratic_form(v, d)
        assert lhs >= sys.A.quadratic_form(d) - 1e-12 * max(1.0, abs(lhs))


def test_global_assembly_helper():
    tris = np.array([[0, 1, 2]])
    local = np.arange(9.0).reshape(1, 3, 3)
    assert np.array_equal(assemble_global(tris, local, 3).to_dense(), local[0])
