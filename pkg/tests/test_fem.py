import numpy as np
import pytest
import scipy.sparse as sp
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from ncgshape import fem
from ncgshape import mesh as M
from ncgshape.errors import AssemblyError, SolverError


def unit_triangle():
    return M.Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def rel_asym(A):
    A = A.toarray()
    return np.abs(A - A.T).max() / np.abs(A).max()


# --- stiffness ------------------------------------------------------------------


def test_stiffness_unit_triangle():
    K = fem.assemble_stiffness(unit_triangle()).toarray()
    expected = [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]]
    np.testing.assert_allclose(K, expected, atol=1e-15)


@pytest.mark.parametrize("mesh", [M.generate_unit_disc(2), M.generate_unit_square(6)])
def test_stiffness_annihilates_constants(mesh):
    K = fem.assemble_stiffness(mesh)
    assert np.abs(K @ np.ones(mesh.num_vertices)).max() <= 1e-12
    assert rel_asym(K) <= 1e-12


def test_stiffness_scale_invariant(disc2):
    K1 = fem.assemble_stiffness(disc2)
    K2 = fem.assemble_stiffness(M.scale(disc2, 2.0, 2.0))
    assert abs(K1 - K2).max() <= 1e-12


def test_stiffness_rejects_degenerate_cell():
    m = M.Mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    with pytest.raises(AssemblyError) as info:
        fem.assemble_stiffness(m)
    assert info.value.cell == 0


# --- load -----------------------------------------------------------------------


def test_load_linear_source_matches_symbolic_integral():
    x, y = sympy.symbols("x y")
    basis = [1 - x - y, x, y]
    exact = [
        float(sympy.integrate(sympy.integrate(x * phi, (y, 0, 1 - x)), (x, 0, 1)))
        for phi in basis
    ]
    np.testing.assert_allclose(exact, [1 / 24, 1 / 12, 1 / 24], atol=1e-15)
    b = fem.assemble_load(unit_triangle(), lambda x, y: x)
    np.testing.assert_allclose(b, exact, atol=1e-15)


def test_load_general_linear_source_exact():
    # f * phi is quadratic for linear f, which the mid-edge rule integrates exactly
    x, y = sympy.symbols("x y")
    f = 3 * x - 2 * y + 0.5
    basis = [1 - x - y, x, y]
    exact = [
        float(sympy.integrate(sympy.integrate(f * phi, (y, 0, 1 - x)), (x, 0, 1)))
        for phi in basis
    ]
    b = fem.assemble_load(unit_triangle(), sympy.lambdify((x, y), f, "numpy"))
    np.testing.assert_allclose(b, exact, atol=1e-15)


def test_load_constant_sums_to_area(disc2):
    b = fem.assemble_load(disc2, 1.0)
    assert b.sum() == pytest.approx(disc2.area(), abs=1e-12)


def test_load_zero(disc2):
    assert np.array_equal(fem.assemble_load(disc2, 0.0), np.zeros(disc2.num_vertices))


def test_integrate_quadratic_exact():
    # int over unit triangle of x^2 + y^2 is 1/6
    assert fem.integrate(unit_triangle(), lambda x, y: x**2 + y**2) == pytest.approx(1 / 6, abs=1e-15)


def test_integrate_nodal_linear_exact():
    m = M.generate_unit_square(3)
    vals = 2 * m.coords[:, 0] + m.coords[:, 1] + 1
    assert fem.integrate_nodal(m, vals) == pytest.approx(2.5, abs=1e-14)


# --- linear solves ----------------------------------------------------------------


def test_pcg_diagonal(rng):
    d = rng.uniform(0.5, 4, size=30)
    b = rng.normal(size=30)
    x = fem.solve_sparse(sp.diags(d).tocsr(), b, 1e-14)
    np.testing.assert_allclose(x, b / d, atol=1e-14)


def test_pcg_two_by_two():
    x = fem.solve_sparse(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]), 1e-14)
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-14)


def test_pcg_zero_rhs():
    x = fem.solve_sparse(sp.identity(5, format="csr"), np.zeros(5))
    assert np.array_equal(x, np.zeros(5))


def test_pcg_residual_contract(disc3):
    K = fem.assemble_stiffness(disc3)
    bc = fem.DirichletBC(disc3.boundary_vertex_indices)
    A, b = fem.apply_dirichlet(K, fem.assemble_load(disc3, 1.0), bc)
    x = fem.solve_sparse(A, b, 1e-10)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_pcg_nonconvergence_reports_residual(disc3):
    K = fem.assemble_stiffness(disc3)
    bc = fem.DirichletBC(disc3.boundary_vertex_indices)
    A, b = fem.apply_dirichlet(K, fem.assemble_load(disc3, 1.0), bc)
    with pytest.raises(SolverError) as info:
        fem.solve_sparse(A, b, 1e-12, maxiter=3)
    assert info.value.residual > 1e-12


def test_dirichlet_elimination_symmetric(disc2):
    K = fem.assemble_stiffness(disc2)
    A, _ = fem.apply_dirichlet(K, np.ones(disc2.num_vertices), fem.DirichletBC(disc2.boundary_vertex_indices))
    assert rel_asym(A) <= 1e-12


# --- Poisson ------------------------------------------------------------------


def test_state_zero_source(disc2):
    assert np.array_equal(fem.solve_poisson_state(disc2, 0.0), np.zeros(disc2.num_vertices))


def test_state_and_adjoint_at_centre(disc3):
    u = fem.solve_poisson_state(disc3, 1.0)
    p = fem.solve_poisson_adjoint(disc3)
    centre = np.argmin(np.hypot(*disc3.coords.T))
    assert abs(u[centre] - 0.25) <= 2e-2
    assert abs(p[centre] + 0.25) <= 2e-2
    np.testing.assert_allclose(p, -u, atol=1e-9)


def test_state_converges_to_radial_solution():
    errs = []
    for level in (2, 3, 4):
        m = M.generate_unit_disc(level)
        r = np.hypot(*m.coords.T)
        errs.append(np.abs(fem.solve_poisson_state(m, 1.0) - (1 - r**2) / 4).max())
    assert errs[0] > errs[1] > errs[2]


def test_state_maximum_principle(disc3):
    u = fem.solve_poisson_state(disc3, 1.0)
    assert u.min() >= 0.0


def test_patch_test_linear_solution():
    m = M.generate_unit_square(6)
    exact = 1.0 + 2.0 * m.coords[:, 0] - 3.0 * m.coords[:, 1]
    idx = m.boundary_vertex_indices
    bc = fem.DirichletBC(idx, exact[idx])
    u = fem.solve_dirichlet(fem.assemble_stiffness(m), np.zeros(m.num_vertices), bc, 1e-14)
    assert np.abs(u - exact).max() <= 1e-10


# --- elasticity -------------------------------------------------------------------


def test_elasticity_symmetric_positive_definite(disc2):
    A = fem.assemble_elasticity(disc2)
    assert rel_asym(A) <= 1e-12
    assert np.linalg.eigvalsh(A.toarray()).min() > 0


@pytest.mark.parametrize(
    "field",
    [lambda x, y: (np.ones_like(x), 0 * x), lambda x, y: (-y, x)],
    ids=["translation", "rotation"],
)
def test_elasticity_rigid_motions_only_see_damping(disc2, field):
    U = M.field_from_function(disc2, field).reshape(-1)
    damping = 0.2
    A = fem.assemble_elasticity(disc2, 1.0, damping)
    mass = sp.kron(fem.assemble_mass(disc2), sp.identity(2))
    assert U @ (A @ U) == pytest.approx(damping * U @ (mass @ U), rel=1e-12)
    A_small = fem.assemble_elasticity(disc2, 1.0, 1e-12)
    assert abs(U @ (A_small @ U)) <= 1e-10


def test_elasticity_linear_field_energy(disc2):
    # U = B x has constant strain sym(B): energy 2 mu |Omega| |sym B|^2 + damping term
    B = np.array([[0.3, -1.2], [0.7, 0.5]])
    U = (disc2.coords @ B.T).reshape(-1)
    eps = 0.5 * (B + B.T)
    mu, damping = 1.7, 0.2
    A = fem.assemble_elasticity(disc2, mu, damping)
    mass = sp.kron(fem.assemble_mass(disc2), sp.identity(2))
    expected = 2 * mu * disc2.area() * np.sum(eps**2) + damping * U @ (mass @ U)
    assert U @ (A @ U) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_elasticity_coercive(seed):
    m = M.generate_unit_disc(1)
    U = np.random.default_rng(seed).normal(size=2 * m.num_vertices)
    damping = 0.2
    A = fem.assemble_elasticity(m, 1.0, damping)
    mass = sp.kron(fem.assemble_mass(m), sp.identity(2))
    assert U @ (A @ U) >= damping * U @ (mass @ U) * (1 - 1e-12) > 0


def test_elasticity_parameter_checks(disc2):
    with pytest.raises(ValueError):
        fem.assemble_elasticity(disc2, 0.0, 0.2)
    with pytest.raises(ValueError):
        fem.assemble_elasticity(disc2, 1.0, 0.0)


def test_mass_matrix_integrates_constants(disc2):
    Mm = fem.assemble_mass(disc2)
    one = np.ones(disc2.num_vertices)
    assert one @ (Mm @ one) == pytest.approx(disc2.area(), abs=1e-12)
