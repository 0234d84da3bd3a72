"""
Unit tests for elements/quadrature_utils.py and elements/utils.py
"""

import math

import numpy as np
import pytest

from elements.quadrature_utils import LagrangeBasis, facet_quadrature, simplex_quadrature
from elements.utils import (
    LagrangeSpace,
    build_nodal_geometry,
    consistent_mass,
    lumped_mass,
    patch_indicator,
    reference_stencil_check,
    viscosity_constant,
)
from mesh.utils import EmptyPatchError, Triangulation, build_fine_submesh, interval_mesh, rectangle_mesh


# ============================================================================
# FIXTURES
# ============================================================================

@pytest.fixture
def right_triangle():
    return Triangulation(
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        np.array([[0, 1, 2]]),
        {(0, 1): 'bottom', (1, 2): 'diagonal', (0, 2): 'left'},
    )


@pytest.fixture
def perturbed_square():
    return rectangle_mesh(4, 4, perturbation=0.2, diagonal='random', seed=2)


# ============================================================================
# TEST: quadrature and reference basis
# ============================================================================

class TestQuadrature:

    @pytest.mark.parametrize('degree', range(0, 9))
    def test_triangle_exactness(self, degree):
        """Test monomials up to the declared degree integrate exactly on the reference triangle"""
        rule = simplex_quadrature(2, degree)
        x, y = rule.points[:, 0], rule.points[:, 1]
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                assert np.sum(rule.weights * x ** a * y ** b) == pytest.approx(exact, abs=1e-13)

    @pytest.mark.parametrize('degree', range(0, 9))
    def test_interval_exactness(self, degree):
        """Test monomials up to the declared degree integrate exactly on [0, 1]"""
        rule = simplex_quadrature(1, degree)
        for a in range(degree + 1):
            assert np.sum(rule.weights * rule.points[:, 0] ** a) == pytest.approx(1.0 / (a + 1), abs=1e-13)

    def test_facet_rule_on_facet(self):
        """Test facet points lie on the facet opposite the local vertex"""
        rule = facet_quadrature(2, 0, 3)
        np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, atol=1e-14)
        assert rule.weights.sum() == pytest.approx(1.0)


class TestLagrangeBasis:

    @pytest.mark.parametrize('d,k', [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)])
    def test_nodal_property(self, d, k):
        """Test phi_j(N_i) = delta_ij"""
        basis = LagrangeBasis(d, k)
        np.testing.assert_allclose(basis.values(basis.nodes), np.eye(basis.size), atol=1e-12)

    @pytest.mark.parametrize('d,k', [(1, 2), (2, 1), (2, 2), (2, 3)])
    def test_partition_of_unity(self, d, k):
        """Test shape values sum to 1 and gradients sum to 0"""
        points = simplex_quadrature(d, 2 * k + 1).points
        basis = LagrangeBasis(d, k)
        np.testing.assert_allclose(basis.values(points).sum(axis=1), 1.0, atol=1e-13)
        np.testing.assert_allclose(basis.gradients(points).sum(axis=1), 0.0, atol=1e-12)


# ============================================================================
# TEST: LagrangeSpace and mass matrices
# ============================================================================

class TestLagrangeSpace:

    def test_periodic_p2_dofs(self):
        """Test a periodic 3x3 square has 36 P2 dofs"""
        space = LagrangeSpace(rectangle_mesh(3, 3, periodic_x=True, periodic_y=True), 2)
        assert space.n_dofs == 36

    def test_quadratic_reproduced(self, perturbed_square):
        """Test P2 interpolation is exact for quadratics at quadrature points"""
        f = lambda x: x[..., 0] ** 2 + x[..., 0] * x[..., 1] - x[..., 1]  # noqa: E731
        space = LagrangeSpace(perturbed_square, 2)
        np.testing.assert_allclose(space.evaluate(space.interpolate(f)), f(space.points), atol=1e-12)

    def test_linear_gradient(self, perturbed_square):
        """Test the gradient of an interpolated linear field is constant"""
        space = LagrangeSpace(perturbed_square, 3)
        values = space.interpolate(lambda x: 2.0 * x[:, 0] - 3.0 * x[:, 1])
        grad = space.gradient(values)
        np.testing.assert_allclose(grad[..., 0], 2.0, atol=1e-10)
        np.testing.assert_allclose(grad[..., 1], -3.0, atol=1e-10)

    def test_stiffness_kills_constants(self, perturbed_square):
        """Test stiffness rows sum to zero"""
        K = LagrangeSpace(perturbed_square, 2).stiffness_matrix()
        np.testing.assert_allclose(np.asarray(K.sum(axis=1)).ravel(), 0.0, atol=1e-11)

    @pytest.mark.parametrize('k', [1, 2, 3])
    def test_viscous_metric_of_sub_cells(self, perturbed_square, k):
        """Test the viscous metric is J J^T of every fine sub-cell of the coarse cell"""
        space = LagrangeSpace(perturbed_square, k)
        fine_space = LagrangeSpace(build_fine_submesh(perturbed_square, k), 1)
        sub_cells = fine_space.jjt.reshape(space.n_cells, k * k, 2, 2)
        np.testing.assert_allclose(sub_cells, np.broadcast_to(space.viscous_jjt[:, None], sub_cells.shape),
                                   rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(space.viscous_jjt * k ** 2, space.jjt, rtol=1e-14)

    def test_unsupported_degree(self):
        """Test degree 4 is rejected"""
        from mesh.utils import UnsupportedDegreeError
        with pytest.raises(UnsupportedDegreeError):
            LagrangeSpace(interval_mesh(2), 4)


class TestMass:

    def test_interval_lumped(self):
        """Test m_i = h in the interior and h/2 at the ends of a uniform interval"""
        m = lumped_mass(LagrangeSpace(interval_mesh(4), 1))
        np.testing.assert_allclose(m, [0.125, 0.25, 0.25, 0.25, 0.125])

    def test_unit_interval_consistent(self):
        """Test M = [[1/3, 1/6], [1/6, 1/3]] on one unit interval"""
        M = consistent_mass(LagrangeSpace(interval_mesh(1), 1)).toarray()
        np.testing.assert_allclose(M, [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]], atol=1e-15)

    def test_uniform_2d_lumped(self):
        """Test m_i = Nel |K| / (d+1) on a uniform periodic square"""
        space = LagrangeSpace(rectangle_mesh(4, 4, periodic_x=True, periodic_y=True), 1)
        np.testing.assert_allclose(lumped_mass(space), 6 * (1.0 / 32.0) / 3.0, rtol=1e-12)

    @pytest.mark.parametrize('k', [1, 2, 3])
    def test_mass_consistency(self, perturbed_square, k):
        """Test M is symmetric with row sums equal to the lumped masses summing to |Omega|"""
        space = LagrangeSpace(perturbed_square, k)
        M = consistent_mass(space)
        m = lumped_mass(space)
        assert abs(M - M.T).max() <= 1e-14
        np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), m, atol=1e-12)
        assert m.sum() == pytest.approx(1.0, rel=1e-12)

    def test_p2_vertex_masses_vanish(self):
        """Test P2 vertex basis functions integrate to zero on triangles"""
        mesh = rectangle_mesh(2, 2)
        m = lumped_mass(LagrangeSpace(mesh, 2))
        np.testing.assert_allclose(m[:mesh.n_vertices], 0.0, atol=1e-15)


# ============================================================================
# TEST: nodal geometry
# ============================================================================

class TestNodalGeometry:

    def test_uniform_interval(self):
        """Test m = h, Phi = 1/h and C = 1/(2h) on a uniform periodic interval"""
        h = 1.0 / 8.0
        space = LagrangeSpace(interval_mesh(8, periodic=True), 1)
        geometry = build_nodal_geometry(space, space)
        np.testing.assert_allclose(geometry.m, h, rtol=1e-12)
        np.testing.assert_allclose(geometry.phi, 1.0 / h, rtol=1e-12)
        np.testing.assert_allclose(geometry.C, 1.0 / (2.0 * h), rtol=1e-12)
        np.testing.assert_allclose(geometry.kappa, 1.0, rtol=1e-12)

    def test_uniform_square(self):
        """Test C = 1/(2h^2), m = h^2 and Phi = sqrt(2)/h on right-diagonal triangles"""
        h = 0.25
        space = LagrangeSpace(rectangle_mesh(4, 4, periodic_x=True, periodic_y=True), 1)
        geometry = build_nodal_geometry(space, space)
        np.testing.assert_allclose(geometry.C, 1.0 / (2.0 * h * h), rtol=1e-12)
        np.testing.assert_allclose(geometry.m_fine, h * h, rtol=1e-12)
        np.testing.assert_allclose(geometry.phi, math.sqrt(2.0) / h, rtol=1e-12)

    def test_one_row_strip(self):
        """Test C m = 1/2 and Phi = 1/h on a one-row periodic strip whose cells repeat a node"""
        h = 1.0 / 8.0
        space = LagrangeSpace(rectangle_mesh(8, 1, (0.0, 1.0), (0.0, h), periodic_y=True), 1)
        geometry = build_nodal_geometry(space, space)
        interior = (space.dof_coords[:, 0] > 0.5 * h) & (space.dof_coords[:, 0] < 1.0 - 0.5 * h)
        assert space.patch.nel[interior].tolist() == [4] * 7
        assert space.patch.occurrences[interior].tolist() == [6] * 7
        np.testing.assert_allclose(geometry.C * geometry.m_fine, 0.5, rtol=1e-12)
        np.testing.assert_allclose(geometry.phi, 1.0 / h, rtol=1e-12)

    def test_single_triangle_indicator(self, right_triangle):
        """Test Phi = (1, sqrt 2, sqrt 2) on the unit right triangle"""
        phi = patch_indicator(LagrangeSpace(right_triangle, 1))
        np.testing.assert_allclose(phi, [1.0, math.sqrt(2.0), math.sqrt(2.0)], rtol=1e-14)

    def test_constant_scaling(self, perturbed_square):
        """Test C scales by s^-d when coordinates scale by s"""
        scaled = Triangulation(3.0 * perturbed_square.vertices, perturbed_square.cells, perturbed_square.boundary_facets)
        C = viscosity_constant(LagrangeSpace(perturbed_square, 1).patch, 2)
        C_scaled = viscosity_constant(LagrangeSpace(scaled, 1).patch, 2)
        np.testing.assert_allclose(C_scaled, C / 9.0, rtol=1e-12)

    def test_rigid_motion_invariance(self, perturbed_square):
        """Test Phi and C do not change under rotation and translation"""
        angle = 0.7
        R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        moved = Triangulation(
            perturbed_square.vertices @ R.T + np.array([5.0, -2.0]), perturbed_square.cells,
            perturbed_square.boundary_facets,
        )
        space, moved_space = LagrangeSpace(perturbed_square, 1), LagrangeSpace(moved, 1)
        np.testing.assert_allclose(patch_indicator(moved_space), patch_indicator(space), rtol=1e-12)
        np.testing.assert_allclose(viscosity_constant(moved_space.patch, 2), viscosity_constant(space.patch, 2), rtol=1e-12)

    def test_fine_geometry_p2(self, perturbed_square):
        """Test the fine P1 space shares the P2 dofs and its masses sum to |Omega|"""
        space = LagrangeSpace(perturbed_square, 2)
        fine_space = LagrangeSpace(build_fine_submesh(perturbed_square, 2), 1)
        geometry = build_nodal_geometry(space, fine_space)
        np.testing.assert_allclose(fine_space.dof_coords, space.dof_coords, atol=1e-14)
        assert geometry.m_fine.sum() == pytest.approx(1.0, rel=1e-12)
        assert np.all(geometry.m_fine > 0.0)
        assert np.all(geometry.phi > 0.0)

    def test_mismatched_spaces(self, perturbed_square):
        """Test a fine space with another dof count is rejected"""
        space = LagrangeSpace(perturbed_square, 2)
        with pytest.raises(EmptyPatchError):
            build_nodal_geometry(space, LagrangeSpace(perturbed_square, 1))

    def test_unknown_volume(self, perturbed_square):
        """Test an unknown patch volume rule is rejected"""
        with pytest.raises(ValueError):
            viscosity_constant(LagrangeSpace(perturbed_square, 1).patch, 2, volume='mean')


# ============================================================================
# TEST: P1 stencil
# ============================================================================

class TestStencil:

    def test_triangle_constants(self, right_triangle):
        """Test -2/3 |K| off the diagonal and 4/3 |K| on it"""
        stencil = reference_stencil_check(right_triangle.vertices)
        expected = np.full((3, 3), -2.0 / 3.0 * 0.5)
        np.fill_diagonal(expected, 4.0 / 3.0 * 0.5)
        np.testing.assert_allclose(stencil.matrix, expected, atol=1e-14)

    def test_interval_constants(self):
        """Test -h and +h on an interval of length h"""
        stencil = reference_stencil_check(np.array([[1.0], [1.5]]))
        np.testing.assert_allclose(stencil.matrix, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-14)
        assert stencil.alpha == 1.0
        assert stencil.gamma == 1.0
