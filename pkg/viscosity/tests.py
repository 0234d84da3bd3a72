"""
Unit tests for viscosity/utils.py
"""

import numpy as np
import pytest

from elements.utils import LagrangeSpace, build_nodal_geometry
from mesh.utils import PatchTable, equilateral_mesh, interval_mesh, rectangle_mesh
from physics.utils import IdealMHD, LinearAdvection, conserved_from_primitive
from viscosity.utils import (
    ResidualField,
    StepSizeError,
    ViscosityCapError,
    ViscosityField,
    bdf2_derivative,
    check_viscosity_cap,
    component_groups,
    first_order_viscosity,
    lax_friedrichs_deviation,
    normalization,
    residual_projection,
    residual_viscosity,
    resolved_groups,
    smoothness_indicator,
)


@pytest.fixture
def periodic_interval():
    space = LagrangeSpace(interval_mesh(8, periodic=True), 1)
    return space, build_nodal_geometry(space, space)


# ============================================================================
# TEST: BDF2 time derivative
# ============================================================================

class TestBdf2:

    def test_constant_step(self):
        """Test omega = 1 gives (3/2 U^n - 2 U^n-1 + 1/2 U^n-2) / tau"""
        dU = bdf2_derivative(np.array([4.0]), np.array([1.0]), np.array([0.0]), 0.5, 0.5)
        assert dU[0] == pytest.approx((1.5 * 4.0 - 2.0 * 1.0) / 0.5)

    def test_variable_step_exact_for_quadratics(self):
        """Test the variable-step formula differentiates t^2 exactly"""
        t = np.array([0.2, 0.7, 1.0])
        dU = bdf2_derivative(t[2:] ** 2, t[1:2] ** 2, t[:1] ** 2, t[2] - t[1], t[1] - t[0])
        assert dU[0] == pytest.approx(2.0, rel=1e-13)

    def test_bdf1_fallback(self):
        """Test one history level gives the backward difference"""
        dU = bdf2_derivative(np.array([3.0, 1.0]), np.array([1.0, 1.0]), tau_n=0.5)
        np.testing.assert_allclose(dU, [4.0, 0.0])

    def test_no_history(self):
        """Test the derivative is zero without history"""
        np.testing.assert_array_equal(bdf2_derivative(np.ones((3, 6))), np.zeros((3, 6)))

    @pytest.mark.parametrize('tau_n,tau_nm1', [(0.0, 0.1), (0.1, 0.0), (-0.1, 0.1)])
    def test_non_positive_step(self, tau_n, tau_nm1):
        """Test non-positive step sizes are rejected"""
        with pytest.raises(StepSizeError):
            bdf2_derivative(np.ones(2), np.ones(2), np.ones(2), tau_n, tau_nm1)


# ============================================================================
# TEST: first-order viscosity
# ============================================================================

class TestFirstOrderViscosity:

    def test_uniform_interval(self, periodic_interval):
        """Test eps^L = C m Phi lambda = lambda / (2h) on a uniform periodic interval"""
        space, geometry = periodic_interval
        eps = first_order_viscosity(np.zeros((space.n_dofs, 1)), geometry, LinearAdvection([1.3]))
        np.testing.assert_allclose(eps.values, 1.3 / (2.0 / 8.0), rtol=1e-12)
        assert eps.kind == 'first-order'

    def test_lambda_is_patch_max(self):
        """Test the wave speed entering eps^L is the largest one around the node"""
        space = LagrangeSpace(interval_mesh(4), 1)
        geometry = build_nodal_geometry(space, space)
        gamma = 1.4
        rho = np.array([1.0, 1.0, 0.25, 1.0, 1.0])
        U = conserved_from_primitive(rho, np.zeros((5, 2)), np.ones(5), np.zeros((5, 2)), gamma)
        eps = first_order_viscosity(U, geometry, IdealMHD(gamma))
        peak = np.sqrt(gamma / 0.25)
        lam = eps.values / (geometry.C * geometry.m_fine * geometry.phi)
        np.testing.assert_allclose(lam, [np.sqrt(gamma), peak, peak, peak, np.sqrt(gamma)], rtol=1e-12)

    def test_lax_friedrichs_interval(self, periodic_interval):
        """Test eps^L J J^T equals h lambda / 2 on a uniform interval"""
        space, geometry = periodic_interval
        assert lax_friedrichs_deviation(space, geometry, np.full(space.n_dofs, 1.3)) <= 1e-12

    def test_lax_friedrichs_equilateral(self):
        """Test eps^L J J^T equals (1/2) lambda Phi h^2 I on an equilateral mesh"""
        space = LagrangeSpace(equilateral_mesh(8), 1)
        geometry = build_nodal_geometry(space, space)
        assert lax_friedrichs_deviation(space, geometry, np.full(space.n_dofs, 0.7)) <= 1e-12

    def test_lax_friedrichs_right_triangles(self):
        """Test right-angled cells do not reach the isotropic target"""
        space = LagrangeSpace(rectangle_mesh(4, 4, periodic_x=True, periodic_y=True), 1)
        geometry = build_nodal_geometry(space, space)
        assert lax_friedrichs_deviation(space, geometry, np.ones(space.n_dofs)) > 1e-3


# ============================================================================
# TEST: residual and normalization
# ============================================================================

class TestResidual:

    def test_groups_mhd(self):
        """Test the MHD groups are rho, m, E and B"""
        groups = component_groups(IdealMHD(1.4), 2)
        assert groups == {'rho': [0], 'm': [1, 2], 'E': [3], 'B': [4, 5]}

    def test_groups_scalar(self):
        """Test a scalar model has one group per component"""
        assert component_groups(LinearAdvection([1.0], components=2), 1) == {'u0': [0], 'u1': [1]}

    def test_exact_transport_has_no_residual(self):
        """Test u = x - t advected with speed 1 leaves a vanishing residual"""
        space = LagrangeSpace(interval_mesh(8), 1)
        U = space.interpolate(lambda x: x[:, :1])
        residual = residual_projection(U, -np.ones_like(U), space, LinearAdvection([1.0]), rel_tol=1e-12)
        np.testing.assert_allclose(residual.components, 0.0, atol=1e-12)

    def test_constant_residual_projects_to_constant(self):
        """Test a unit pointwise residual is reproduced by the smoothed projection"""
        space = LagrangeSpace(rectangle_mesh(4, 4, periodic_x=True, periodic_y=True), 2)
        U = np.zeros((space.n_dofs, 1))
        residual = residual_projection(U, np.ones_like(U), space, LinearAdvection([1.0, 0.5]), rel_tol=1e-13)
        np.testing.assert_allclose(residual.components, 1.0, atol=1e-10)
        np.testing.assert_allclose(residual.groups['u0'], 1.0, atol=1e-10)

    def test_static_mhd_state(self):
        """Test a uniform MHD state has zero residual"""
        space = LagrangeSpace(rectangle_mesh(3, 3, periodic_x=True, periodic_y=True), 1)
        U0 = conserved_from_primitive(1.0, [0.3, -0.2], 1.0, [0.5, 0.5], 5.0 / 3.0)
        U = np.tile(U0, (space.n_dofs, 1))
        residual = residual_projection(U, np.zeros_like(U), space, IdealMHD(5.0 / 3.0), rel_tol=1e-12)
        np.testing.assert_allclose(residual.components, 0.0, atol=1e-13)
        assert set(residual.groups) == {'rho', 'm', 'E', 'B'}

    def test_jump_against_dense_solve(self):
        """Test the smoothed residual of a unit jump matches a dense solve of (M + h^2 A) R = b"""
        n_cells = 19
        h = 1.0 / n_cells
        space = LagrangeSpace(interval_mesh(n_cells), 1)
        U = space.interpolate(lambda x: (x[:, :1] < 0.5).astype(float))
        residual = residual_projection(U, np.zeros_like(U), space, LinearAdvection([1.0]), rel_tol=1e-12)

        n = n_cells + 1
        mass = h / 6.0 * (np.diag(np.full(n, 4.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1))
        mass[0, 0] = mass[-1, -1] = h / 3.0
        laplace = (np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / h
        laplace[0, 0] = laplace[-1, -1] = 1.0 / h
        rhs = np.zeros(n)
        rhs[9] = rhs[10] = 0.5
        expected = np.maximum(np.linalg.solve(mass + h * h * laplace, rhs), 0.0)

        np.testing.assert_allclose(residual.components[:, 0], expected, atol=1e-10)
        assert int(np.argmax(residual.components[:, 0])) in (9, 10)

    @pytest.mark.parametrize('seed', range(5))
    def test_normalized_residual_bound(self, seed):
        """Test R_i / Psi_i stays below 4 lambda Phi_i / (1 - theta_i) for smooth transport"""
        rng = np.random.default_rng(seed)
        space = LagrangeSpace(interval_mesh(64, periodic=True), 1)
        geometry = build_nodal_geometry(space, space)
        a, b, shift, offset = rng.uniform(0.5, 1.5), rng.uniform(0.0, 0.5), rng.uniform(0.0, 1.0), rng.uniform(-2.0, 2.0)
        beta = rng.uniform(0.2, 3.0)
        U = space.interpolate(lambda x: offset + a * np.sin(2.0 * np.pi * x[:, :1])
                              + b * np.sin(4.0 * np.pi * (x[:, :1] + shift)))
        residual = residual_projection(U, np.zeros_like(U), space, LinearAdvection([beta]), rel_tol=1e-13)

        psi = normalization(U[:, 0], space.patch, safety=0.0)
        theta = smoothness_indicator(U[:, 0], space.patch)
        smooth = theta < 1.0
        bound = 4.0 * beta * geometry.phi[smooth] / (1.0 - theta[smooth])
        assert smooth.any()
        assert np.all(residual.components[smooth, 0] / psi[smooth] <= bound)


class TestNormalization:

    def test_smoothness_indicator(self):
        """Test theta is the patch range over the global range"""
        patch = PatchTable.from_mesh(interval_mesh(4))
        theta = smoothness_indicator([0.0, 5.0, -1.0, 2.0, 3.0], patch)
        np.testing.assert_allclose(theta, np.array([5.0, 6.0, 6.0, 4.0, 1.0]) / 6.0)

    def test_flat_field(self):
        """Test theta is zero for a constant field"""
        patch = PatchTable.from_mesh(interval_mesh(4))
        np.testing.assert_array_equal(smoothness_indicator(np.full(5, 2.0), patch), np.zeros(5))

    def test_constant_psi(self):
        """Test a constant field leaves only the safety term"""
        patch = PatchTable.from_mesh(interval_mesh(4))
        psi = normalization(np.full(5, -3.0), patch)
        np.testing.assert_allclose(psi, 3e-8)

    def test_mass_weighted_mean(self):
        """Test Psi uses the mass-weighted mean when masses are given"""
        patch = PatchTable.from_mesh(interval_mesh(2))
        x = np.array([0.0, 0.0, 4.0])
        psi = normalization(x, patch, mass=np.array([1.0, 2.0, 1.0]), safety=0.0)
        theta = smoothness_indicator(x, patch)
        np.testing.assert_allclose(psi, 0.25 * 3.0 * (1.0 - theta))

    def test_resolved_groups(self):
        """Test constant, zero and nearly flat groups are left out"""
        x = np.linspace(0.0, 1.0, 10)
        fields = {
            'rho': np.ones(10),
            'm': x,
            'E': 1.0 + 1e-4 * np.sin(2.0 * np.pi * x),
            'B': np.zeros(10),
        }
        assert resolved_groups(fields) == ['m']

    def test_resolved_groups_threshold(self):
        """Test the deviation is measured against rtol ||x||_inf"""
        x = np.array([1.0, 1.0, 1.1])
        assert resolved_groups({'a': x}, rtol=0.01) == ['a']
        assert resolved_groups({'a': x}, rtol=0.1) == []


class TestResidualViscosity:

    def test_zero_residual(self, periodic_interval):
        """Test a vanishing residual gives no viscosity"""
        _, geometry = periodic_interval
        n = geometry.n_nodes
        residual = ResidualField(np.zeros((n, 1)), {'u0': np.zeros(n)})
        eps = residual_viscosity(residual, {'u0': np.zeros(n)}, geometry, np.ones(n))
        np.testing.assert_array_equal(eps.values, 0.0)

    def test_cap_reached(self, periodic_interval):
        """Test a residual over a vanishing normalization hits the first-order value"""
        space, geometry = periodic_interval
        n = geometry.n_nodes
        lam = np.full(n, 2.0)
        residual = ResidualField(np.ones((n, 1)), {'u0': np.ones(n)})
        eps = residual_viscosity(residual, {'u0': np.zeros(n)}, geometry, lam)
        eps_l = first_order_viscosity(np.zeros((n, 1)), geometry, LinearAdvection([2.0]))
        np.testing.assert_allclose(eps.values, eps_l.values, rtol=1e-14)

    def test_max_over_groups(self, periodic_interval):
        """Test the largest normalized group residual drives the viscosity"""
        _, geometry = periodic_interval
        n = geometry.n_nodes
        residual = ResidualField(np.zeros((n, 2)), {'a': np.full(n, 1e-3), 'b': np.full(n, 4e-3)})
        eps = residual_viscosity(residual, {'a': np.ones(n), 'b': np.full(n, 2.0)}, geometry, np.full(n, 100.0))
        np.testing.assert_allclose(eps.values, geometry.C * 2e-3 * geometry.m_fine, rtol=1e-14)
        assert eps.kind == 'rv'

    def test_groups_without_normalization_are_skipped(self, periodic_interval):
        """Test a residual group missing from psi does not drive the viscosity"""
        _, geometry = periodic_interval
        n = geometry.n_nodes
        residual = ResidualField(np.zeros((n, 2)), {'rho': np.ones(n), 'm': np.full(n, 1e-3)})
        eps = residual_viscosity(residual, {'m': np.ones(n)}, geometry, np.full(n, 100.0))
        np.testing.assert_allclose(eps.values, geometry.C * 1e-3 * geometry.m_fine, rtol=1e-14)

    def test_cap_check(self):
        """Test eps^RV above eps^L is reported with the node"""
        eps_l = ViscosityField(np.array([1.0, 1.0, 1.0]))
        check_viscosity_cap(ViscosityField(np.array([0.5, 1.0, 0.0])), eps_l, 1e-12)
        with pytest.raises(ViscosityCapError, match='node 1'):
            check_viscosity_cap(ViscosityField(np.array([0.5, 1.1, 0.0])), eps_l, 1e-12)
