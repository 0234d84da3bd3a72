"""
Unit tests for scalar_dmp/utils.py
"""

import numpy as np
import pytest

from elements.utils import LagrangeSpace
from mesh.utils import PatchTable, interval_mesh
from scalar_dmp.utils import (
    SCALAR_PROBLEMS,
    CFLViolationError,
    burgers_1d,
    cfl_number,
    convex_coefficients,
    dmp_check,
    linear_advection,
    negative_control,
    run_dmp_suite,
    scalar_cfl,
    scalar_euler_step,
    scalar_first_order_viscosity,
    scalar_geometry,
    trapezoid_identity_check,
    uniform_stencil_constants,
    viscosity_upper_bound,
)


@pytest.fixture
def uniform_interval():
    space = LagrangeSpace(interval_mesh(16, periodic=True), 1)
    return space, scalar_geometry(space)


class TestCFL:

    @pytest.mark.parametrize('d,expected', [(1, 0.5), (2, 1.0 / 3.0)])
    def test_uniform_cfl_number(self, d, expected):
        """Test CFL = 1/((1 + d kappa) kappa) at kappa = 1"""
        assert cfl_number(d, 1.0) == pytest.approx(expected)

    def test_graded_cfl_number(self):
        """Test the CFL number shrinks with the mesh quality"""
        assert cfl_number(2, 2.0) == pytest.approx(0.1)

    def test_bound_on_uniform_interval(self, uniform_interval):
        """Test tau_max = h / (2 beta) on a uniform interval"""
        space, geometry = uniform_interval
        cfl = scalar_cfl(space, geometry, beta=2.0)
        assert cfl.h == pytest.approx(1.0 / 16.0)
        assert cfl.tau == pytest.approx(1.0 / 16.0 / 4.0)
        assert cfl.cfl == pytest.approx(0.5)

    def test_zero_speed(self, uniform_interval):
        """Test a vanishing speed bound leaves the step unbounded"""
        space, geometry = uniform_interval
        assert scalar_cfl(space, geometry, beta=0.0).tau == np.inf


class TestScheme:

    def test_upwind_on_uniform_interval(self, uniform_interval):
        """Test the first-order viscosity turns linear advection into upwinding"""
        space, geometry = uniform_interval
        h = 1.0 / 16.0
        problem = linear_advection([1.0])
        q = np.zeros(space.n_dofs)
        q[5] = 1.0
        tau = 0.5 * h
        q_new = scalar_euler_step(q, tau, space, problem, geometry)
        expected = q.copy()
        expected[5], expected[6] = 0.5, 0.5
        np.testing.assert_allclose(q_new, expected, atol=1e-13)

    def test_viscosity_value(self, uniform_interval):
        """Test eps_i = 1/(2h) |f'| on a uniform interval"""
        space, geometry = uniform_interval
        eps = scalar_first_order_viscosity(np.zeros(space.n_dofs), space, geometry, linear_advection([3.0]))
        np.testing.assert_allclose(eps, 3.0 * 16.0 / 2.0, rtol=1e-12)

    def test_viscosity_upper_bound(self):
        """Test eps_i stays below the kappa-scaled bound on a perturbed interval"""
        space = LagrangeSpace(interval_mesh(20, periodic=True, perturbation=0.3, seed=4), 1)
        geometry = scalar_geometry(space)
        eps = scalar_first_order_viscosity(np.zeros(space.n_dofs), space, geometry, linear_advection([1.5]))
        assert np.all(eps <= viscosity_upper_bound(space, geometry, 1.5) * (1.0 + 1e-12))

    def test_cfl_violation(self, uniform_interval):
        """Test a step above the bound raises unless told otherwise"""
        space, geometry = uniform_interval
        problem = burgers_1d()
        q = problem.initial(space.dof_coords)
        tau = 2.0 * scalar_cfl(space, geometry, problem.speed_bound(q, space.dof_coords)).tau
        with pytest.raises(CFLViolationError):
            scalar_euler_step(q, tau, space, problem, geometry)
        assert scalar_euler_step(q, tau, space, problem, geometry, on_violation='warn').shape == q.shape

    def test_burgers_step_within_bounds(self, uniform_interval):
        """Test a Burgers step on step data stays within [0, 1]"""
        space, geometry = uniform_interval
        problem = burgers_1d()
        q = problem.initial(space.dof_coords)
        tau = scalar_cfl(space, geometry, problem.speed_bound(q, space.dof_coords)).tau
        q_new = scalar_euler_step(q, tau, space, problem, geometry)
        assert q_new.min() >= -1e-14 and q_new.max() <= 1.0 + 1e-14
        assert dmp_check(q, q_new, space.patch).ok

    def test_convex_coefficients(self, uniform_interval):
        """Test the step map at the CFL bound is a convex combination"""
        space, geometry = uniform_interval
        problem = linear_advection([1.0])
        q = np.random.default_rng(0).uniform(-1.0, 1.0, space.n_dofs)
        tau = scalar_cfl(space, geometry, 1.0).tau
        coefficients = convex_coefficients(q, tau, space, problem, geometry)
        assert coefficients.is_convex()
        np.testing.assert_allclose(coefficients.row_sums, 1.0, atol=1e-13)
        assert np.all(coefficients.diagonal >= 0.0)

    def test_problem_registry(self):
        """Test the suite problems are Burgers in 1D and rotation in 2D"""
        assert {name: factory().dim for name, factory in SCALAR_PROBLEMS.items()} == {'burgers': 1, 'rotating': 2}


# ============================================================================
# TEST: checks
# ============================================================================

class TestChecks:

    def test_dmp_check(self):
        """Test overshoots and undershoots are reported by node"""
        patch = PatchTable.from_mesh(interval_mesh(4))
        report = dmp_check([0.0, 1.0, 0.0, 1.0, 0.0], [-0.1, 1.0, 1.5, 0.5, 0.0], patch)
        assert report.violations == [0, 2]
        assert report.max_excess == pytest.approx(0.5)
        assert not report.ok

    def test_trapezoid_identity(self):
        """Test the exact integral of a linear eps_h matches the nodal average form"""
        rng = np.random.default_rng(3)
        cell = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]])
        sides = trapezoid_identity_check(cell, rng.uniform(0.5, 2.0, 3), 0, 2)
        assert sides.quadrature == pytest.approx(sides.nodal_average, rel=1e-13)

    def test_stencil_constants_on_random_simplices(self):
        """Test the closed-form stencil holds for arbitrary simplices"""
        rng = np.random.default_rng(8)
        for _ in range(20):
            cell = rng.uniform(-1.0, 1.0, (3, 2))
            if abs(np.linalg.det(cell[1:] - cell[0])) < 1e-3:
                continue
            assert uniform_stencil_constants(cell) <= 1e-11

    def test_negative_control(self):
        """Test zero viscosity breaks the maximum principle on step data"""
        assert negative_control().violations

    def test_suite(self):
        """Test a short randomized suite finds no violation"""
        report = run_dmp_suite(trials=4, seed=1, steps=2)
        assert report.trials == 4
        assert report.violations == 0
        assert report.non_convex == 0
        assert report.ok
