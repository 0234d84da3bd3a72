"""
Unit tests for solver/utils.py, solver/boundary_utils.py and solver/cleaning_utils.py
"""

import math

import numpy as np
import pytest
from scipy.linalg import eigh

from elements.utils import LagrangeSpace, build_nodal_geometry, consistent_mass
from mesh.utils import interval_mesh, rectangle_mesh
from physics.utils import IdealMHD, LinearAdvection, conserved_from_primitive
from solver.boundary_utils import (
    BoundaryConditionError,
    BoundaryConditions,
    apply_bcs,
    resolve_boundary,
)
from solver.cleaning_utils import clean_divergence, divergence_error
from solver.utils import (
    ALGORITHM_STAGES,
    RK_REAL_STABILITY,
    RK_TABLEAUX,
    Discretization,
    Problem,
    SolverConfig,
    SolverConfigError,
    SolverError,
    assemble_rhs,
    compute_dt,
    dump_checkpoint,
    explicit_rk,
    load_checkpoint,
    restore_state,
    run,
    viscous_spectral_bound,
    viscous_step_limit,
)


# ============================================================================
# FIXTURES
# ============================================================================

def sine_wave(x):
    return np.sin(2.0 * math.pi * x[:, :1])


@pytest.fixture
def advection_problem():
    return Problem(
        name='sine-advection',
        mesh=interval_mesh(16, periodic=True),
        model=LinearAdvection([1.0]),
        initial=sine_wave,
    )


@pytest.fixture
def mhd_problem():
    gamma = 5.0 / 3.0

    def initial(x):
        n = len(x)
        rho = 1.0 + 0.2 * np.sin(2.0 * math.pi * (x[:, 0] + x[:, 1]))
        u = np.tile([1.0, 0.5], (n, 1))
        B = np.tile([0.5, 0.5], (n, 1))
        return conserved_from_primitive(rho, u, np.ones(n), B, gamma)

    return Problem(
        name='smooth-density',
        mesh=rectangle_mesh(4, 4, periodic_x=True, periodic_y=True),
        model=IdealMHD(gamma),
        initial=initial,
    )


def config(**kwargs):
    defaults = {'cfl': 0.2, 't_final': 1.0, 'rk_scheme': 'ssprk3', 'mass_rtol': 1e-13}
    defaults.update(kwargs)
    return SolverConfig(**defaults)


# ============================================================================
# TEST: configuration and Runge-Kutta
# ============================================================================

class TestSolverConfig:

    @pytest.mark.parametrize('kwargs', [
        {'cfl': 0.0},
        {'cfl': -0.1},
        {'t_final': -1.0},
        {'rk_scheme': 'midpoint'},
        {'viscosity': 'entropy'},
    ])
    def test_invalid_values(self, kwargs):
        """Test invalid configuration values are rejected"""
        with pytest.raises(SolverConfigError):
            SolverConfig(**kwargs)

    def test_defaults_from_settings(self, settings):
        """Test scheme, viscosity and cleaning defaults come from the settings"""
        settings.SOLVER_RK_SCHEME = 'euler'
        settings.SOLVER_VISCOSITY = 'first-order'
        settings.SOLVER_CLEANING = False
        cfg = SolverConfig()
        assert (cfg.rk_scheme, cfg.viscosity, cfg.cleaning) == ('euler', 'first-order', False)


class TestRungeKutta:

    @pytest.mark.parametrize('name', sorted(RK_TABLEAUX))
    def test_tableau_consistency(self, name):
        """Test weights sum to one and c_l is the row sum of a"""
        tableau = RK_TABLEAUX[name]
        assert tableau.b.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(tableau.a.sum(axis=1), tableau.c)
        assert np.all(np.triu(tableau.a) == 0.0)

    @pytest.mark.parametrize('name,order', [('euler', 1), ('ssprk3', 3), ('rk4', 4)])
    def test_order_on_exponential(self, name, order):
        """Test the one-step error on y' = y scales like tau^(p+1)"""
        errors = [
            abs(explicit_rk(np.array([1.0]), tau, lambda W: W, RK_TABLEAUX[name])[0] - math.exp(tau))
            for tau in (0.1, 0.05)
        ]
        assert math.log2(errors[0] / errors[1]) == pytest.approx(order + 1, abs=0.2)


# ============================================================================
# TEST: right-hand side and time step
# ============================================================================

class TestAssembly:

    def test_constant_state_has_no_rate(self):
        """Test boundary fluxes cancel the volume term for a constant state"""
        mesh = rectangle_mesh(3, 3)
        disc = Discretization(mesh, 2, LinearAdvection([1.0, -0.5]))
        U = np.ones((disc.space.n_dofs, 1))
        np.testing.assert_allclose(assemble_rhs(U, np.zeros(disc.space.n_dofs), disc), 0.0, atol=1e-13)

    def test_constant_mhd_state_periodic(self):
        """Test a uniform MHD state is stationary with and without viscosity"""
        disc = Discretization(rectangle_mesh(3, 3, periodic_x=True, periodic_y=True), 1, IdealMHD(1.4))
        U = np.tile(conserved_from_primitive(1.0, [0.2, 0.1], 1.0, [0.3, -0.4], 1.4), (disc.space.n_dofs, 1))
        np.testing.assert_allclose(assemble_rhs(U, np.ones(disc.space.n_dofs), disc), 0.0, atol=1e-13)

    def test_time_step(self):
        """Test tau = CFL / max(lambda Phi) = CFL h / |v| on a uniform interval"""
        space = LagrangeSpace(interval_mesh(8, periodic=True), 1)
        geometry = build_nodal_geometry(space, space)
        tau = compute_dt(np.zeros((8, 1)), geometry, LinearAdvection([2.0]), 0.4)
        assert tau == pytest.approx(0.4 / (2.0 * 8.0))

    def test_zero_speed(self):
        """Test a vanishing wave speed bound is reported"""
        space = LagrangeSpace(interval_mesh(4, periodic=True), 1)
        geometry = build_nodal_geometry(space, space)
        with pytest.raises(SolverError):
            compute_dt(np.zeros((4, 1)), geometry, LinearAdvection([0.0]), 0.4)


class TestViscousStepLimit:

    def test_uniform_interval_bound(self):
        """Test the bound is 12 eps on a uniform P1 interval"""
        space = LagrangeSpace(interval_mesh(8, periodic=True), 1)
        assert viscous_spectral_bound(space, np.full(space.n_dofs, 0.7)) == pytest.approx(12.0 * 0.7, rel=1e-10)

    def test_bound_above_dense_spectrum(self):
        """Test the cell bound dominates the largest generalized eigenvalue of (B, M) for P2"""
        mesh = rectangle_mesh(3, 3, periodic_x=True, periodic_y=True)
        n = LagrangeSpace(mesh, 2).n_dofs
        disc = Discretization(mesh, 2, LinearAdvection([0.0, 0.0], components=n))
        x = disc.space.dof_coords
        eps = 1.0 + 0.5 * np.sin(2.0 * math.pi * x[:, 0]) * np.cos(2.0 * math.pi * x[:, 1])
        B = -assemble_rhs(np.eye(n), eps, disc)
        top = eigh(0.5 * (B + B.T), disc.mass.toarray(), eigvals_only=True)[-1]
        bound = viscous_spectral_bound(disc.space, eps)
        assert top > 0.0
        assert bound >= top * (1.0 - 1e-10)

    def test_zero_viscosity(self):
        """Test vanishing viscosity leaves the step unbounded"""
        space = LagrangeSpace(interval_mesh(4, periodic=True), 1)
        assert viscous_step_limit(space, np.zeros(space.n_dofs), 'rk4') == math.inf

    def test_limit_value(self):
        """Test the limit is safety times the real stability interval over the bound"""
        space = LagrangeSpace(interval_mesh(8, periodic=True), 1)
        limit = viscous_step_limit(space, np.full(space.n_dofs, 2.0), 'ssprk3', safety=0.5)
        assert limit == pytest.approx(0.5 * RK_REAL_STABILITY['ssprk3'] / 24.0, rel=1e-10)


# ============================================================================
# TEST: time loop
# ============================================================================

class TestTimeLoop:

    def test_stage_order(self, advection_problem):
        """Test every step runs residual, viscosity, rk, cleaning, bcs, lambda_max, dt"""
        seen = []
        run(advection_problem, config(max_steps=2), hooks=[lambda stage, state, diag: seen.append(stage)])
        assert seen == list(ALGORITHM_STAGES) * 2

    def test_lands_on_final_time(self, advection_problem):
        """Test the last step is shortened to reach t_final exactly"""
        result = run(advection_problem, config(t_final=0.05))
        assert result.state.t == 0.05
        assert result.diagnostics[-1].tau <= result.diagnostics[0].tau

    def test_zero_final_time(self, advection_problem):
        """Test t_final = 0 takes no step"""
        result = run(advection_problem, config(t_final=0.0))
        assert result.state.step == 0
        assert result.diagnostics == []
        np.testing.assert_allclose(result.state.U, result.discretization.space.interpolate(sine_wave))

    def test_periodic_advection_conserves(self, advection_problem):
        """Test the integral of u is conserved on a periodic interval"""
        result = run(advection_problem, config(max_steps=10))
        disc = result.discretization
        total = np.ones(disc.space.n_dofs) @ (disc.mass @ result.state.U)
        assert abs(total[0]) <= 1e-11

    def test_residual_viscosity_below_cap(self, advection_problem):
        """Test eps^RV never exceeds eps^L"""
        result = run(advection_problem, config(max_steps=5, viscosity='rv'))
        assert all(d.eps_max <= d.eps_l_max * (1.0 + 1e-12) for d in result.diagnostics)

    def test_first_order_mode(self, advection_problem):
        """Test the first-order mode uses eps^L itself"""
        result = run(advection_problem, config(max_steps=2, viscosity='first-order'))
        assert all(d.eps_max == d.eps_l_max and d.cap_fraction == 1.0 for d in result.diagnostics)

    def test_viscous_limit_shortens_steps(self, advection_problem):
        """Test a first-order run above the viscous limit takes the limited step"""
        result = run(advection_problem, config(cfl=0.45, rk_scheme='rk4', viscosity='first-order', max_steps=3))
        eps_max = 1.0 / (2.0 / 16.0)
        assert all(d.viscous_limited for d in result.diagnostics)
        for d in result.diagnostics:
            assert d.tau == pytest.approx(0.8 * RK_REAL_STABILITY['rk4'] / (12.0 * eps_max), rel=1e-10)
        assert np.all(np.isfinite(result.state.U))

    def test_no_limit_without_viscosity(self, advection_problem):
        """Test the inviscid mode keeps the CFL step"""
        result = run(advection_problem, config(cfl=0.45, rk_scheme='rk4', viscosity='none', max_steps=2))
        assert not any(d.viscous_limited for d in result.diagnostics)
        assert result.diagnostics[0].tau == pytest.approx(0.45 / 16.0)

    def test_limited_run_lands_on_final_time(self, advection_problem):
        """Test a viscous-limited run still ends at t_final exactly"""
        result = run(advection_problem, config(cfl=0.45, rk_scheme='rk4', viscosity='first-order', t_final=0.1))
        assert result.state.t == 0.1
        assert any(d.viscous_limited for d in result.diagnostics)

    def test_mhd_conservation(self, mhd_problem):
        """Test mass, momentum and energy integrals are conserved on a periodic square"""
        cfg = config(max_steps=3, cleaning=True)
        disc = Discretization(mhd_problem.mesh, 1, mhd_problem.model)
        U0 = disc.space.interpolate(mhd_problem.initial)
        result = run(mhd_problem, cfg, discretization=disc)
        ones = np.ones(disc.space.n_dofs)
        np.testing.assert_allclose(ones @ (disc.mass @ result.state.U[:, :4]), ones @ (disc.mass @ U0[:, :4]), atol=1e-10)
        assert result.state.step == 3

    def test_frames(self, advection_problem):
        """Test output_every records the initial frame, every n-th step and the last one"""
        result = run(advection_problem, config(max_steps=5, output_every=2))
        assert len(result.frames) == 3
        assert result.frames[0][0] == 0.0


# ============================================================================
# TEST: checkpoints
# ============================================================================

class TestCheckpoints:

    def test_dump_and_load(self, advection_problem, tmp_path):
        """Test the state with its history survives a checkpoint"""
        state = run(advection_problem, config(max_steps=3)).state
        path = tmp_path / 'state.npz'
        dump_checkpoint(state, path)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.U, state.U)
        np.testing.assert_array_equal(loaded.U_prev2, state.U_prev2)
        assert (loaded.t, loaded.step, loaded.tau, loaded.t_prev) == (state.t, state.step, state.tau, state.t_prev)

    def test_fresh_state(self, advection_problem, tmp_path):
        """Test missing history levels come back as None"""
        state = run(advection_problem, config(t_final=0.0)).state
        dump_checkpoint(state, tmp_path / 'fresh.npz')
        loaded = load_checkpoint(tmp_path / 'fresh.npz')
        assert loaded.U_prev is None and loaded.t_prev is None

    def test_restart_continues_identically(self, advection_problem, tmp_path):
        """Test two plus two steps after a restart match four straight steps"""
        disc = Discretization(advection_problem.mesh, 1, advection_problem.model)
        straight = run(advection_problem, config(max_steps=4), discretization=disc).state
        half = run(advection_problem, config(max_steps=2), discretization=disc).state
        dump_checkpoint(half, tmp_path / 'half.npz')
        resumed = run(advection_problem, config(max_steps=4), state=restore_state(tmp_path / 'half.npz', disc),
                      discretization=disc).state
        np.testing.assert_allclose(resumed.U, straight.U, rtol=0.0, atol=1e-14)
        assert resumed.t == pytest.approx(straight.t, abs=1e-15)

    def test_wrong_discretization(self, advection_problem, tmp_path):
        """Test restoring onto another dof count is rejected"""
        state = run(advection_problem, config(t_final=0.0)).state
        dump_checkpoint(state, tmp_path / 'state.npz')
        other = Discretization(interval_mesh(8, periodic=True), 1, LinearAdvection([1.0]))
        with pytest.raises(SolverError):
            restore_state(tmp_path / 'state.npz', other)

    def test_missing_keys(self, tmp_path):
        """Test an incomplete archive is rejected"""
        np.savez(tmp_path / 'partial.npz', U=np.zeros((3, 1)))
        with pytest.raises(SolverError, match='lacks'):
            load_checkpoint(tmp_path / 'partial.npz')


# ============================================================================
# TEST: boundary conditions
# ============================================================================

class TestBoundaryConditions:

    @pytest.fixture
    def space(self):
        return LagrangeSpace(rectangle_mesh(2, 2), 1)

    def test_unknown_tag(self, space):
        """Test a tag absent from the mesh is rejected"""
        with pytest.raises(BoundaryConditionError):
            resolve_boundary(space, BoundaryConditions(slip=('inflow',)))

    def test_dirichlet(self, space):
        """Test Dirichlet data overwrites the tagged dofs only"""
        resolved = resolve_boundary(space, BoundaryConditions(dirichlet={'left': lambda x, t: np.full((len(x), 1), t)}))
        U = apply_bcs(np.zeros((space.n_dofs, 1)), 2.5, resolved)
        left = np.isclose(space.dof_coords[:, 0], 0.0)
        np.testing.assert_array_equal(U[left, 0], 2.5)
        np.testing.assert_array_equal(U[~left, 0], 0.0)

    def test_slip_wall(self, space):
        """Test the normal momentum vanishes on a slip wall"""
        resolved = resolve_boundary(space, BoundaryConditions(slip=('bottom',)))
        U = np.tile([1.0, 0.3, 0.7, 2.0, 0.1, 0.2], (space.n_dofs, 1))
        out = apply_bcs(U, 0.0, resolved, slice(1, 3))
        bottom = np.isclose(space.dof_coords[:, 1], 0.0)
        np.testing.assert_allclose(out[bottom, 2], 0.0, atol=1e-15)
        np.testing.assert_array_equal(out[bottom, 1], 0.3)
        np.testing.assert_array_equal(out[~bottom], U[~bottom])

    def test_slip_corner(self, space):
        """Test a node between two non-parallel walls loses its momentum"""
        resolved = resolve_boundary(space, BoundaryConditions(slip=('bottom', 'left')))
        U = np.tile([1.0, 0.3, 0.7, 2.0, 0.1, 0.2], (space.n_dofs, 1))
        out = apply_bcs(U, 0.0, resolved, slice(1, 3))
        corner = np.nonzero(np.all(np.isclose(space.dof_coords, 0.0), axis=1))[0]
        assert corner.tolist() == resolved.corner_dofs.tolist()
        np.testing.assert_array_equal(out[corner, 1:3], 0.0)

    def test_slip_needs_momentum(self, space):
        """Test slip walls without a momentum slice are rejected"""
        resolved = resolve_boundary(space, BoundaryConditions(slip=('top',)))
        with pytest.raises(BoundaryConditionError):
            apply_bcs(np.zeros((space.n_dofs, 6)), 0.0, resolved)

    def test_no_conditions(self, space):
        """Test an empty set of conditions returns an unchanged copy"""
        U = np.arange(space.n_dofs, dtype=float).reshape(-1, 1)
        out = apply_bcs(U, 0.0, resolve_boundary(space, None))
        np.testing.assert_array_equal(out, U)
        assert out is not U


# ============================================================================
# TEST: divergence cleaning
# ============================================================================

class TestCleaning:

    @pytest.fixture
    def periodic_space(self):
        return LagrangeSpace(rectangle_mesh(16, 16, periodic_x=True, periodic_y=True), 1)

    def test_gradient_field_is_removed(self, periodic_space):
        """Test cleaning removes most of a pure gradient field's divergence"""
        space = periodic_space
        B = space.interpolate(lambda x: np.column_stack([np.sin(2.0 * math.pi * x[:, 0]), np.zeros(len(x))]))
        cleaned, report = clean_divergence(B, space, consistent_mass(space), space.stiffness_matrix(), 1e-12, 1e-13)
        assert report.divergence_after < 0.5 * report.divergence_before
        assert not report.increased
        assert cleaned.shape == B.shape

    def test_solenoidal_field_is_kept(self, periodic_space):
        """Test a divergence-free field is left alone"""
        space = periodic_space
        B = space.interpolate(lambda x: np.column_stack([np.sin(2.0 * math.pi * x[:, 1]), np.zeros(len(x))]))
        cleaned, report = clean_divergence(B, space, consistent_mass(space), space.stiffness_matrix(), 1e-12, 1e-13)
        np.testing.assert_allclose(cleaned, B, atol=1e-8)
        assert report.divergence_before <= 1e-8

    def test_rotation_divergence_error(self):
        """Test delta vanishes for B = (-y, x) with curl 2"""
        space = LagrangeSpace(rectangle_mesh(4, 4), 1)
        B = space.interpolate(lambda x: np.column_stack([-x[:, 1], x[:, 0]]))
        error = divergence_error(B, space, consistent_mass(space), 1e-13)
        assert error.delta <= 1e-10
        assert error.curl_norm == pytest.approx(2.0)
        assert not error.degenerate

    def test_uniform_field_is_degenerate(self):
        """Test a curl-free field is flagged and uses the guarded denominator"""
        space = LagrangeSpace(rectangle_mesh(4, 4), 1)
        B = np.tile([1.0, 2.0], (space.n_dofs, 1))
        assert divergence_error(B, space, consistent_mass(space), 1e-13).degenerate

    def test_one_dimension(self):
        """Test the divergence error is restricted to d = 2"""
        space = LagrangeSpace(interval_mesh(4), 1)
        with pytest.raises(ValueError):
            divergence_error(np.zeros((5, 1)), space, consistent_mass(space))
