"""
Unit tests for benchmarks/utils.py, benchmarks/tasks.py and the management commands
"""

import math
import os
from io import StringIO
from unittest.mock import patch

import numpy as np
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from benchmarks.management.commands.converge import level_resolutions
from benchmarks.tasks import compute_line_reference, run_convergence_level
from benchmarks.utils import (
    PROBLEMS,
    BenchmarkError,
    ErrorReport,
    ErrorRow,
    LineReference,
    MissingExactSolutionError,
    UnknownProblemError,
    cfl_suite,
    dmp_suite,
    error_norms,
    get_problem,
    invariant_suites,
    lax_friedrichs_suite,
    line_reference,
    line_slice,
    reference_path,
    run_benchmark,
    schlieren,
    solver_config,
    stencil_suite,
    vortex_state,
)
from elements.utils import LagrangeSpace
from mesh.utils import interval_mesh, rectangle_mesh
from mhd_stabilizer.utils import read_error_csv, read_run_metadata, read_vtu_point_data
from physics.utils import InvalidStateError, pressure


def linear_state(x, t=None):
    X, Y = x[:, 0], x[:, 1]
    n = len(x)
    return np.column_stack([
        1.0 + 0.1 * X, np.full(n, 0.2), 0.1 * Y, 3.0 + 0.1 * X, np.full(n, 0.3), 0.2 - 0.1 * X,
    ])


# ============================================================================
# TEST: registry
# ============================================================================

class TestRegistry:

    def test_gamma_values(self):
        """Test the adiabatic index of every benchmark"""
        gammas = {name: spec.gamma for name, spec in PROBLEMS.items()}
        assert gammas == {
            'vortex': 5.0 / 3.0, 'brio-wu': 2.0, 'orszag-tang': 5.0 / 3.0, 'kelvin-helmholtz': 5.0 / 3.0, 'blast': 1.4,
        }

    def test_unknown_problem(self):
        """Test unknown names list the registered ones"""
        with pytest.raises(UnknownProblemError, match='vortex'):
            get_problem('sod')

    def test_parameter_override(self):
        """Test overrides produce a new spec and leave the registry alone"""
        spec = get_problem('kelvin-helmholtz', bx=0.2)
        assert spec.params['bx'] == 0.2
        assert PROBLEMS['kelvin-helmholtz'].params['bx'] == 0.0

    def test_brio_wu_states(self):
        """Test the Brio-Wu left energy and the strip mesh"""
        spec = get_problem('brio-wu')
        U = spec.initial()(np.array([[0.25, 0.0], [0.75, 0.0]]))
        assert U[0, 3] == pytest.approx(1.78125)
        np.testing.assert_allclose(pressure(U, 2.0), [1.0, 0.1])
        mesh = spec.build_mesh(10)
        assert mesh.n_cells == 20
        assert set(mesh.boundary_facets.values()) == {'left', 'right', 'periodic'}

    def test_brio_wu_node_on_the_jump(self):
        """Test a node at x = 0.5 gets the mean of the left and right conserved states"""
        U = get_problem('brio-wu').initial()(np.array([[0.25, 0.0], [0.5, 0.0], [0.75, 0.0]]))
        np.testing.assert_allclose(U[1], 0.5 * (U[0] + U[2]), rtol=1e-15)
        assert U[1, 0] == pytest.approx(0.5625)

    def test_blast_pressure_ratio(self):
        """Test the blast pressure jumps by 10^4 across the radius"""
        spec = get_problem('blast')
        U = spec.initial()(np.array([[0.0, 0.0], [0.3, 0.3]]))
        p = pressure(U, spec.gamma)
        assert p[0] / p[1] == pytest.approx(1e4)
        assert 'InvalidStateError' in spec.notes and 'non-positive pressure' in spec.notes

    def test_vortex_is_periodic_in_time(self):
        """Test the vortex returns to its initial state after one period"""
        x = np.random.default_rng(0).uniform(-10.0, 10.0, (50, 2))
        np.testing.assert_allclose(vortex_state(x, 20.0, 5.0 / 3.0), vortex_state(x, 0.0, 5.0 / 3.0), atol=1e-12)

    def test_vortex_core_pressure(self):
        """Test the core pressure stays positive with p0 = 1"""
        U = vortex_state(np.zeros((1, 2)), 0.0, 5.0 / 3.0)
        assert pressure(U, 5.0 / 3.0)[0] == pytest.approx(1.0 - math.e / (8.0 * math.pi ** 2))

    def test_exact_solution_only_for_vortex(self):
        """Test only the vortex has an exact solution"""
        assert [name for name, spec in PROBLEMS.items() if spec.exact() is not None] == ['vortex']

    def test_instantiate_is_seeded(self):
        """Test equal seeds reproduce the Kelvin-Helmholtz noise"""
        spec = get_problem('kelvin-helmholtz')
        a = spec.instantiate(4, seed=3)
        b = spec.instantiate(4, seed=3)
        x = LagrangeSpace(a.mesh, 1).dof_coords
        np.testing.assert_array_equal(a.initial(x), b.initial(x))

    def test_solver_config(self):
        """Test the problem's CFL and final time are defaults only"""
        spec = get_problem('orszag-tang')
        config = solver_config(spec, 2, t_final=0.1, viscosity='none')
        assert (config.cfl, config.t_final, config.degree, config.viscosity) == (0.3, 0.1, 2, 'none')


# ============================================================================
# TEST: error norms and rates
# ============================================================================

class TestErrorNorms:

    def test_exact_interpolant(self):
        """Test a linear state is reproduced exactly by P1"""
        space = LagrangeSpace(rectangle_mesh(3, 3), 1)
        U = space.interpolate(linear_state)
        report = error_norms(U, linear_state, space, 0.0, 1.4)
        assert len(report.rows) == 12
        assert max(row.error for row in report.rows) <= 1e-13

    def test_relative_error(self):
        """Test a 1% density offset gives relative errors of about 1%"""
        space = LagrangeSpace(rectangle_mesh(3, 3), 1)
        U = space.interpolate(linear_state)
        U_h = U.copy()
        U_h[:, 0] *= 1.01
        U_h[:, 1:3] *= 1.01
        report = error_norms(U_h, linear_state, space, 0.0, 1.4, variables=('rho',))
        assert report.get(space.n_dofs, 'rho', 'Linf') == pytest.approx(0.01, rel=1e-10)
        assert report.get(space.n_dofs, 'rho', 'L1') == pytest.approx(0.01, rel=1e-10)

    def test_zero_exact_norm(self):
        """Test a vanishing exact field falls back to the absolute error"""
        space = LagrangeSpace(rectangle_mesh(2, 2), 1)

        def resting(x, t=None):
            U = linear_state(x)
            U[:, 1:3] = 0.0
            return U

        report = error_norms(space.interpolate(resting), resting, space, 0.0, 1.4, variables=('u',))
        assert all(row.error == 0.0 for row in report.rows)

    def test_missing_exact(self):
        """Test error norms need an exact or reference solution"""
        space = LagrangeSpace(rectangle_mesh(2, 2), 1)
        with pytest.raises(MissingExactSolutionError):
            error_norms(np.zeros((9, 6)), None, space, 0.0, 1.4)

    def test_rates(self):
        """Test rate = log(e_prev/e) / log((N/N_prev)^(1/d))"""
        report = ErrorReport([
            ErrorRow(400, 'rho', 'L1', 2.5e-3), ErrorRow(100, 'rho', 'L1', 1e-2), ErrorRow(1600, 'rho', 'L1', 0.0),
        ]).with_rates(2)
        assert [row.dofs for row in report.rows] == [100, 400, 1600]
        assert report.rows[0].rate is None
        assert report.rows[1].rate == pytest.approx(2.0)
        assert report.rows[2].rate is None

    def test_rates_in_one_dimension(self):
        """Test the strip rate uses d = 1"""
        report = ErrorReport([ErrorRow(10, 'rho', 'L1', 0.1), ErrorRow(20, 'rho', 'L1', 0.05)]).with_rates(1)
        assert report.rows[1].rate == pytest.approx(1.0)

    def test_level_resolutions(self):
        """Test mesh levels grow by the ratio and stay even"""
        assert level_resolutions(24, 3, 1.5) == [24, 36, 54]
        assert level_resolutions(4, 2, 2.0) == [4, 8]


# ============================================================================
# TEST: fields, slices and the strip reference
# ============================================================================

class TestFields:

    def test_schlieren_constant(self):
        """Test constant density gives sigma = 1"""
        space = LagrangeSpace(rectangle_mesh(4, 4), 1)
        np.testing.assert_array_equal(schlieren(np.full(space.n_dofs, 2.0), space), 1.0)

    def test_schlieren_linear(self):
        """Test a constant gradient gives sigma = exp(-zeta) everywhere"""
        space = LagrangeSpace(rectangle_mesh(4, 4), 1)
        sigma = schlieren(1.0 + space.dof_coords[:, 0], space)
        np.testing.assert_allclose(sigma, math.exp(-5.0), rtol=1e-10)

    def test_schlieren_needs_two_dimensions(self):
        """Test the Schlieren field is rejected in 1D"""
        with pytest.raises(BenchmarkError):
            schlieren(np.zeros(5), LagrangeSpace(interval_mesh(4), 1))

    def test_line_slice(self):
        """Test values on x = 0.5 come back sorted along y"""
        coords = rectangle_mesh(4, 4).vertices
        positions, values = line_slice(coords[:, 0] + 10.0 * coords[:, 1], coords, 0, 0.5)
        np.testing.assert_allclose(positions, [0.0, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(values, 0.5 + 10.0 * positions)

    def test_line_reference_interpolates(self, tmp_path):
        """Test the reference interpolates linearly along x and survives a save"""
        reference = LineReference(np.array([0.0, 1.0]), np.array([[0.0, 2.0], [1.0, 4.0]]))
        reference.save(tmp_path / 'ref.npz')
        loaded = LineReference.load(tmp_path / 'ref.npz')
        np.testing.assert_allclose(loaded(np.array([[0.25, 7.0]])), [[0.25, 2.5]])
        assert loaded.t_final is None and loaded.cfl is None

    def test_line_reference_metadata(self, tmp_path):
        """Test t_final and cfl are stored and checked on load"""
        reference = LineReference(np.array([0.0, 1.0]), np.ones((2, 1)), t_final=0.1, cfl=0.3)
        reference.save(tmp_path / 'ref.npz')
        loaded = LineReference.load(tmp_path / 'ref.npz', t_final=0.1, cfl=0.3)
        assert (loaded.t_final, loaded.cfl) == (0.1, 0.3)
        with pytest.raises(BenchmarkError, match='t_final'):
            LineReference.load(tmp_path / 'ref.npz', t_final=0.2, cfl=0.3)
        with pytest.raises(BenchmarkError, match='cfl'):
            LineReference.load(tmp_path / 'ref.npz', t_final=0.1, cfl=0.1)

    def test_line_reference_without_metadata(self, tmp_path):
        """Test a reference lacking the run parameters is rejected when they are requested"""
        LineReference(np.array([0.0, 1.0]), np.ones((2, 1))).save(tmp_path / 'old.npz')
        with pytest.raises(BenchmarkError):
            LineReference.load(tmp_path / 'old.npz', t_final=0.1)

    def test_reference_path(self):
        """Test the cache name carries resolution, final time and CFL"""
        path = reference_path('out', 'brio-wu', 1440, 0.1, 0.3)
        assert path == os.path.join('out', 'brio-wu_reference_1440_t0.1_cfl0.3.npz')

    def test_line_reference_of_strip(self):
        """Test the bottom row of a strip is sampled once per x position"""
        space = LagrangeSpace(get_problem('brio-wu').build_mesh(8), 1)
        U = np.column_stack([space.dof_coords[:, 0], 2.0 * space.dof_coords[:, 0]])
        reference = line_reference(U, space)
        np.testing.assert_allclose(reference.x, np.linspace(0.0, 1.0, 9))
        np.testing.assert_allclose(reference.U[:, 1], 2.0 * reference.x)


# ============================================================================
# TEST: invariant suites
# ============================================================================

class TestInvariantSuites:

    def test_stencil_suite(self):
        """Test the stencil constants and the trapezoid identity hold on random simplices"""
        assert all(result.ok for result in stencil_suite(trials=20, seed=2))

    def test_cfl_suite(self):
        """Test the CFL constants are 1/2 and 1/3"""
        assert all(result.ok for result in cfl_suite())

    def test_lax_friedrichs_suite(self):
        """Test the Lax-Friedrichs reduction in 1D and on equilateral triangles"""
        results = lax_friedrichs_suite()
        assert [result.name for result in results] == ['Lax-Friedrichs reduction 1D', 'Lax-Friedrichs reduction 2D']
        assert all(result.ok for result in results)

    def test_dmp_suite(self):
        """Test a short DMP suite passes"""
        assert dmp_suite(trials=4, seed=5)[0].ok

    def test_failures_are_logged(self):
        """Test a failing suite is logged as an error"""
        with patch('benchmarks.utils.cfl_number', return_value=0.4), patch('benchmarks.utils.logger') as mock_logger:
            results = invariant_suites(trials=2, seed=0)
        assert not next(r for r in results if r.name == 'CFL constants').ok
        mock_logger.error.assert_called_once()


# ============================================================================
# TEST: tasks
# ============================================================================

class TestTasks:

    def test_convergence_level(self):
        """Test one vortex level reports its dofs and error rows"""
        outcome = run_convergence_level.apply(args=('vortex', 1, 4), kwargs={'t_final': 0.0}).get()
        assert outcome['status'] == 'success'
        assert outcome['dofs'] == 16
        assert outcome['steps'] == 0
        assert {(row['var'], row['norm']) for row in outcome['errors']} == {
            (var, norm) for var in ('u', 'B') for norm in ('L1', 'L2', 'Linf')
        }
        assert 'timestamp' in outcome

    def test_convergence_level_steps(self):
        """Test a level at the default final time advances and lands on it"""
        outcome = run_convergence_level.apply(args=('vortex', 1, 4)).get()
        assert outcome['status'] == 'success'
        assert outcome['steps'] >= 1
        assert all(np.isfinite(row['error']) for row in outcome['errors'])

    def test_unknown_problem(self):
        """Test failures are returned as an error status and logged"""
        with patch('benchmarks.tasks.logger') as mock_logger:
            outcome = run_convergence_level.apply(args=('sod', 1, 4)).get()
        assert outcome['status'] == 'error'
        assert 'sod' in outcome['error']
        mock_logger.exception.assert_called_once()

    def test_missing_reference(self):
        """Test a problem without exact solution needs a reference"""
        outcome = run_convergence_level.apply(args=('brio-wu', 1, 8), kwargs={'t_final': 0.0}).get()
        assert outcome['status'] == 'error'
        assert 'reference' in outcome['error']

    def test_self_reference(self, tmp_path):
        """Test a level measured against its own resolution has no error"""
        path = str(tmp_path / 'brio-wu_reference_8.npz')
        saved = compute_line_reference.apply(args=('brio-wu', 8, path), kwargs={'t_final': 0.0}).get()
        assert saved['status'] == 'success'
        assert saved['nodes'] == 9
        outcome = run_convergence_level.apply(
            args=('brio-wu', 1, 8), kwargs={'t_final': 0.0, 'reference_path': path},
        ).get()
        assert outcome['status'] == 'success'
        assert max(row['error'] for row in outcome['errors']) <= 1e-13

    def test_reference_records_run_parameters(self, tmp_path):
        """Test the reference stores t_final and cfl and levels with other values are refused"""
        path = str(tmp_path / 'brio-wu_reference_8.npz')
        saved = compute_line_reference.apply(args=('brio-wu', 8, path), kwargs={'t_final': 0.01}).get()
        assert saved['status'] == 'success'
        reference = LineReference.load(path)
        assert (reference.t_final, reference.cfl) == (0.01, 0.3)
        outcome = run_convergence_level.apply(
            args=('brio-wu', 1, 4), kwargs={'t_final': 0.02, 'reference_path': path},
        ).get()
        assert outcome['status'] == 'error'
        assert 't_final' in outcome['error']

    def test_reference_ignores_level_mode(self, tmp_path):
        """Test first-order levels are measured against the residual-viscosity reference"""
        path = str(tmp_path / 'brio-wu_reference_8.npz')
        with patch('benchmarks.tasks.solver_config', wraps=solver_config) as mock_config:
            compute_line_reference.apply(args=('brio-wu', 8, path), kwargs={'t_final': 0.0}).get()
        assert mock_config.call_args.kwargs['viscosity'] == 'rv'


# ============================================================================
# TEST: management commands
# ============================================================================

class TestCommands:

    def test_run_writes_outputs(self, tmp_path):
        """Test a short vortex run writes frames, tables, checkpoint and metadata"""
        out = StringIO()
        call_command('run', 'vortex', res=4, max_steps=2, output=str(tmp_path), checkpoint=True, stdout=out)
        for name in ('frame_0000.vtu', 'nodal.csv', 'diagnostics.csv', 'errors.csv', 'checkpoint.npz', 'run.json'):
            assert (tmp_path / name).exists(), name
        metadata = read_run_metadata(tmp_path / 'run.json')
        assert (metadata['problem'], metadata['steps'], metadata['dofs']) == ('vortex', 2, 16)
        assert 'u_L1' in metadata['errors']
        point_data = read_vtu_point_data(str(tmp_path / 'frame_0000.vtu'))
        assert point_data['rho'].shape == (25,)
        assert point_data['B'].shape == (25, 3)
        assert 'schlieren' in point_data
        assert 'vortex: 2 steps' in out.getvalue()

    def test_run_restart(self, tmp_path):
        """Test a run resumes from a checkpoint and counts steps on from it"""
        call_command('run', 'vortex', res=4, max_steps=1, output=str(tmp_path / 'first'), checkpoint=True,
                     stdout=StringIO())
        call_command('run', 'vortex', res=4, max_steps=2, output=str(tmp_path / 'second'),
                     restart=str(tmp_path / 'first' / 'checkpoint.npz'), stdout=StringIO())
        assert read_run_metadata(tmp_path / 'second' / 'run.json')['steps'] == 2

    def test_run_slices(self, tmp_path):
        """Test center-line slices of a 2D run"""
        call_command('run', 'orszag-tang', res=4, max_steps=1, viscosity='first-order', slices=True,
                     output=str(tmp_path), stdout=StringIO())
        with open(tmp_path / 'slice_x0.5.csv') as f:
            lines = f.read().splitlines()
        assert lines[0] == 's,rho,p,Bx,By'
        assert len(lines) == 5

    def test_run_unknown_problem(self, tmp_path):
        """Test unknown problems surface as command errors"""
        with pytest.raises(CommandError):
            call_command('run', 'sod', output=str(tmp_path), stdout=StringIO())

    def test_run_bad_parameter(self, tmp_path):
        """Test --param needs KEY=VALUE"""
        with pytest.raises(CommandError, match='KEY=VALUE'):
            call_command('run', 'kelvin-helmholtz', param=['bx'], output=str(tmp_path), stdout=StringIO())

    def test_run_invalid_state_names_the_problem(self, tmp_path):
        """Test a non-positive state surfaces with the problem notes"""
        failure = InvalidStateError('Non-positive pressure at node 3', index=3)
        with patch('benchmarks.management.commands.run.run_benchmark', side_effect=failure):
            with pytest.raises(CommandError, match='not positivity-preserving'):
                call_command('run', 'blast', res=4, output=str(tmp_path), stdout=StringIO())

    def test_converge_vortex(self, tmp_path):
        """Test the convergence table has rates from the second level on"""
        output = tmp_path / 'vortex.csv'
        out = StringIO()
        call_command('converge', 'vortex', res=[4, 6], output=str(output), stdout=out)
        rows = read_error_csv(output)
        assert sorted({row['dofs'] for row in rows}) == [16, 36]
        assert all(row['rate'] is None for row in rows if row['dofs'] == 16)
        assert all(row['rate'] is not None for row in rows if row['dofs'] == 36)
        assert ' 0 steps' not in out.getvalue()
        with open(output) as f:
            assert f.readline().startswith('# problem=vortex')

    def test_converge_brio_wu(self, tmp_path):
        """Test the strip study computes and reuses its self-reference"""
        output = tmp_path / 'brio.csv'
        reference = tmp_path / 'brio-wu_reference_16_t0.01_cfl0.3.npz'
        call_command('converge', 'brio-wu', res=[4, 8], reference_res=16, tfinal=0.01, output=str(output),
                     stdout=StringIO())
        assert reference.exists()
        assert sorted({row['dofs'] for row in read_error_csv(output)}) == [5, 9]
        assert all(row['error'] > 0.0 for row in read_error_csv(output))

        with patch('benchmarks.management.commands.converge.compute_line_reference') as mock_reference:
            call_command('converge', 'brio-wu', res=[4], reference_res=16, tfinal=0.01, output=str(output),
                         stdout=StringIO())
        mock_reference.delay.assert_not_called()

    def test_converge_brio_wu_new_parameters(self, tmp_path):
        """Test another final time gets its own reference file"""
        output = tmp_path / 'brio.csv'
        for tfinal in (0.0, 0.01):
            call_command('converge', 'brio-wu', res=[4], reference_res=8, tfinal=tfinal, output=str(output),
                         stdout=StringIO())
        assert sorted(os.listdir(tmp_path)) == [
            'brio-wu_reference_8_t0.01_cfl0.3.npz', 'brio-wu_reference_8_t0_cfl0.3.npz', 'brio.csv',
        ]

    def test_scalar(self):
        """Test the scalar suite command reports success"""
        out = StringIO()
        call_command('scalar', trials=4, steps=1, stdout=out)
        assert 'holds in every trial' in out.getvalue()

    def test_scalar_needs_trials(self):
        """Test zero trials are rejected"""
        with pytest.raises(CommandError):
            call_command('scalar', trials=0, stdout=StringIO())

    def test_check(self):
        """Test the invariant suites pass"""
        out = StringIO()
        call_command('check', trials=4, stdout=out)
        assert 'discrete maximum principle' in out.getvalue()
        assert 'FAILED' not in out.getvalue()


# ============================================================================
# TEST: benchmark acceptance runs
# ============================================================================

def study(name, degree, resolutions, **kwargs):
    """Error report with rates over a mesh sequence, every level run through the task."""
    report = ErrorReport()
    for res in resolutions:
        outcome = run_convergence_level.apply(args=(name, degree, res), kwargs=kwargs).get()
        assert outcome['status'] == 'success', outcome.get('error')
        assert outcome['steps'] >= 1
        report.extend(ErrorRow(**row) for row in outcome['errors'])
    return report.with_rates(get_problem(name).rate_dim)


def l1_rates(report, variables):
    return [row.rate for row in report.rows if row.norm == 'L1' and row.var in variables and row.rate is not None]


@pytest.mark.slow
class TestAcceptance:

    def test_vortex_p1_rate(self):
        """Test the P1 vortex converges at second order in u and B"""
        rates = l1_rates(study('vortex', 1, [92, 138, 206]), ('u', 'B'))
        assert len(rates) == 4
        assert all(1.8 <= rate <= 2.3 for rate in rates), rates

    def test_vortex_p3_rate(self):
        """Test the P3 vortex runs at CFL 0.1 and converges beyond third order on the two coarsest meshes"""
        rates = l1_rates(study('vortex', 3, [31, 46], cfl=0.1), ('u', 'B'))
        assert len(rates) == 2
        assert all(rate >= 3.5 for rate in rates), rates

    def test_brio_wu_self_convergence(self, tmp_path):
        """Test residual viscosity beats first-order viscosity on the strip and both converge at their rates"""
        path = str(tmp_path / 'brio-wu_reference_1440.npz')
        saved = compute_line_reference.apply(args=('brio-wu', 1440, path)).get()
        assert saved['status'] == 'success', saved.get('error')
        assert saved['nodes'] == 1441

        reports = {
            mode: study('brio-wu', 1, [90, 180, 360], viscosity=mode, reference_path=path)
            for mode in ('first-order', 'rv')
        }
        ratio = reports['rv'].get(361, 'rho', 'L1') / reports['first-order'].get(361, 'rho', 'L1')
        assert ratio <= 0.6, ratio
        assert all(0.3 <= rate <= 0.6 for rate in l1_rates(reports['first-order'], ('rho',)))
        assert all(0.7 <= rate <= 1.1 for rate in l1_rates(reports['rv'], ('rho',)))

    def test_orszag_tang_conservation(self, settings):
        """Test mass and momentum integrals drift by less than 1e-9 over 100 steps"""
        settings.SOLVER_MASS_RTOL = 1e-13
        spec = get_problem('orszag-tang')
        problem, result = run_benchmark(spec, 64, solver_config(spec, 1, max_steps=100))
        assert result.state.step == 100
        disc = result.discretization
        U0 = disc.space.interpolate(problem.initial)
        ones = np.ones(disc.space.n_dofs)
        before = ones @ (disc.mass @ U0[:, :3])
        after = ones @ (disc.mass @ result.state.U[:, :3])
        scale = ones @ (disc.mass @ np.abs(U0[:, :3]))
        assert np.all(np.abs(after - before) / scale < 1e-9)

    def test_orszag_tang_cleaning(self):
        """Test every cleaning lowers the divergence and the divergence error stays below one up to t = 0.5"""
        spec = get_problem('orszag-tang')
        _, result = run_benchmark(spec, 64, solver_config(spec, 1))
        assert result.state.t == 0.5
        for diag in result.diagnostics:
            assert diag.divergence_after <= diag.divergence_before * (1.0 + 1e-10) + 1e-14
            assert diag.delta < 1.0
        assert np.all(result.state.U[:, 0] > 0.0)
        assert np.all(pressure(result.state.U, spec.gamma) > 0.0)

    def test_kelvin_helmholtz_stability(self):
        """Test the 64x64 Kelvin-Helmholtz run reaches t = 1 with finite positive states"""
        spec = get_problem('kelvin-helmholtz')
        _, result = run_benchmark(spec, 64, solver_config(spec, 1, t_final=1.0))
        assert result.state.t == 1.0
        assert np.all(np.isfinite(result.state.U))
        assert np.all(result.state.U[:, 0] > 0.0)
