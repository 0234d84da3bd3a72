import logging
import os

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from benchmarks.utils import (
    BenchmarkError,
    error_norms,
    get_problem,
    line_slice,
    run_benchmark,
    schlieren,
    solver_config,
)
from linalg.utils import LinearSolverError
from mesh.utils import MeshError
from mhd_stabilizer.utils import (
    write_error_csv,
    write_nodal_csv,
    write_run_metadata,
    write_series_csv,
    write_vtu,
)
from physics.utils import InvalidStateError, primitive_from_conserved
from solver.utils import VISCOSITY_MODES, SolverError, dump_checkpoint
from viscosity.utils import ViscosityError

logger = logging.getLogger(__name__)

DIAGNOSTIC_FIELDS = (
    'step', 't', 'tau', 'eps_max', 'eps_l_max', 'cap_fraction', 'divergence_before', 'divergence_after', 'delta',
    'viscous_limited',
)


def frame_fields(U, eps, disc, gamma):
    """Primitive fields, energy, viscosity and (in 2D) the Schlieren field at the dofs."""
    rho, u, p, B = primitive_from_conserved(U, gamma)
    fields = {'rho': rho, 'u': u, 'p': p, 'E': U[:, 1 + disc.dim], 'B': B, 'eps': eps}
    if disc.dim == 2:
        fields['schlieren'] = schlieren(rho, disc.fine_space)
    return fields


class Command(BaseCommand):
    help = 'Run one benchmark and write VTU frames, nodal CSV, diagnostics and run metadata'

    def add_arguments(self, parser):
        parser.add_argument('problem', help='Benchmark name (vortex, brio-wu, orszag-tang, kelvin-helmholtz, blast)')
        parser.add_argument('--degree', type=int, default=1)
        parser.add_argument('--res', type=int, default=32, help='Cells per side')
        parser.add_argument('--cfl', type=float, default=None)
        parser.add_argument('--tfinal', type=float, default=None)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--output', default=None, help='Output directory')
        parser.add_argument('--viscosity', choices=VISCOSITY_MODES, default=None)
        parser.add_argument('--output-every', type=int, default=0, help='Write a frame every N steps')
        parser.add_argument('--max-steps', type=int, default=None)
        parser.add_argument('--restart', default=None, help='Checkpoint to resume from')
        parser.add_argument('--checkpoint', action='store_true', help='Write a checkpoint of the final state')
        parser.add_argument('--slices', action='store_true', help='Write center-line slices (2D problems)')
        parser.add_argument('--param', action='append', default=[], metavar='KEY=VALUE',
                            help='Override a problem parameter, e.g. --param bx=0.2')

    def handle(self, *args, **options):
        seed = settings.BENCH_SEED if options['seed'] is None else options['seed']
        output = options['output'] or os.path.join(settings.BENCH_OUTPUT_DIR, options['problem'])
        try:
            spec = get_problem(options['problem'], **self._params(options['param']))
            config = solver_config(
                spec, options['degree'], cfl=options['cfl'], t_final=options['tfinal'],
                viscosity=options['viscosity'], output_every=options['output_every'], max_steps=options['max_steps'],
            )
            problem, result = run_benchmark(spec, options['res'], config, seed=seed, restart=options['restart'])
        except InvalidStateError as e:
            raise CommandError(f"{e} ({spec.name}: {spec.notes})")
        except (BenchmarkError, MeshError, SolverError, LinearSolverError, ViscosityError) as e:
            raise CommandError(str(e))

        disc = result.discretization
        state = result.state
        os.makedirs(output, exist_ok=True)

        frames = result.frames or [(state.t, state.U, state.eps)]
        dof_of_vertex = disc.fine_space.dof_of_node
        for index, (t, U, eps) in enumerate(frames):
            fields = frame_fields(U, eps, disc, spec.gamma)
            point_data = {name: values[dof_of_vertex] for name, values in fields.items()}
            write_vtu(os.path.join(output, f"frame_{index:04d}.vtu"), disc.fine_mesh, point_data, time=t)

        final_fields = frame_fields(state.U, state.eps, disc, spec.gamma)
        write_nodal_csv(os.path.join(output, 'nodal.csv'), disc.space.dof_coords, final_fields)
        write_series_csv(
            os.path.join(output, 'diagnostics.csv'),
            DIAGNOSTIC_FIELDS,
            [['' if getattr(d, f) is None else getattr(d, f) for f in DIAGNOSTIC_FIELDS] for d in result.diagnostics],
        )

        if options['slices'] and disc.dim == 2:
            self._write_slices(output, spec, disc.space.dof_coords, final_fields)

        errors = None
        if problem.exact is not None:
            report = error_norms(state.U, problem.exact, disc.space, state.t, spec.gamma, spec.error_variables)
            write_error_csv(os.path.join(output, 'errors.csv'), report, [f"{spec.name} P{config.degree} t={state.t:.17g}"])
            errors = {f"{row.var}_{row.norm}": row.error for row in report.rows}

        if options['checkpoint']:
            dump_checkpoint(state, os.path.join(output, 'checkpoint.npz'))

        write_run_metadata(os.path.join(output, 'run.json'), {
            'problem': spec.name,
            'degree': config.degree,
            'res': options['res'],
            'dofs': disc.space.n_dofs,
            'cfl': config.cfl,
            't_final': config.t_final,
            't': state.t,
            'steps': state.step,
            'seed': seed,
            'viscosity': config.viscosity,
            'rk_scheme': config.rk_scheme,
            'cleaning': config.cleaning,
            'params': dict(spec.params),
            'errors': errors,
            'wall_time': result.wall_time,
            'timestamp': timezone.now().isoformat(),
        })
        self.stdout.write(self.style.SUCCESS(
            f"{spec.name}: {state.step} steps to t={state.t:.6g}, {disc.space.n_dofs} dofs, output in {output}"
        ))

    @staticmethod
    def _params(pairs):
        params = {}
        for pair in pairs:
            key, sep, value = pair.partition('=')
            if not sep:
                raise CommandError(f"Expected KEY=VALUE, got '{pair}'")
            try:
                params[key] = float(value)
            except ValueError:
                params[key] = value
        return params

    @staticmethod
    def _write_slices(output, spec, coords, fields):
        center = (0.5 * sum(spec.x_range), 0.5 * sum(spec.y_range))
        for axis, label in ((0, 'x'), (1, 'y')):
            positions, _ = line_slice(fields['rho'], coords, axis, center[axis])
            columns = {'rho': fields['rho'], 'p': fields['p'], 'Bx': fields['B'][:, 0], 'By': fields['B'][:, 1]}
            sampled = {name: line_slice(values, coords, axis, center[axis])[1] for name, values in columns.items()}
            rows = np.column_stack([positions] + [sampled[name] for name in columns])
            write_series_csv(
                os.path.join(output, f"slice_{label}{center[axis]:g}.csv"), ['s'] + list(columns), rows.tolist(),
            )
