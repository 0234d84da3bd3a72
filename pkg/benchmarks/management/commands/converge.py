import logging
import os

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from benchmarks.tasks import compute_line_reference, run_convergence_level
from benchmarks.utils import REFERENCE_VISCOSITY, BenchmarkError, ErrorReport, ErrorRow, get_problem, reference_path
from mhd_stabilizer.utils import write_error_csv
from solver.utils import VISCOSITY_MODES

logger = logging.getLogger(__name__)


def level_resolutions(base, levels, ratio):
    """base, base*ratio, base*ratio^2, ... rounded to even cell counts."""
    out = []
    for level in range(levels):
        res = int(round(base * ratio ** level / 2.0)) * 2
        out.append(max(res, 2))
    return out


class Command(BaseCommand):
    help = 'Run a mesh sequence and write the error and rate table as CSV'

    def add_arguments(self, parser):
        parser.add_argument('problem')
        parser.add_argument('--degree', type=int, default=1)
        parser.add_argument('--levels', type=int, default=3)
        parser.add_argument('--res', type=int, nargs='+', default=None, help='Explicit cells per side for every level')
        parser.add_argument('--base-res', type=int, default=24)
        parser.add_argument('--ratio', type=float, default=1.5, help='Refinement factor between levels')
        parser.add_argument('--viscosity', choices=VISCOSITY_MODES, default=None)
        parser.add_argument('--cfl', type=float, default=None)
        parser.add_argument('--tfinal', type=float, default=None)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--reference-res', type=int, default=None, help='Cells of the self-reference run')
        parser.add_argument('--output', default=None, help='CSV path')

    def handle(self, *args, **options):
        name = options['problem']
        seed = settings.BENCH_SEED if options['seed'] is None else options['seed']
        try:
            spec = get_problem(name)
        except BenchmarkError as e:
            raise CommandError(str(e))
        if options['levels'] < 1:
            raise CommandError('--levels must be at least 1')

        resolutions = options['res'] or level_resolutions(options['base_res'], options['levels'], options['ratio'])
        output = options['output'] or os.path.join(
            settings.BENCH_OUTPUT_DIR, f"{name}_P{options['degree']}_{options['viscosity'] or settings.SOLVER_VISCOSITY}.csv"
        )
        os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
        common = {
            'viscosity': options['viscosity'],
            't_final': options['tfinal'],
            'cfl': options['cfl'],
            'seed': seed,
        }

        comments = [
            f"problem={name} degree={options['degree']} viscosity={options['viscosity'] or settings.SOLVER_VISCOSITY} "
            f"cfl={options['cfl'] or spec.cfl} t_final={spec.t_final if options['tfinal'] is None else options['tfinal']} "
            f"seed={seed}",
            'errors are relative norms',
        ]
        path = None
        if not spec.exact_available:
            reference_res = options['reference_res'] or int(spec.params.get('reference_cells', 4 * max(resolutions)))
            t_final = spec.t_final if options['tfinal'] is None else options['tfinal']
            cfl = spec.cfl if options['cfl'] is None else options['cfl']
            path = reference_path(os.path.dirname(os.path.abspath(output)), name, reference_res, t_final, cfl)
            if os.path.exists(path):
                logger.info(f"Reusing reference {path}")
            else:
                self.stdout.write(f"Computing the {name} reference at {reference_res} cells...")
                outcome = compute_line_reference.delay(
                    name, reference_res, path, t_final=t_final, cfl=cfl, seed=seed,
                ).get()
                if outcome['status'] != 'success':
                    raise CommandError(f"Reference run failed: {outcome['error']}")
            comments.append(
                f"self-reference: P1 {REFERENCE_VISCOSITY} run of this solver at {reference_res} cells, "
                f"t_final={t_final:g}, cfl={cfl:g}, interpolated linearly along x"
            )

        pending = [
            run_convergence_level.delay(name, options['degree'], res, reference_path=path, **common)
            for res in resolutions
        ]
        report = ErrorReport()
        for res, job in zip(resolutions, pending):
            outcome = job.get()
            if outcome['status'] != 'success':
                raise CommandError(f"Level res={res} failed: {outcome['error']}")
            report.extend(ErrorRow(**row) for row in outcome['errors'])
            self.stdout.write(f"res={res}: {outcome['dofs']} dofs, {outcome['steps']} steps, {outcome['wall_time']:.1f}s")

        report.with_rates(spec.rate_dim)
        write_error_csv(output, report, comments)
        for row in report.rows:
            if row.norm == 'L1':
                rate = '' if row.rate is None else f"{row.rate:.2f}"
                self.stdout.write(f"{row.dofs:>8d} {row.var:>4s} L1 {row.error:.3e} {rate}")
        self.stdout.write(self.style.SUCCESS(f"Error table written to {output}"))
