from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from scalar_dmp.utils import SCALAR_PROBLEMS, run_dmp_suite


class Command(BaseCommand):
    help = 'Run the randomized discrete maximum principle suite for the scalar P1 scheme'

    def add_arguments(self, parser):
        parser.add_argument('--trials', type=int, default=100)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--steps', type=int, default=3, help='Forward Euler steps per trial')
        parser.add_argument('--cfl-fraction', type=float, default=1.0, help='Fraction of the maximum-principle step')
        parser.add_argument('--problems', nargs='+', choices=sorted(SCALAR_PROBLEMS), default=['burgers', 'rotating'])

    def handle(self, *args, **options):
        if options['trials'] < 1:
            raise CommandError('--trials must be at least 1')
        seed = settings.BENCH_SEED if options['seed'] is None else options['seed']
        report = run_dmp_suite(
            trials=options['trials'], seed=seed, problems=tuple(options['problems']),
            cfl_fraction=options['cfl_fraction'], steps=options['steps'],
        )
        self.stdout.write(
            f"{report.trials} trials, {report.steps} steps: {report.violations} DMP violations, "
            f"{report.bound_violations} global bound violations, {report.non_convex} non-convex steps"
        )
        self.stdout.write(f"negative control (no viscosity): {report.control_violations} violations")
        for failure in report.failures[:20]:
            self.stdout.write(f"  {failure}")
        if not report.ok:
            raise CommandError('Discrete maximum principle suite failed')
        self.stdout.write(self.style.SUCCESS('Discrete maximum principle holds in every trial'))
