from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from benchmarks.utils import invariant_suites


class Command(BaseCommand):
    help = 'Run the fast invariant suites: stencil constants, trapezoid identity, CFL, Lax-Friedrichs, DMP'

    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--trials', type=int, default=100)
        parser.add_argument('--seed', type=int, default=None)

    def handle(self, *args, **options):
        seed = settings.BENCH_SEED if options['seed'] is None else options['seed']
        results = invariant_suites(trials=options['trials'], seed=seed)
        for result in results:
            status = self.style.SUCCESS('ok') if result.ok else self.style.ERROR('FAILED')
            self.stdout.write(f"{result.name:<32s} {status}  {result.detail}")
        failed = [r.name for r in results if not r.ok]
        if failed:
            raise CommandError(f"Invariant suites failed: {', '.join(failed)}")
