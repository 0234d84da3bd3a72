import logging
from dataclasses import asdict

from django.utils import timezone

from mhd_stabilizer.celery import app

from .utils import (
    REFERENCE_VISCOSITY,
    BenchmarkError,
    LineReference,
    error_norms,
    get_problem,
    line_reference,
    run_benchmark,
    solver_config,
)

logger = logging.getLogger(__name__)


# ============================================================================
# CONVERGENCE STUDY - ONE TASK PER MESH LEVEL
# ============================================================================

@app.task(bind=True)
def run_convergence_level(self, name, degree, res, seed=None, viscosity=None, t_final=None, cfl=None,
                          reference_path=None):
    """
    Run one mesh level of a convergence study and measure its errors.

    The exact solution of the problem is used when it has one; otherwise
    reference_path must point to a saved LineReference.

    Returns:
        dict: status, dofs, errors (list of row dicts without rates), timestamp
    """
    started = timezone.now()
    try:
        spec = get_problem(name)
        config = solver_config(spec, degree, cfl=cfl, t_final=t_final, viscosity=viscosity)
        problem, result = run_benchmark(spec, res, config, seed=seed)

        exact = problem.exact
        if exact is None:
            if reference_path is None:
                raise BenchmarkError(f"'{name}' has no exact solution and no reference was given")
            exact = LineReference.load(reference_path, t_final=config.t_final, cfl=config.cfl)

        space = result.discretization.space
        report = error_norms(result.state.U, exact, space, result.state.t, spec.gamma, spec.error_variables)
        logger.info(
            f"Level {name} P{degree} res={res}: {space.n_dofs} dofs, {result.state.step} steps, "
            f"{result.wall_time:.1f}s"
        )
        return {
            'status': 'success',
            'name': name,
            'degree': degree,
            'res': res,
            'dofs': space.n_dofs,
            'steps': result.state.step,
            'wall_time': result.wall_time,
            'errors': [asdict(row) for row in report.rows],
            'timestamp': started.isoformat(),
        }
    except Exception as e:
        logger.exception(f"Convergence level {name} P{degree} res={res} failed")
        return {
            'status': 'error',
            'name': name,
            'degree': degree,
            'res': res,
            'error': str(e),
            'timestamp': started.isoformat(),
        }


@app.task(bind=True)
def compute_line_reference(self, name, res, path, degree=1, t_final=None, cfl=None, seed=None):
    """
    Fine strip run saved as a LineReference for self-referenced error tables.

    The reference always uses REFERENCE_VISCOSITY, whatever mode the levels
    run in; t_final and cfl are stored with it.
    """
    started = timezone.now()
    try:
        spec = get_problem(name)
        config = solver_config(spec, degree, cfl=cfl, t_final=t_final, viscosity=REFERENCE_VISCOSITY)
        _, result = run_benchmark(spec, res, config, seed=seed)
        reference = line_reference(result.state.U, result.discretization.space, t_final=config.t_final, cfl=config.cfl)
        reference.save(path)
        logger.info(f"Reference for {name} at res={res} saved to {path} ({len(reference.x)} nodes)")
        return {
            'status': 'success',
            'path': str(path),
            'nodes': len(reference.x),
            'timestamp': started.isoformat(),
        }
    except Exception as e:
        logger.exception(f"Reference run for {name} at res={res} failed")
        return {
            'status': 'error',
            'error': str(e),
            'timestamp': started.isoformat(),
        }
