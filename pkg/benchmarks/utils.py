"""
Benchmark registry, error norms, convergence rates, Schlieren fields and line slices.
"""

import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from django.conf import settings

from elements.quadrature_utils import simplex_quadrature
from elements.utils import LagrangeSpace, build_nodal_geometry, lumped_mass
from mesh.utils import equilateral_mesh, interval_mesh, rectangle_mesh
from mhd_stabilizer.constants import SCHLIEREN_ZETA, STENCIL_RTOL
from physics.utils import IdealMHD, conserved_from_primitive, primitive_from_conserved
from scalar_dmp.utils import cfl_number, run_dmp_suite, trapezoid_identity_check, uniform_stencil_constants
from solver.boundary_utils import BoundaryConditions
from solver.utils import Discretization, Problem, SolverConfig, restore_state, run
from viscosity.utils import lax_friedrichs_deviation

logger = logging.getLogger(__name__)


class BenchmarkError(Exception):
    """Base exception for benchmark setup and evaluation errors"""
    pass


class UnknownProblemError(BenchmarkError):
    """Raised for names missing from the registry"""
    pass


class MissingExactSolutionError(BenchmarkError):
    """Raised when error norms are requested for a problem without exact or reference solution"""
    pass


# ============================================================================
# INITIAL DATA
# ============================================================================

def _state(rho, u, p, B, gamma):
    return conserved_from_primitive(rho, u, p, B, gamma)


def vortex_state(x, t, gamma, mu=1.0, p0=1.0, period=20.0):
    """Translating isentropic MHD vortex; r is taken as the nearest periodic image."""
    u0 = np.array([1.0, 1.0])
    r = x - u0 * t
    r = (r + 0.5 * period) % period - 0.5 * period
    r2 = np.sum(r * r, axis=1)
    rot = np.column_stack([-r[:, 1], r[:, 0]])
    bump = np.exp(0.5 * (1.0 - r2))
    u = u0 + (mu / (math.pi * math.sqrt(2.0))) * bump[:, None] * rot
    p = p0 - mu * mu * (1.0 + r2) * np.exp(1.0 - r2) / (8.0 * math.pi ** 2)
    B = np.array([0.1, 0.1]) + (mu / (2.0 * math.pi)) * bump[:, None] * rot
    return _state(np.ones(len(x)), u, p, B, gamma)


BRIO_WU_LEFT = {'rho': 1.0, 'u': (0.0, 0.0), 'p': 1.0, 'B': (0.75, 1.0)}
BRIO_WU_RIGHT = {'rho': 0.125, 'u': (0.0, 0.0), 'p': 0.1, 'B': (0.75, -1.0)}


def brio_wu_state(x, gamma, x0=0.5, tol=1e-12):
    """
    Left and right states split at x0.

    A node sitting on x0 gets the mean of the two conserved states, so the
    jump spans the two cells around it.
    """
    n = len(x)
    left_state, right_state = (
        _state(np.full(n, side['rho']), np.tile(side['u'], (n, 1)), np.full(n, side['p']), np.tile(side['B'], (n, 1)), gamma)
        for side in (BRIO_WU_LEFT, BRIO_WU_RIGHT)
    )
    U = np.where((x[:, 0] < x0)[:, None], left_state, right_state)
    on_jump = np.abs(x[:, 0] - x0) <= tol
    U[on_jump] = 0.5 * (left_state[on_jump] + right_state[on_jump])
    return U


def orszag_tang_state(x, gamma):
    X, Y = x[:, 0], x[:, 1]
    n = len(x)
    u = np.column_stack([-np.sin(2 * np.pi * Y), np.sin(2 * np.pi * X)])
    B = np.column_stack([-np.sin(2 * np.pi * Y), np.sin(4 * np.pi * X)]) / math.sqrt(4 * math.pi)
    return _state(np.full(n, 25.0 / (36.0 * math.pi)), u, np.full(n, 5.0 / (12.0 * math.pi)), B, gamma)


def kelvin_helmholtz_state(x, gamma, bx=0.0, noise=0.005, rng=None):
    inner = np.abs(x[:, 1]) <= 0.25
    n = len(x)
    rho = np.where(inner, 2.0, 1.0)
    u = np.column_stack([np.where(inner, 0.5, -0.5), np.zeros(n)])
    if noise and rng is not None:
        u = u + rng.uniform(-noise, noise, size=(n, 2))
    B = np.column_stack([np.full(n, bx), np.zeros(n)])
    return _state(rho, u, np.full(n, 2.5), B, gamma)


def blast_state(x, gamma, radius=0.1):
    n = len(x)
    p = np.where(np.linalg.norm(x, axis=1) < radius, 1000.0, 0.1)
    B = np.column_stack([np.full(n, 100.0 / math.sqrt(4 * math.pi)), np.zeros(n)])
    return _state(np.ones(n), np.zeros((n, 2)), p, B, gamma)


# ============================================================================
# REGISTRY
# ============================================================================

@dataclass(frozen=True)
class ProblemSpec:
    name: str
    x_range: tuple
    y_range: tuple
    gamma: float
    cfl: float
    t_final: float
    periodic: tuple = (True, True)
    params: dict = field(default_factory=dict)
    error_variables: tuple = ('rho', 'u', 'B', 'p')
    exact_available: bool = False
    rate_dim: int = 2
    notes: str = ''

    def build_mesh(self, res, seed=None, perturbation=0.0, diagonal='right'):
        """res cells along x; a strip problem gets one cell row of height h."""
        if self.name == 'brio-wu':
            h = (self.x_range[1] - self.x_range[0]) / res
            return rectangle_mesh(res, 1, self.x_range, (0.0, h), periodic_x=False, periodic_y=True)
        return rectangle_mesh(
            res, res, self.x_range, self.y_range, periodic_x=self.periodic[0], periodic_y=self.periodic[1],
            perturbation=perturbation, diagonal=diagonal, seed=seed,
        )

    def initial(self, params=None, rng=None):
        """x -> conserved states, with the KH velocity noise drawn from rng."""
        p = {**self.params, **(params or {})}
        gamma = self.gamma
        if self.name == 'vortex':
            return lambda x: vortex_state(x, 0.0, gamma, p['mu'], p['p0'])
        if self.name == 'brio-wu':
            return lambda x: brio_wu_state(x, gamma)
        if self.name == 'orszag-tang':
            return lambda x: orszag_tang_state(x, gamma)
        if self.name == 'kelvin-helmholtz':
            return lambda x: kelvin_helmholtz_state(x, gamma, p['bx'], p['noise'], rng)
        if self.name == 'blast':
            return lambda x: blast_state(x, gamma, p['radius'])
        raise UnknownProblemError(f"No initial data for '{self.name}'")

    def exact(self, params=None):
        """(x, t) -> conserved states, or None."""
        if self.name != 'vortex':
            return None
        p = {**self.params, **(params or {})}
        return lambda x, t: vortex_state(x, t, self.gamma, p['mu'], p['p0'])

    def boundary_conditions(self):
        if self.name == 'brio-wu':
            gamma = self.gamma
            data = lambda x, t: brio_wu_state(x, gamma)  # noqa: E731
            return BoundaryConditions(dirichlet={'left': data, 'right': data})
        return BoundaryConditions()

    def instantiate(self, res, seed=None, params=None, perturbation=None, diagonal=None):
        """Problem instance for the solver at resolution res."""
        if seed is None:
            seed = settings.BENCH_SEED
        merged = {**self.params, **(params or {})}
        if perturbation is None:
            perturbation = merged.get('perturbation', 0.0)
        if diagonal is None:
            diagonal = merged.get('diagonal', 'right')
        rng = np.random.default_rng(seed)
        mesh = self.build_mesh(res, seed=seed, perturbation=perturbation, diagonal=diagonal)
        return Problem(
            name=self.name,
            mesh=mesh,
            model=IdealMHD(self.gamma),
            initial=self.initial(merged, rng),
            bcs=self.boundary_conditions(),
            exact=self.exact(merged),
        )


PROBLEMS = {
    'vortex': ProblemSpec(
        'vortex', (-10.0, 10.0), (-10.0, 10.0), gamma=5.0 / 3.0, cfl=0.1, t_final=0.05,
        params={'mu': 1.0, 'p0': 1.0, 'perturbation': 0.2, 'diagonal': 'random'},
        error_variables=('u', 'B'), exact_available=True,
        notes='background pressure p0 = 1 keeps the vortex core pressure positive',
    ),
    'brio-wu': ProblemSpec(
        'brio-wu', (0.0, 1.0), (0.0, 1.0), gamma=2.0, cfl=0.3, t_final=0.1, periodic=(False, True),
        params={'reference_cells': 1440}, error_variables=('rho',), rate_dim=1,
        notes='one-row strip, periodic in y, Dirichlet data at x=0 and x=1; errors against a fine self-reference',
    ),
    'orszag-tang': ProblemSpec(
        'orszag-tang', (0.0, 1.0), (0.0, 1.0), gamma=5.0 / 3.0, cfl=0.3, t_final=0.5,
        notes='t_final 0.5 or 1',
    ),
    'kelvin-helmholtz': ProblemSpec(
        'kelvin-helmholtz', (-0.5, 0.5), (-0.5, 0.5), gamma=5.0 / 3.0, cfl=0.4, t_final=6.0,
        params={'bx': 0.0, 'noise': 0.005}, notes='bx = 0 (hydrodynamic) or 0.2 (magnetized)',
    ),
    'blast': ProblemSpec(
        'blast', (-0.5, 0.5), (-0.5, 0.5), gamma=1.4, cfl=0.2, t_final=0.01,
        params={'radius': 0.1},
        notes=(
            'ambient pressure 0.1, 1000 inside the radius; the scheme is not positivity-preserving, so the run '
            'may stop with InvalidStateError (non-positive pressure) once the blast wave forms'
        ),
    ),
}


def registry():
    return dict(PROBLEMS)


def get_problem(name, **params):
    """
    Raises:
        UnknownProblemError: If name is not registered
    """
    try:
        spec = PROBLEMS[name]
    except KeyError:
        raise UnknownProblemError(f"Unknown problem '{name}'; choose from {', '.join(sorted(PROBLEMS))}")
    if params:
        spec = replace(spec, params={**spec.params, **params})
    return spec


# ============================================================================
# ERROR NORMS
# ============================================================================

@dataclass
class ErrorRow:
    dofs: int
    var: str
    norm: str
    error: float
    rate: float = None


@dataclass
class ErrorReport:
    rows: list = field(default_factory=list)

    def extend(self, rows):
        self.rows.extend(rows)
        return self

    def get(self, dofs, var, norm):
        for row in self.rows:
            if row.dofs == dofs and row.var == var and row.norm == norm:
                return row.error
        raise KeyError((dofs, var, norm))

    def with_rates(self, dim):
        """Observed rate log(e_prev/e) / log((N/N_prev)^(1/d)) between consecutive levels."""
        by_key = {}
        for row in self.rows:
            by_key.setdefault((row.var, row.norm), []).append(row)
        for rows in by_key.values():
            rows.sort(key=lambda r: r.dofs)
            rows[0].rate = None
            for prev, row in zip(rows[:-1], rows[1:]):
                if prev.error > 0 and row.error > 0 and row.dofs != prev.dofs:
                    row.rate = math.log(prev.error / row.error) / math.log((row.dofs / prev.dofs) ** (1.0 / dim))
                else:
                    row.rate = None
        self.rows.sort(key=lambda r: (r.dofs, r.var, r.norm))
        return self


def primitive_fields(U, gamma, variables):
    """Named primitive fields; vector fields keep their last axis."""
    rho, u, p, B = primitive_from_conserved(U, gamma)
    available = {'rho': rho, 'u': u, 'p': p, 'B': B}
    return {name: available[name] for name in variables}


VECTOR_VARIABLES = ('u', 'B')


def _magnitude(values, var):
    return np.linalg.norm(values, axis=-1) if var in VECTOR_VARIABLES else np.abs(values)


def error_norms(U_h, exact, space, t, gamma, variables=('rho', 'u', 'B', 'p')):
    """
    Relative L1, L2 and Linf errors of the primitive variables.

    Integrals use a rule of degree 2k+4; Linf is sampled at those quadrature
    points and at the nodes. A vanishing exact norm falls back to the absolute error.

    Raises:
        MissingExactSolutionError: If exact is None
    """
    if exact is None:
        raise MissingExactSolutionError("No exact or reference solution for error norms")
    d = space.dim
    rule = simplex_quadrature(d, 2 * space.degree + 4)
    phi, _, weights, points = space.rule_data(rule)
    U_q = space.evaluate(U_h, phi)
    nc, nq = weights.shape
    U_ex = np.asarray(exact(points.reshape(-1, d), t)).reshape(nc, nq, -1)
    nodes_h = primitive_fields(np.asarray(U_h), gamma, variables)
    nodes_ex = primitive_fields(np.asarray(exact(space.dof_coords, t)), gamma, variables)
    q_h = primitive_fields(U_q, gamma, variables)
    q_ex = primitive_fields(U_ex, gamma, variables)

    rows = []
    for var in variables:
        err = _magnitude(q_h[var] - q_ex[var], var)
        ref = _magnitude(q_ex[var], var)
        node_err = _magnitude(nodes_h[var] - nodes_ex[var], var)
        node_ref = _magnitude(nodes_ex[var], var)

        norms = {
            'L1': (np.sum(weights * err), np.sum(weights * ref)),
            'L2': (math.sqrt(np.sum(weights * err ** 2)), math.sqrt(np.sum(weights * ref ** 2))),
            'Linf': (max(err.max(), node_err.max()), max(ref.max(), node_ref.max())),
        }
        for norm, (num, den) in norms.items():
            rows.append(ErrorRow(space.n_dofs, var, norm, float(num / den) if den > 0 else float(num)))
    return ErrorReport(rows)


# ============================================================================
# FIELDS
# ============================================================================

def nodal_gradient(values, fine_space):
    """Lumped-mass L2 projection of the gradient onto the fine P1 space."""
    grad = fine_space.load_vector(fine_space.gradient(values))
    return grad / lumped_mass(fine_space)[:, None]


def schlieren(rho, fine_space, zeta=SCHLIEREN_ZETA):
    """sigma_i = exp(-zeta |grad rho|_i / max |grad rho|); constant rho gives sigma = 1."""
    if fine_space.dim != 2:
        raise BenchmarkError(f"Schlieren fields are defined for d=2, got d={fine_space.dim}")
    magnitude = np.linalg.norm(nodal_gradient(rho, fine_space), axis=1)
    top = float(magnitude.max())
    if top <= 0.0:
        return np.ones_like(magnitude)
    return np.exp(-zeta * magnitude / top)


def line_slice(values, coords, axis, at, tol=1e-9):
    """
    Nodal values on the line x_axis = at, sorted along the other coordinate.

    Returns:
        tuple: (positions, values)
    """
    scale = float(np.ptp(coords, axis=0).max()) or 1.0
    on_line = np.nonzero(np.abs(coords[:, axis] - at) <= tol * scale)[0]
    other = 1 - axis
    order = np.argsort(coords[on_line, other], kind='stable')
    return coords[on_line[order], other], np.asarray(values)[on_line[order]]


# ============================================================================
# STRIP REFERENCE
# ============================================================================

REFERENCE_VISCOSITY = 'rv'


@dataclass
class LineReference:
    """A strip solution sampled along x and interpolated linearly between nodes."""

    x: np.ndarray
    U: np.ndarray
    t_final: float = None
    cfl: float = None

    def __call__(self, points, t=None):
        points = np.asarray(points, dtype=float)
        return np.column_stack([np.interp(points[:, 0], self.x, self.U[:, c]) for c in range(self.U.shape[1])])

    def save(self, path):
        metadata = {} if self.t_final is None else {'t_final': self.t_final, 'cfl': self.cfl}
        np.savez(path, x=self.x, U=self.U, **metadata)

    @classmethod
    def load(cls, path, t_final=None, cfl=None, rtol=1e-12):
        """
        Raises:
            BenchmarkError: If the stored t_final or cfl differ from the requested ones
        """
        with np.load(path) as data:
            stored = {key: float(data[key]) if key in data else None for key in ('t_final', 'cfl')}
            reference = cls(data['x'].copy(), data['U'].copy(), **stored)
        for key, wanted in (('t_final', t_final), ('cfl', cfl)):
            have = stored[key]
            if wanted is not None and (have is None or not math.isclose(have, wanted, rel_tol=rtol, abs_tol=rtol)):
                raise BenchmarkError(f"Reference {path} was computed with {key}={have}, requested {wanted}")
        return reference


def reference_path(directory, name, res, t_final, cfl):
    """Cache file of a self-reference; the run parameters are part of the name."""
    return os.path.join(directory, f"{name}_reference_{res}_t{t_final:g}_cfl{cfl:g}.npz")


def line_reference(U, space, y=0.0, t_final=None, cfl=None):
    """Nodes on the bottom row of a strip, sorted along x, duplicates in x merged."""
    x, values = line_slice(U, space.dof_coords, axis=1, at=y)
    x, first = np.unique(x, return_index=True)
    return LineReference(x, values[first], t_final, cfl)


# ============================================================================
# RUNS
# ============================================================================

def solver_config(spec, degree, cfl=None, t_final=None, viscosity=None, output_every=0, max_steps=None):
    """SolverConfig with the problem's CFL and final time unless overridden."""
    overrides = {} if viscosity is None else {'viscosity': viscosity}
    return SolverConfig(
        cfl=spec.cfl if cfl is None else cfl,
        t_final=spec.t_final if t_final is None else t_final,
        degree=degree,
        output_every=output_every,
        max_steps=max_steps,
        **overrides,
    )


def run_benchmark(spec, res, config, seed=None, hooks=(), restart=None):
    """
    Instantiate spec at resolution res and integrate it, optionally from a checkpoint.

    Returns:
        tuple: (Problem, RunResult)
    """
    problem = spec.instantiate(res, seed=seed)
    disc = Discretization(problem.mesh, config.degree, problem.model, problem.bcs)
    state = restore_state(restart, disc) if restart else None
    if state is not None:
        logger.info(f"Restarting {spec.name} from {restart} at t={state.t:.6g}, step {state.step}")
    return problem, run(problem, config, hooks=hooks, state=state, discretization=disc)


# ============================================================================
# INVARIANT SUITES
# ============================================================================

@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str = ''


def _random_simplex(d, rng):
    """A random shape-regular simplex: the unit reference with jittered vertices, scaled and shifted."""
    ref = np.vstack([np.zeros(d), np.eye(d)])
    cell = ref + 0.25 * rng.uniform(-1.0, 1.0, size=ref.shape)
    return rng.uniform(0.1, 10.0) * cell + rng.uniform(-5.0, 5.0, size=d)


def stencil_suite(trials=100, seed=0, rtol=STENCIL_RTOL):
    """P1 stencil constants and the trapezoid identity on random intervals and triangles."""
    rng = np.random.default_rng(seed)
    worst_stencil = 0.0
    worst_trapezoid = 0.0
    for trial in range(trials):
        d = 1 + trial % 2
        cell = _random_simplex(d, rng)
        worst_stencil = max(worst_stencil, uniform_stencil_constants(cell))
        eps = rng.uniform(0.0, 1.0, d + 1)
        i, j = (int(v) for v in rng.integers(0, d + 1, size=2))
        sides = trapezoid_identity_check(cell, eps, i, j)
        scale = abs(sides.nodal_average) or 1.0
        worst_trapezoid = max(worst_trapezoid, abs(sides.quadrature - sides.nodal_average) / scale)
    return [
        SuiteResult('stencil constants', worst_stencil <= rtol, f"max relative deviation {worst_stencil:.3e}"),
        SuiteResult('trapezoid identity', worst_trapezoid <= rtol, f"max relative gap {worst_trapezoid:.3e}"),
    ]


def cfl_suite():
    """CFL = 1/2 in 1D and 1/3 in 2D for kappa = 1."""
    one, two = cfl_number(1, 1.0), cfl_number(2, 1.0)
    return [SuiteResult('CFL constants', one == 0.5 and two == 1.0 / 3.0, f"1D {one!r}, 2D {two!r}")]


def lax_friedrichs_suite(rtol=STENCIL_RTOL, speed=1.3):
    """eps^L J J^T against the Lax-Friedrichs coefficient on uniform periodic meshes."""
    results = []
    for label, mesh in (('1D', interval_mesh(16, periodic=True)), ('2D', equilateral_mesh(8))):
        space = LagrangeSpace(mesh, 1)
        geometry = build_nodal_geometry(space, space)
        gap = lax_friedrichs_deviation(space, geometry, np.full(space.n_dofs, speed))
        results.append(SuiteResult(f"Lax-Friedrichs reduction {label}", gap <= rtol, f"max relative gap {gap:.3e}"))
    return results


def dmp_suite(trials=100, seed=0):
    report = run_dmp_suite(trials=trials, seed=seed)
    detail = (
        f"{report.trials} trials, {report.violations} violations, {report.non_convex} non-convex steps, "
        f"negative control {report.control_violations} violations"
    )
    return [SuiteResult('discrete maximum principle', report.ok, detail)]


def invariant_suites(trials=100, seed=0):
    """Every fast invariant check; the DMP suite runs trials randomized trials."""
    results = stencil_suite(trials, seed) + cfl_suite() + lax_friedrichs_suite() + dmp_suite(trials, seed)
    for result in results:
        log = logger.info if result.ok else logger.error
        log(f"{result.name}: {'ok' if result.ok else 'FAILED'} ({result.detail})")
    return results
