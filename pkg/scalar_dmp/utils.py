"""
Forward-Euler P1 scheme for scalar conservation laws with the nodal
first-order viscosity, its CFL bound and executable checks of the local
discrete maximum principle.
"""

import logging
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from elements.quadrature_utils import simplex_quadrature
from elements.utils import (
    LagrangeSpace,
    build_nodal_geometry,
    reference_stencil_check,
)
from mesh.utils import interval_mesh, rectangle_mesh
from mhd_stabilizer.constants import CONVEX_COEFF_TOL, DMP_RTOL

logger = logging.getLogger(__name__)


ScalarCFL = namedtuple('ScalarCFL', ['tau', 'cfl', 'h'])
TrapezoidSides = namedtuple('TrapezoidSides', ['quadrature', 'nodal_average', 'stencil'])


class ScalarSchemeError(Exception):
    """Base exception for the scalar maximum-principle scheme"""
    pass


class CFLViolationError(ScalarSchemeError):
    """Raised when a step exceeds the maximum-principle CFL bound"""
    pass


# ============================================================================
# PROBLEMS
# ============================================================================

@dataclass
class ScalarProblem:
    """
    Scalar law q_t + div f(q, x) = 0.

    derivative(q, x) is f'(q) at points x (shape (..., d)); speed_bound(q, x)
    returns beta >= sup |f'| over the nodal data.
    """

    name: str
    dim: int
    derivative: object
    speed_bound: object
    initial: object = None

    def flux_speed(self, q, x):
        return np.linalg.norm(self.derivative(q, x), axis=-1)


def burgers_1d():
    return ScalarProblem(
        name='burgers',
        dim=1,
        derivative=lambda q, x: np.asarray(q, dtype=float)[..., None],
        speed_bound=lambda q, x: float(np.abs(q).max()),
        initial=lambda x: np.where(x[:, 0] < 0.5, 1.0, 0.0),
    )


def rotating_advection_2d():
    """f(q) = (-y, x) q, so f' depends on the position only."""

    def derivative(q, x):
        x = np.asarray(x, dtype=float)
        return np.stack([-x[..., 1], x[..., 0]], axis=-1) * np.ones_like(q, dtype=float)[..., None]

    return ScalarProblem(
        name='rotating',
        dim=2,
        derivative=derivative,
        speed_bound=lambda q, x: float(np.linalg.norm(x, axis=1).max()),
        initial=lambda x: np.where(np.linalg.norm(x - np.array([0.5, 0.0]), axis=1) < 0.3, 1.0, 0.0),
    )


def linear_advection(velocity):
    v = np.atleast_1d(np.asarray(velocity, dtype=float))
    return ScalarProblem(
        name='advection',
        dim=len(v),
        derivative=lambda q, x: np.broadcast_to(v, np.shape(q) + (len(v),)),
        speed_bound=lambda q, x: float(np.linalg.norm(v)),
    )


SCALAR_PROBLEMS = {
    'burgers': burgers_1d,
    'rotating': rotating_advection_2d,
}


# ============================================================================
# SCHEME
# ============================================================================

def scalar_geometry(space):
    """Nodal factors of a P1 space with the patch-minimum cell measure in C_i."""
    return build_nodal_geometry(space, space, volume='min')


def nodal_speed(q, space, problem):
    """||f'(q_h)||_Linf(S_i) sampled at the nodes and quadrature points of every cell."""
    q = np.asarray(q, dtype=float)
    nodal = problem.flux_speed(q, space.dof_coords)
    at_points = problem.flux_speed(space.evaluate(q), space.points)
    cell_max = np.maximum(nodal[space.cell_dofs].max(axis=1), at_points.max(axis=1))
    speed = np.zeros(space.n_dofs)
    np.maximum.at(speed, space.cell_dofs.reshape(-1), np.repeat(cell_max, space.n_local))
    return speed


def scalar_first_order_viscosity(q, space, geometry, problem):
    """eps_i = C_i m_i ||f'(q_h)||_Linf(S_i) max_{j != i} |grad phi_j|."""
    return geometry.C * geometry.m * nodal_speed(q, space, problem) * geometry.phi


def scalar_operator(q, eps, space, problem):
    """
    L = G + V with G_ij = (f'(q_h) . grad phi_j, phi_i) and
    V_ij = sum_K (eps_h J_K^T grad phi_j, J_K^T grad phi_i)_K, both frozen at q.
    """
    speed = problem.derivative(space.evaluate(q), space.points)
    galerkin = np.einsum('cq,ql,cqa,cqma->clm', space.weights, space.phi, speed, space.grads)
    eps_q = space.evaluate(np.asarray(eps, dtype=float))
    viscous = np.einsum('cq,cq,cqla,cab,cqmb->clm', space.weights, eps_q, space.grads, space.jjt, space.grads)
    return space.assemble_matrix(galerkin + viscous)


def scalar_step_matrix(q, tau, eps, space, problem, mass):
    """A = I - tau diag(1/m) L, so that Q^{n+1} = A Q^n."""
    L = scalar_operator(q, eps, space, problem)
    return (sparse.identity(space.n_dofs, format='csr') - tau * sparse.diags(1.0 / mass) @ L).tocsr()


def scalar_cfl(space, geometry, beta, kappa=None):
    """
    tau_max = 1 / ((1 + d kappa) beta max|grad phi| kappa).

    Returns:
        ScalarCFL: (tau_max, CFL = 1/((1 + d kappa) kappa), h = 1/max|grad phi|);
        tau_max is inf when beta = 0
    """
    d = space.dim
    if kappa is None:
        kappa = float(geometry.kappa.max())
    grad_max = float(np.linalg.norm(space.grads, axis=-1).max())
    cfl = cfl_number(d, kappa)
    tau = np.inf if beta == 0 else 1.0 / ((1.0 + d * kappa) * beta * grad_max * kappa)
    return ScalarCFL(tau, cfl, 1.0 / grad_max)


def cfl_number(d, kappa):
    return 1.0 / ((1.0 + d * kappa) * kappa)


def scalar_euler_step(q, tau, space, problem, geometry=None, eps=None, on_violation='raise'):
    """
    m_i (Q^{n+1}_i - Q^n_i)/tau + (f'(q_h).grad q_h, phi_i) + b(q_h, phi_i) = 0.

    Args:
        eps: nodal viscosity (defaults to scalar_first_order_viscosity of q)
        on_violation: 'raise', 'warn' or 'ignore' when tau exceeds scalar_cfl

    Raises:
        CFLViolationError: If tau is above the CFL bound and on_violation is 'raise'
    """
    q = np.asarray(q, dtype=float)
    geometry = geometry or scalar_geometry(space)
    if eps is None:
        eps = scalar_first_order_viscosity(q, space, geometry, problem)
    if on_violation != 'ignore':
        bound = scalar_cfl(space, geometry, problem.speed_bound(q, space.dof_coords)).tau
        if tau > bound * (1.0 + 1e-12):
            message = f"Step {tau:.6e} exceeds the maximum-principle bound {bound:.6e}"
            if on_violation == 'raise':
                raise CFLViolationError(message)
            logger.warning(message)
    L = scalar_operator(q, eps, space, problem)
    return q - tau * (L @ q) / geometry.m


# ============================================================================
# CHECKS
# ============================================================================

@dataclass
class DMPReport:
    violations: list = field(default_factory=list)
    max_excess: float = 0.0

    @property
    def ok(self):
        return not self.violations


def dmp_check(q_old, q_new, patch, rtol=DMP_RTOL):
    """Nodes i with Q^{n+1}_i outside [min, max] of Q^n over I(S_i), beyond rtol times the data range."""
    q_old = np.asarray(q_old, dtype=float)
    q_new = np.asarray(q_new, dtype=float)
    scale = float(q_old.max() - q_old.min()) or float(np.abs(q_old).max()) or 1.0
    tol = rtol * scale
    low, high = patch.patch_min(q_old), patch.patch_max(q_old)
    excess = np.maximum(q_new - high, low - q_new)
    bad = np.nonzero(excess > tol)[0]
    return DMPReport([int(i) for i in bad], float(max(excess.max(), 0.0)))


def trapezoid_identity_check(cell_vertices, eps_nodal, i, j):
    """
    Both sides of int_K eps_h (J^T grad phi_j).(J^T grad phi_i) = mean(eps) int_K (J^T grad phi_j).(J^T grad phi_i).

    The left side is integrated with an exact quadrature of eps_h; the right
    uses the nodal average and the closed-form stencil integral.
    """
    cell_vertices = np.asarray(cell_vertices, dtype=float)
    if cell_vertices.ndim == 1:
        cell_vertices = cell_vertices.reshape(-1, 1)
    d = cell_vertices.shape[1]
    eps_nodal = np.asarray(eps_nodal, dtype=float)
    stencil = reference_stencil_check(cell_vertices)

    rule = simplex_quadrature(d, 1)
    bary = np.column_stack([1.0 - rule.points.sum(axis=1), rule.points])
    det = abs(np.linalg.det((cell_vertices[1:] - cell_vertices[0]).T))
    integrand = stencil.matrix[i, j] / stencil.measure
    quadrature = float(np.sum(rule.weights * det * (bary @ eps_nodal)) * integrand)
    nodal_average = float(eps_nodal.mean() * stencil.matrix[i, j])
    return TrapezoidSides(quadrature, nodal_average, stencil)


@dataclass
class ConvexCoefficients:
    matrix: np.ndarray

    @property
    def diagonal(self):
        return np.diag(self.matrix)

    @property
    def row_sums(self):
        return self.matrix.sum(axis=1)

    @property
    def min_coefficient(self):
        return float(self.matrix.min())

    def is_convex(self, tol=CONVEX_COEFF_TOL):
        return self.min_coefficient >= -tol and bool(np.all(np.abs(self.row_sums - 1.0) <= tol))


def convex_coefficients(q, tau, space, problem, geometry=None, eps=None):
    """Coefficients a = A_ii and b_j = A_ij of the frozen step map."""
    q = np.asarray(q, dtype=float)
    geometry = geometry or scalar_geometry(space)
    if eps is None:
        eps = scalar_first_order_viscosity(q, space, geometry, problem)
    return ConvexCoefficients(scalar_step_matrix(q, tau, eps, space, problem, geometry.m).toarray())


def viscosity_upper_bound(space, geometry, speed_max):
    """(kappa_i / alpha) (1/(d+1)) ||f'||_inf max|grad phi| for every node."""
    d = space.dim
    alpha = 2.0 / (d + 1)
    grad_max = float(np.linalg.norm(space.grads, axis=-1).max())
    return geometry.kappa / alpha / (d + 1) * speed_max * grad_max


# ============================================================================
# PROPERTY SUITE
# ============================================================================

@dataclass
class DMPSuiteReport:
    trials: int = 0
    steps: int = 0
    violations: int = 0
    bound_violations: int = 0
    non_convex: int = 0
    control_violations: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return self.violations == 0 and self.bound_violations == 0 and self.non_convex == 0 and self.control_violations > 0


def random_trial_space(problem, rng):
    """A randomly perturbed P1 space for one property trial."""
    if problem.dim == 1:
        mesh = interval_mesh(int(rng.integers(12, 40)), periodic=True, perturbation=0.3, seed=int(rng.integers(2**31)))
    else:
        n = int(rng.integers(5, 10))
        mesh = rectangle_mesh(
            n, n, (-1.0, 1.0), (-1.0, 1.0), perturbation=0.1, diagonal='right', seed=int(rng.integers(2**31)),
        )
    return LagrangeSpace(mesh, 1)


def negative_control(n_cells=32, cfl_fraction=0.5):
    """Pure Galerkin Burgers steps on step data; returns the DMP report of one step."""
    problem = burgers_1d()
    space = LagrangeSpace(interval_mesh(n_cells, periodic=True), 1)
    geometry = scalar_geometry(space)
    q = problem.initial(space.dof_coords)
    tau = cfl_fraction * scalar_cfl(space, geometry, problem.speed_bound(q, space.dof_coords)).tau
    q_new = scalar_euler_step(q, tau, space, problem, geometry, eps=np.zeros(space.n_dofs), on_violation='ignore')
    return dmp_check(q, q_new, space.patch)


def run_dmp_suite(trials=100, seed=0, problems=('burgers', 'rotating'), cfl_fraction=1.0, steps=3):
    """
    Randomized maximum-principle trials plus the zero-viscosity negative control.

    Each trial draws a mesh and bounded random nodal data, then takes forward
    Euler steps at cfl_fraction times the bound of scalar_cfl, checking the
    local DMP, the global bounds and the convex-combination coefficients.
    """
    rng = np.random.default_rng(seed)
    report = DMPSuiteReport()
    for trial in range(trials):
        problem = SCALAR_PROBLEMS[problems[trial % len(problems)]]()
        space = random_trial_space(problem, rng)
        geometry = scalar_geometry(space)
        q = rng.uniform(-1.0, 1.0, space.n_dofs)
        q_min, q_max = float(q.min()), float(q.max())
        tol = DMP_RTOL * (q_max - q_min)
        for _ in range(steps):
            beta = problem.speed_bound(q, space.dof_coords)
            tau = cfl_fraction * scalar_cfl(space, geometry, beta).tau
            eps = scalar_first_order_viscosity(q, space, geometry, problem)
            if trial < 10 and not convex_coefficients(q, tau, space, problem, geometry, eps).is_convex():
                report.non_convex += 1
                report.failures.append(f"trial {trial}: non-convex step coefficients")
            q_new = scalar_euler_step(q, tau, space, problem, geometry, eps, on_violation='ignore')
            check = dmp_check(q, q_new, space.patch)
            if not check.ok:
                report.violations += len(check.violations)
                report.failures.append(f"trial {trial} ({problem.name}): DMP violated at nodes {check.violations[:5]}")
            if q_new.min() < q_min - tol or q_new.max() > q_max + tol:
                report.bound_violations += 1
            q = q_new
            report.steps += 1
        report.trials += 1

    report.control_violations = len(negative_control().violations)
    logger.info(
        f"DMP suite: {report.trials} trials, {report.steps} steps, {report.violations} violations, "
        f"negative control {report.control_violations} violations"
    )
    return report


def uniform_stencil_constants(cell_vertices):
    """Deviation of the P1 stencil integrals from -alpha|K| (off-diagonal) and gamma|K| (diagonal)."""
    stencil = reference_stencil_check(cell_vertices)
    n = len(stencil.matrix)
    expected = np.full((n, n), -stencil.alpha * stencil.measure)
    np.fill_diagonal(expected, stencil.gamma * stencil.measure)
    return float(np.abs(stencil.matrix - expected).max() / stencil.measure)

