"""
Semi-discrete assembly, explicit Runge-Kutta stepping and the time loop.

One time step runs, in this order: residual, viscosity, rk, cleaning, bcs,
lambda_max, dt. Hooks registered with run() are called after every stage
with the stage name, so the order is observable from outside.
"""

import logging
import math
import time
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from elements.utils import LagrangeSpace, build_nodal_geometry, consistent_mass
from linalg.utils import cg_solve
from mesh.utils import build_fine_submesh
from mhd_stabilizer.constants import VISCOSITY_CAP_RTOL, VISCOUS_STEP_SAFETY
from viscosity.utils import (
    ViscosityField,
    bdf2_derivative,
    check_viscosity_cap,
    component_groups,
    first_order_viscosity,
    group_magnitudes,
    nodal_wave_speed,
    normalization,
    projection_matrix,
    residual_projection,
    residual_viscosity,
    resolved_groups,
)

from .boundary_utils import apply_bcs, resolve_boundary
from .cleaning_utils import clean_divergence, divergence_error

logger = logging.getLogger(__name__)


ALGORITHM_STAGES = ('residual', 'viscosity', 'rk', 'cleaning', 'bcs', 'lambda_max', 'dt')
VISCOSITY_MODES = ('rv', 'first-order', 'none')

ButcherTableau = namedtuple('ButcherTableau', ['a', 'b', 'c'])

RK_TABLEAUX = {
    'euler': ButcherTableau(np.zeros((1, 1)), np.array([1.0]), np.array([0.0])),
    'ssprk3': ButcherTableau(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.25, 0.25, 0.0]]),
        np.array([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]),
        np.array([0.0, 1.0, 0.5]),
    ),
    'rk4': ButcherTableau(
        np.array([[0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0], [0.0, 0.5, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]),
        np.array([1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0]),
        np.array([0.0, 0.5, 0.5, 1.0]),
    ),
}

# z in [-x, 0] with |R(z)| <= 1 for the scheme's stability polynomial R
RK_REAL_STABILITY = {'euler': 2.0, 'ssprk3': 2.51, 'rk4': 2.78}

CHECKPOINT_KEYS =('U', 'U_prev', 'U_prev2', 'times', 'step', 'tau', 'eps')


# ============================================================================
# EXCEPTIONS
# ============================================================================

class SolverError(Exception):
    """Base exception for time-loop failures"""
    pass


class SolverConfigError(SolverError):
    """Raised for invalid solver configuration values"""
    pass


class NonFiniteStateError(SolverError):
    """Raised when a NaN or Inf appears in the solution"""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


# ============================================================================
# CONFIGURATION AND STATE
# ============================================================================

@dataclass
class SolverConfig:
    cfl: float = 0.1
    t_final: float = 0.0
    degree: int = 1
    rk_scheme: str = field(default_factory=lambda: settings.SOLVER_RK_SCHEME)
    viscosity: str = field(default_factory=lambda: settings.SOLVER_VISCOSITY)
    cleaning: bool = field(default_factory=lambda: settings.SOLVER_CLEANING)
    mass_rtol: float = field(default_factory=lambda: settings.SOLVER_MASS_RTOL)
    poisson_rtol: float = field(default_factory=lambda: settings.SOLVER_POISSON_RTOL)
    residual_rtol: float = field(default_factory=lambda: settings.SOLVER_RESIDUAL_RTOL)
    output_every: int = 0
    max_steps: int = None

    def __post_init__(self):
        if not self.cfl > 0:
            raise SolverConfigError(f"CFL must be positive, got {self.cfl}")
        if not self.t_final >= 0:
            raise SolverConfigError(f"Final time must be non-negative, got {self.t_final}")
        if self.rk_scheme not in RK_TABLEAUX:
            raise SolverConfigError(f"Unknown Runge-Kutta scheme '{self.rk_scheme}'")
        if self.viscosity not in VISCOSITY_MODES:
            raise SolverConfigError(f"Unknown viscosity mode '{self.viscosity}'")


@dataclass
class TimeLoopState:
    """U^n with two history levels for the BDF2 residual."""

    U: np.ndarray
    t: float = 0.0
    step: int = 0
    tau: float = 0.0
    U_prev: np.ndarray = None
    U_prev2: np.ndarray = None
    t_prev: float = None
    t_prev2: float = None
    eps: np.ndarray = None
    lam: np.ndarray = None

    @property
    def tau_n(self):
        return None if self.t_prev is None else self.t - self.t_prev

    @property
    def tau_nm1(self):
        return None if self.t_prev2 is None else self.t_prev - self.t_prev2

    def push(self, U_new, t_new):
        self.U_prev2, self.t_prev2 = self.U_prev, self.t_prev
        self.U_prev, self.t_prev = self.U, self.t
        self.U, self.t = U_new, t_new
        self.step += 1


@dataclass
class StepDiagnostics:
    step: int
    t: float
    tau: float
    eps_max: float = 0.0
    eps_l_max: float = 0.0
    cap_fraction: float = 0.0
    divergence_before: float = None
    divergence_after: float = None
    delta: float = None
    viscous_limited: bool = False


@dataclass
class Problem:
    """A problem instance ready to run: mesh, flux model, initial data and boundary conditions."""

    name: str
    mesh: object
    model: object
    initial: object
    bcs: object = None
    exact: object = None


@dataclass
class RunResult:
    state: TimeLoopState
    discretization: object
    diagnostics: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    wall_time: float = 0.0


# ============================================================================
# DISCRETIZATION
# ============================================================================

FacetGroup = namedtuple('FacetGroup', ['cells', 'phi', 'weights', 'normals'])


class Discretization:
    """
    Everything the time loop reuses between steps: the P_k space, the fine P1
    space and nodal geometry, mass/stiffness/smoothing matrices and resolved
    boundary data.
    """

    def __init__(self, mesh, degree, model, bcs=None):
        self.model = model
        self.space = LagrangeSpace(mesh, degree)
        self.fine_mesh = build_fine_submesh(mesh, degree)
        self.fine_space = LagrangeSpace(self.fine_mesh, 1)
        self.geometry = build_nodal_geometry(self.space, self.fine_space)
        self.mass = consistent_mass(self.space)
        self.stiffness = self.space.stiffness_matrix()
        self.smoothing = projection_matrix(self.space)
        self.boundary = resolve_boundary(self.space, bcs)
        self.facet_groups = self._facet_groups()
        self.groups = component_groups(model, self.dim)
        logger.info(
            f"Discretization: P{degree}, {self.space.n_dofs} dofs, {mesh.n_cells} cells, "
            f"{self.fine_mesh.n_cells} fine cells"
        )

    @property
    def dim(self):
        return self.space.dim

    @property
    def is_mhd(self):
        return getattr(self.model, 'name', '') == 'ideal-mhd'

    @property
    def momentum(self):
        return slice(1, 1 + self.dim) if self.is_mhd else None

    @property
    def magnetic(self):
        return slice(2 + self.dim, 2 + 2 * self.dim)

    def _facet_groups(self):
        boundary = self.space.boundary
        groups = []
        for f in range(self.dim + 1):
            sel = np.nonzero(np.asarray(boundary.local) == f)[0]
            if not len(sel):
                continue
            weights = boundary.rules[f].weights[None, :] * boundary.measures[sel][:, None]
            groups.append(FacetGroup(np.asarray(boundary.cells)[sel], boundary.phi[f], weights, boundary.normals[sel]))
        return groups


# ============================================================================
# RIGHT-HAND SIDE AND RUNGE-KUTTA
# ============================================================================

def assemble_rhs(U, eps, disc):
    """
    F_i = -(div F(U), phi_i) - sum_K (eps_h J J^T grad U, grad phi_i)_K.

    The Galerkin term is integrated by parts, so boundary facets that are not
    periodic contribute -(F(U).n, phi_i). eps is interpolated in the P_k space
    and J J^T is the fine sub-cell metric the nodal viscosity is sized for.

    Raises:
        InvalidStateError: If U is invalid at a quadrature point (the cell is named)
    """
    space, model = disc.space, disc.model
    U_q = space.evaluate(U)
    model.validate(U_q, 'cell')
    flux_q = model.flux(U_q)
    local = np.einsum('cq,cqla,cqka->clk', space.weights, space.grads, flux_q)

    eps_values = eps.values if isinstance(eps, ViscosityField) else np.asarray(eps, dtype=float)
    if np.any(eps_values):
        eps_q = space.evaluate(eps_values)
        mapped = np.einsum('cab,cqkb->cqka', space.viscous_jjt, space.gradient(U))
        local -= np.einsum('cq,cq,cqla,cqka->clk', space.weights, eps_q, space.grads, mapped)

    rhs = space.assemble_vector(local)
    for group in disc.facet_groups:
        U_f = np.einsum('pl,slk->spk', group.phi, np.asarray(U)[space.cell_dofs[group.cells]])
        normal_flux = np.einsum('spkd,sd->spk', model.flux(U_f), group.normals)
        boundary_local = np.einsum('sp,pl,spk->slk', group.weights, group.phi, normal_flux)
        np.subtract.at(rhs, space.cell_dofs[group.cells], boundary_local)
    return rhs


def explicit_rk(U, tau, rate, tableau):
    """U + tau sum_l b_l K_l with K_l = rate(U + tau sum_j a_lj K_j)."""
    stages = []
    for a_row in tableau.a:
        W = U
        for a_lj, K in zip(a_row, stages):
            if a_lj:
                W = W + tau * a_lj * K
        stages.append(rate(W))
    return U + tau * sum(b * K for b, K in zip(tableau.b, stages))


def rk_step(state, disc, config):
    """
    U^{n+1} from U^n with eps frozen; every stage solves M K_l = F(W_l, eps).

    Raises:
        LinearSolverError: If a mass solve fails
        NonFiniteStateError: If the new state is not finite
    """
    diag = disc.mass.diagonal()

    def rate(W):
        return cg_solve(disc.mass, assemble_rhs(W, state.eps, disc), precond=diag, rel_tol=config.mass_rtol)

    U_new = explicit_rk(state.U, state.tau, rate, RK_TABLEAUX[config.rk_scheme])
    if not np.all(np.isfinite(U_new)):
        node = int(np.argmax(~np.isfinite(U_new).all(axis=1)))
        raise NonFiniteStateError(
            f"Non-finite state at node {node} in step {state.step + 1} (t={state.t:.6g}, tau={state.tau:.3e})",
            step=state.step + 1, time=state.t,
        )
    return U_new


def compute_dt(U, geometry, model, cfl, lam=None):
    """
    tau = CFL / max_i(lambda_max,i Phi_i).

    Raises:
        SolverError: If lambda_max is not finite or not positive anywhere
    """
    if lam is None:
        lam = nodal_wave_speed(U, geometry, model)
    rate = float(np.max(lam * geometry.phi))
    if not np.isfinite(rate):
        raise SolverError(f"Non-finite wave speed bound {rate}")
    if rate <= 0.0:
        raise SolverError("Wave speed bound is zero; the CFL step is unbounded")
    return cfl / rate


def viscous_spectral_bound(space, eps_values):
    """
    Upper bound of the spectral radius of M^-1 B, B the viscous operator for eps.

    The largest generalized eigenvalue of the cell pairs (B_K, M_K) over all
    cells; M_K is det_K times the reference mass matrix.
    """
    eps_q = space.evaluate(np.asarray(eps_values, dtype=float))
    mapped = np.einsum('cab,cqmb->cqma', space.viscous_jjt, space.grads)
    local = np.einsum('cq,cqla,cqma->clm', space.weights * eps_q, space.grads, mapped)
    reference_mass = np.einsum('q,ql,qm->lm', space.quadrature.weights, space.phi, space.phi)
    L_inv = np.linalg.inv(np.linalg.cholesky(reference_mass))
    scaled = L_inv @ local @ L_inv.T / space.det[:, None, None]
    scaled = 0.5 * (scaled + np.transpose(scaled, (0, 2, 1)))
    return float(np.linalg.eigvalsh(scaled)[:, -1].max())


def viscous_step_limit(space, eps_values, rk_scheme, safety=VISCOUS_STEP_SAFETY):
    """
    Largest tau keeping tau M^-1 B inside safety times the scheme's real stability interval.

    Returns inf when eps vanishes.
    """
    if not np.any(eps_values):
        return math.inf
    bound = viscous_spectral_bound(space, eps_values)
    if bound <= 0.0:
        return math.inf
    return safety * RK_REAL_STABILITY[rk_scheme] / bound


# ============================================================================
# TIME LOOP
# ============================================================================

def _notify(hooks, stage, state, diagnostics):
    for hook in hooks:
        hook(stage, state, diagnostics)


def build_viscosity(state, disc, config, residual):
    """eps for the step from U^n: the residual viscosity capped by eps^L, eps^L, or zero."""
    geometry = disc.geometry
    eps_l = first_order_viscosity(state.U, geometry, disc.model, state.t, state.lam)
    if config.viscosity == 'none':
        return ViscosityField.zeros(geometry.n_nodes, state.t), eps_l
    if config.viscosity == 'first-order':
        return eps_l, eps_l
    fields = group_magnitudes(state.U, disc.groups)
    active = resolved_groups(fields, geometry.m_fine)
    if len(active) < len(fields):
        logger.debug(f"Step {state.step + 1}: flat groups {sorted(set(fields) - set(active))} left out of the residual max")
    psi = {name: normalization(fields[name], disc.space.patch, geometry.m_fine) for name in active}
    eps = residual_viscosity(residual, psi, geometry, state.lam, state.t)
    check_viscosity_cap(eps, eps_l, VISCOSITY_CAP_RTOL)
    return eps, eps_l


def advance(state, disc, config, hooks=()):
    """
    One time step of length state.tau, in place.

    The step is shortened when the frozen viscous operator would leave the
    real stability interval of the Runge-Kutta scheme (viscous_step_limit).

    Returns:
        StepDiagnostics
    """
    diag = StepDiagnostics(step=state.step + 1, t=state.t, tau=state.tau)

    residual = None
    if config.viscosity == 'rv':
        dU = bdf2_derivative(state.U, state.U_prev, state.U_prev2, state.tau_n, state.tau_nm1)
        residual = residual_projection(state.U, dU, disc.space, disc.model, disc.smoothing, config.residual_rtol)
    _notify(hooks, 'residual', state, diag)

    eps, eps_l = build_viscosity(state, disc, config, residual)
    state.eps = eps.values
    diag.eps_max, diag.eps_l_max = eps.max, eps_l.max
    diag.cap_fraction = float(np.mean(eps.values >= eps_l.values * (1.0 - VISCOSITY_CAP_RTOL))) if eps.max > 0 else 0.0
    limit = viscous_step_limit(disc.space, state.eps, config.rk_scheme)
    if state.tau > limit:
        logger.debug(f"Step {diag.step}: tau {state.tau:.3e} cut to the viscous limit {limit:.3e}")
        state.tau = diag.tau = limit
        diag.viscous_limited = True
    _notify(hooks, 'viscosity', state, diag)

    U_new = rk_step(state, disc, config)
    t_new = state.t + state.tau
    _notify(hooks, 'rk', state, diag)

    if config.cleaning and disc.is_mhd:
        B, report = clean_divergence(
            U_new[:, disc.magnetic], disc.space, disc.mass, disc.stiffness, config.poisson_rtol, config.mass_rtol
        )
        U_new[:, disc.magnetic] = B
        diag.divergence_before, diag.divergence_after = report.divergence_before, report.divergence_after
    _notify(hooks, 'cleaning', state, diag)

    U_new = apply_bcs(U_new, t_new, disc.boundary, disc.momentum)
    disc.model.validate(U_new, 'node')
    state.push(U_new, t_new)
    if disc.is_mhd and disc.dim == 2:
        diag.delta = divergence_error(U_new[:, disc.magnetic], disc.space, disc.mass, config.mass_rtol).delta
    _notify(hooks, 'bcs', state, diag)

    state.lam = nodal_wave_speed(state.U, disc.geometry, disc.model)
    _notify(hooks, 'lambda_max', state, diag)

    state.tau = compute_dt(state.U, disc.geometry, disc.model, config.cfl, state.lam)
    _notify(hooks, 'dt', state, diag)
    return diag


def initial_state(problem, disc, config):
    U0 = disc.space.interpolate(problem.initial)
    U0 = apply_bcs(U0, 0.0, disc.boundary, disc.momentum)
    disc.model.validate(U0, 'node')
    state = TimeLoopState(U=U0, eps=np.zeros(disc.space.n_dofs))
    state.lam = nodal_wave_speed(U0, disc.geometry, disc.model)
    state.tau = compute_dt(U0, disc.geometry, disc.model, config.cfl, state.lam)
    return state


def run(problem, config, hooks=(), state=None, discretization=None):
    """
    Integrate problem from its initial data (or a restored state) to config.t_final.

    The last step is shortened to land on t_final exactly.

    Raises:
        SolverError, InvalidStateError, LinearSolverError, ViscosityError: On any stage failure
    """
    started = time.monotonic()
    disc = discretization or Discretization(problem.mesh, config.degree, problem.model, problem.bcs)
    if state is None:
        state = initial_state(problem, disc, config)
    result = RunResult(state, disc)
    if config.output_every:
        result.frames.append((state.t, state.U.copy(), state.eps.copy()))

    logger.info(
        f"Running {problem.name}: P{config.degree}, {disc.space.n_dofs} dofs, CFL {config.cfl}, "
        f"t_final {config.t_final}, viscosity {config.viscosity}, {config.rk_scheme}"
    )
    while state.t < config.t_final:
        if config.max_steps is not None and state.step >= config.max_steps:
            logger.info(f"Stopping at max_steps={config.max_steps}, t={state.t:.6g}")
            break
        remaining = config.t_final - state.t
        if state.tau >= remaining:
            state.tau = remaining
        try:
            diag = advance(state, disc, config, hooks)
        except Exception:
            logger.exception(f"{problem.name}: step {state.step + 1} failed at t={state.t:.6g}")
            raise
        last = diag.tau >= remaining
        if last:
            state.t = config.t_final
        result.diagnostics.append(diag)

        if config.output_every and (state.step % config.output_every == 0 or last):
            result.frames.append((state.t, state.U.copy(), state.eps.copy()))
            logger.info(
                f"{problem.name}: step {state.step}, t={state.t:.6g}, tau={diag.tau:.3e}, "
                f"max eps {diag.eps_max:.3e} (cap {diag.eps_l_max:.3e})"
            )

    result.wall_time = time.monotonic() - started
    logger.info(f"{problem.name}: finished {state.step} steps at t={state.t:.6g} in {result.wall_time:.1f}s")
    return result


# ============================================================================
# CHECKPOINTS
# ============================================================================

def dump_checkpoint(state, path):
    """
    Write a TimeLoopState with numpy.savez.

    Keys, in order: U, U_prev, U_prev2 (empty arrays when absent), times =
    [t, t_prev, t_prev2] (NaN when absent), step, tau, eps.
    """
    empty = np.empty((0,) + state.U.shape[1:])
    np.savez(
        path,
        U=state.U,
        U_prev=empty if state.U_prev is None else state.U_prev,
        U_prev2=empty if state.U_prev2 is None else state.U_prev2,
        times=np.array([state.t, np.nan if state.t_prev is None else state.t_prev,
                        np.nan if state.t_prev2 is None else state.t_prev2]),
        step=np.array(state.step),
        tau=np.array(state.tau),
        eps=np.zeros(len(state.U)) if state.eps is None else state.eps,
    )
    logger.info(f"Checkpoint written to {path} (step {state.step}, t={state.t:.6g})")


def load_checkpoint(path):
    """Inverse of dump_checkpoint; lambda_max is recomputed by the caller."""
    with np.load(path) as data:
        missing = [k for k in CHECKPOINT_KEYS if k not in data]
        if missing:
            raise SolverError(f"Checkpoint {path} lacks {', '.join(missing)}")
        times = data['times']
        state = TimeLoopState(
            U=data['U'].copy(),
            t=float(times[0]),
            step=int(data['step']),
            tau=float(data['tau']),
            U_prev=data['U_prev'].copy() if len(data['U_prev']) else None,
            U_prev2=data['U_prev2'].copy() if len(data['U_prev2']) else None,
            t_prev=None if np.isnan(times[1]) else float(times[1]),
            t_prev2=None if np.isnan(times[2]) else float(times[2]),
            eps=data['eps'].copy(),
        )
    return state


def restore_state(path, disc):
    """Load a checkpoint and recompute lambda_max on disc."""
    state = load_checkpoint(path)
    if state.U.shape[0] != disc.space.n_dofs:
        raise SolverError(f"Checkpoint has {state.U.shape[0]} dofs, discretization has {disc.space.n_dofs}")
    state.lam = nodal_wave_speed(state.U, disc.geometry, disc.model)
    return state
