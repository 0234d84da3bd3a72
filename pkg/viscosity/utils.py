"""
Nodal artificial viscosity.

First-order viscosity eps^L_i = C_i m_i^fine lambda_i Phi_i, the smoothed
PDE residual, its normalization Psi_i and the residual viscosity
eps^RV_i = C_i min(lambda_i Phi_i, max_x R_x,i / Psi_i(x)) m_i^fine.
One coefficient per node is shared by all conserved components.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from elements.utils import consistent_mass
from linalg.utils import cg_solve
from mhd_stabilizer.constants import FLAT_GROUP_RTOL, PSI_SAFETY_FACTOR, THETA_RANGE_GUARD

logger = logging.getLogger(__name__)


class ViscosityError(Exception):
    """Base exception for viscosity construction errors"""
    pass


class ViscosityCapError(ViscosityError):
    """Raised when the residual viscosity exceeds the first-order cap"""
    pass


class StepSizeError(ViscosityError):
    """Raised for non-positive time step sizes in the BDF history"""
    pass


@dataclass
class ViscosityField:
    values: np.ndarray
    time: float = 0.0
    kind: str = 'first-order'

    @property
    def max(self):
        return float(self.values.max()) if len(self.values) else 0.0

    @classmethod
    def zeros(cls, n, time=0.0):
        return cls(np.zeros(n), time, 'none')


@dataclass
class ResidualField:
    """Smoothed residual per component and per component group (rho, m, E, B)."""

    components: np.ndarray
    groups: dict = field(default_factory=dict)


def component_groups(model, d):
    """Index groups of the conserved components entering the residual max."""
    if getattr(model, 'name', '') == 'ideal-mhd':
        return {
            'rho': [0],
            'm': list(range(1, 1 + d)),
            'E': [1 + d],
            'B': list(range(2 + d, 2 + 2 * d)),
        }
    return {f"u{c}": [c] for c in range(model.n_components(d))}


def group_magnitudes(values, groups):
    """Scalar per-node field of every group: the value itself or the Euclidean norm."""
    return {
        name: values[:, idx[0]] if len(idx) == 1 else np.linalg.norm(values[:, idx], axis=1)
        for name, idx in groups.items()
    }


# ============================================================================
# FIRST-ORDER VISCOSITY
# ============================================================================

def nodal_wave_speed(U, geometry, model):
    """lambda_max,i over the fine patch of every node."""
    return geometry.fine_patch.patch_max(model.max_speed(U))


def first_order_viscosity(U, geometry, model, time=0.0, lam=None):
    """
    eps^L_i = C_i m_i^fine lambda_max,i Phi_i.

    Args:
        U: nodal conserved states
        geometry: NodalGeometry of the fine submesh
        model: flux model providing max_speed
        lam: precomputed lambda_max (optional)

    Raises:
        InvalidStateError: Propagated from the wave-speed evaluation
    """
    if lam is None:
        lam = nodal_wave_speed(U, geometry, model)
    values = geometry.C * geometry.m_fine * lam * geometry.phi
    return ViscosityField(values, time, 'first-order')


# ============================================================================
# RESIDUAL
# ============================================================================

def bdf2_derivative(U_n, U_nm1=None, U_nm2=None, tau_n=None, tau_nm1=None):
    """
    Variable-step BDF2 time derivative at t^n.

    tau_n = t^n - t^{n-1} and tau_nm1 = t^{n-1} - t^{n-2}. Falls back to
    BDF1 with one history level and to zero with none.

    Raises:
        StepSizeError: If a needed step size is not positive
    """
    U_n = np.asarray(U_n, dtype=float)
    if U_nm1 is None:
        return np.zeros_like(U_n)
    if tau_n is None or not tau_n > 0:
        raise StepSizeError(f"Non-positive step size tau_n={tau_n}")
    if U_nm2 is None:
        return (U_n - U_nm1) / tau_n
    if tau_nm1 is None or not tau_nm1 > 0:
        raise StepSizeError(f"Non-positive step size tau_n-1={tau_nm1}")
    w = tau_n / tau_nm1
    return ((1.0 + 2.0 * w) / (1.0 + w) * U_n - (1.0 + w) * U_nm1 + w * w / (1.0 + w) * U_nm2) / tau_n


def projection_matrix(space):
    """M + sum_K (|K|^{2/d}/k) (grad R, grad V)_K."""
    smoothing = space.cell_measures ** (2.0 / space.dim) / space.degree
    return (consistent_mass(space) + space.stiffness_matrix(smoothing)).tocsr()


def residual_projection(U, dU, space, model, matrix=None, rel_tol=None):
    """
    Smoothed residual R solving (R, V) + sum_K (|K|^{2/d}/k)(grad R, grad V)_K = (|D_tau U + div F(U)|, V).

    Negative nodal undershoots of the projection are clipped to zero.

    Raises:
        InvalidStateError: If U is invalid at a quadrature point
        LinearSolverError: If the projection solve fails
    """
    if rel_tol is None:
        rel_tol = settings.SOLVER_RESIDUAL_RTOL
    if matrix is None:
        matrix = projection_matrix(space)
    U_q = space.evaluate(U)
    model.validate(U_q, 'cell')
    residual = np.abs(space.evaluate(dU) + model.divergence(U_q, space.gradient(U)))
    rhs = space.load_vector(residual)
    R = np.maximum(cg_solve(matrix, rhs, precond=matrix.diagonal(), rel_tol=rel_tol), 0.0)
    groups = component_groups(model, space.dim)
    return ResidualField(R, group_magnitudes(R, groups))


# ============================================================================
# NORMALIZATION
# ============================================================================

def smoothness_indicator(x, patch):
    """theta_i = patch range / global range; 0 when the global range is negligible."""
    x = np.asarray(x, dtype=float)
    x_inf = float(np.abs(x).max()) if len(x) else 0.0
    global_range = float(x.max() - x.min()) if len(x) else 0.0
    if global_range <= THETA_RANGE_GUARD * x_inf or global_range == 0.0:
        return np.zeros_like(x)
    return (patch.patch_max(x) - patch.patch_min(x)) / global_range


def global_deviation(x, mass=None):
    """||x - mean(x)||_inf, the mean weighted by mass (lumped masses) when given."""
    x = np.asarray(x, dtype=float)
    if mass is None:
        mean = float(x.mean())
    else:
        mean = float(np.dot(mass, x) / np.sum(mass))
    return float(np.abs(x - mean).max())


def normalization(x, patch, mass=None, safety=PSI_SAFETY_FACTOR):
    """
    Psi_i = 1/4 ||x - mean(x)||_inf (1 - theta_i) + safety ||x||_inf.

    The mean is weighted by mass (lumped masses) when given.
    """
    x = np.asarray(x, dtype=float)
    theta = smoothness_indicator(x, patch)
    return 0.25 * global_deviation(x, mass) * (1.0 - theta) + safety * float(np.abs(x).max())


def resolved_groups(fields, mass=None, rtol=FLAT_GROUP_RTOL):
    """
    Names of the groups whose global deviation exceeds rtol ||x||_inf.

    Flat groups (the constant density of the vortex, an unperturbed guide
    field, an identically zero field) do not enter the max over groups.
    """
    names = []
    for name, x in fields.items():
        x = np.asarray(x, dtype=float)
        scale = float(np.abs(x).max()) if len(x) else 0.0
        if scale > 0.0 and global_deviation(x, mass) > rtol * scale:
            names.append(name)
    return names


def residual_viscosity(residual, psi, geometry, lam, time=0.0):
    """
    eps^RV_i = C_i min(lambda_i Phi_i, max_x R_x,i / Psi_i(x)) m_i^fine.

    Args:
        residual: ResidualField
        psi: dict group name -> nodal Psi; only these groups enter the max
        geometry: NodalGeometry
        lam: nodal lambda_max
    """
    ratio = np.zeros(geometry.n_nodes)
    for name, scale in psi.items():
        R = residual.groups[name]
        safe = np.where(scale > 0.0, scale, 1.0)
        ratio = np.maximum(ratio, np.where(scale > 0.0, R / safe, np.where(R > 0.0, np.inf, 0.0)))
    cap = lam * geometry.phi
    values = geometry.C * np.minimum(cap, ratio) * geometry.m_fine
    field_ = ViscosityField(values, time, 'rv')
    active = float(np.mean(ratio >= cap)) if len(cap) else 0.0
    logger.debug(f"Residual viscosity at t={time:.6g}: max {field_.max:.3e}, cap active at {active:.1%} of nodes")
    return field_


def check_viscosity_cap(eps_rv, eps_l, rtol):
    """
    Raises:
        ViscosityCapError: If eps^RV_i > eps^L_i anywhere (beyond rtol)
    """
    excess = eps_rv.values - eps_l.values * (1.0 + rtol)
    if np.any(excess > 0.0):
        node = int(np.argmax(excess))
        raise ViscosityCapError(
            f"Residual viscosity {eps_rv.values[node]:.6e} exceeds first-order cap {eps_l.values[node]:.6e} at node {node}"
        )


def lax_friedrichs_deviation(space, geometry, lam):
    """
    Largest relative gap between eps^L_i J_K J_K^T and (1/2) lambda_i Phi_i h_K^2 I
    over the P1 cells K around every node, with h_K^2 = trace(J_K J_K^T)/d.

    In 1D the target is the Lax-Friedrichs coefficient (1/2) h lambda; in 2D
    it is reached on equilateral meshes.
    """
    eps = geometry.C * geometry.m_fine * lam * geometry.phi
    d = space.dim
    h2 = np.trace(space.jjt, axis1=1, axis2=2) / d
    dofs = space.cell_dofs
    target = 0.5 * (lam * geometry.phi)[dofs] * h2[:, None]
    actual = eps[dofs][:, :, None, None] * space.jjt[:, None]
    gap = np.abs(actual - target[:, :, None, None] * np.eye(d)).max(axis=(2, 3))
    return float((gap / target).max())
