"""
Projection divergence cleaning of the magnetic field and the divergence error.
"""

import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from linalg.utils import cg_solve
from mhd_stabilizer.constants import CURL_NORM_FLOOR

logger = logging.getLogger(__name__)


@dataclass
class CleaningReport:
    divergence_before: float
    divergence_after: float

    @property
    def increased(self):
        return self.divergence_after > self.divergence_before


@dataclass
class DivergenceError:
    delta: float
    div_norm: float
    curl_norm: float
    degenerate: bool = False


def _mass_solve(mass, rhs, rel_tol):
    return cg_solve(mass, rhs, precond=mass.diagonal(), rel_tol=rel_tol)


def projected_divergence(B, space, mass, rel_tol=None):
    """Nodal div B_h in X_h solving (div B_h, phi) = (div B, phi)."""
    if rel_tol is None:
        rel_tol = settings.SOLVER_MASS_RTOL
    div_q = np.trace(space.gradient(B), axis1=-2, axis2=-1)
    return _mass_solve(mass, space.load_vector(div_q), rel_tol)


def l2_norm(values, mass):
    """||v_h||_L2 from nodal values and the consistent mass matrix."""
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(max(np.sum(values * (mass @ values)), 0.0)))


def clean_divergence(B, space, mass, stiffness, poisson_rtol=None, mass_rtol=None):
    """
    B = B' - P(grad psi) with (grad psi, grad v) = -(div B', v) for all v.

    psi is fixed up to a constant by mean-zero projection. The gradient is
    L2-projected onto the vector P_k space with the consistent mass matrix.

    Returns:
        tuple: (corrected B, CleaningReport)

    Raises:
        LinearSolverError: If the Poisson or the projection solve fails
    """
    if poisson_rtol is None:
        poisson_rtol = settings.SOLVER_POISSON_RTOL
    if mass_rtol is None:
        mass_rtol = settings.SOLVER_MASS_RTOL
    B = np.asarray(B, dtype=float)
    div_q = np.trace(space.gradient(B), axis1=-2, axis2=-1)
    div_load = space.load_vector(div_q)
    before = l2_norm(_mass_solve(mass, div_load, mass_rtol), mass)

    psi = cg_solve(stiffness, -div_load, precond=stiffness.diagonal(), rel_tol=poisson_rtol, project_mean=True)
    grad_psi = _mass_solve(mass, space.load_vector(space.gradient(psi)), mass_rtol)
    cleaned = B - grad_psi

    after = l2_norm(projected_divergence(cleaned, space, mass, mass_rtol), mass)
    report = CleaningReport(before, after)
    if report.increased:
        logger.warning(f"Divergence cleaning increased the projected divergence: {before:.6e} -> {after:.6e}")
    return cleaned, report


def divergence_error(B, space, mass, rel_tol=None):
    """
    delta = ||div B_h||_L2 / ||curl_z B_h||_L2 with div B_h the mass projection.

    A vanishing curl is replaced by CURL_NORM_FLOOR and flagged as degenerate.
    """
    if space.dim != 2:
        raise ValueError(f"The divergence error is defined for d=2, got d={space.dim}")
    div_norm = l2_norm(projected_divergence(B, space, mass, rel_tol), mass)
    grad = space.gradient(B)
    curl = grad[..., 1, 0] - grad[..., 0, 1]
    curl_norm = float(np.sqrt(np.sum(space.weights * curl * curl)))
    b_norm = float(np.sqrt(np.sum(space.weights[..., None] * space.evaluate(B) ** 2)))
    floor = CURL_NORM_FLOOR * max(b_norm, 1.0)
    if curl_norm <= floor:
        logger.warning(f"Curl norm {curl_norm:.3e} is below {floor:.3e}; divergence error uses the guarded denominator")
        return DivergenceError(div_norm / floor, div_norm, curl_norm, degenerate=True)
    return DivergenceError(div_norm / curl_norm, div_norm, curl_norm)
