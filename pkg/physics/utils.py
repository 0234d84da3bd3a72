"""
Ideal MHD constitutive relations.

States are arrays whose last axis holds the conserved variables
U = (rho, m_1..m_d, E, B_1..B_d). Every function is vectorized over the
leading axes (nodes, or cells x quadrature points).
"""

import logging
from collections import namedtuple

import numpy as np

logger = logging.getLogger(__name__)


WaveSpeeds = namedtuple('WaveSpeeds', ['fast', 'slow', 'alfven', 'eigenvalues'])


class InvalidStateError(Exception):
    """Raised for states with non-positive density or internal energy"""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


# ============================================================================
# STATE LAYOUT
# ============================================================================

def n_components(d):
    return 2 * d + 2


def state_dim(U):
    return (np.shape(U)[-1] - 2) // 2


def split_state(U):
    """(rho, m, E, B) views of a conserved state array."""
    d = state_dim(U)
    return U[..., 0], U[..., 1:1 + d], U[..., 1 + d], U[..., 2 + d:]


def conserved_from_primitive(rho, u, p, B, gamma):
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    B = np.asarray(B, dtype=float)
    E = np.asarray(p, dtype=float) / (gamma - 1.0) + 0.5 * rho * np.sum(u * u, axis=-1) + 0.5 * np.sum(B * B, axis=-1)
    return np.concatenate([rho[..., None], rho[..., None] * u, E[..., None], B], axis=-1)


def primitive_from_conserved(U, gamma):
    rho, m, _, B = split_state(U)
    return rho, m / rho[..., None], pressure(U, gamma), B


def internal_energy(U):
    """E - |m|^2/(2 rho) - |B|^2/2 (volumetric)."""
    rho, m, E, B = split_state(U)
    return E - 0.5 * np.sum(m * m, axis=-1) / rho - 0.5 * np.sum(B * B, axis=-1)


def _raise_first(bad, values, what, location):
    index = np.unravel_index(int(np.argmax(bad)), bad.shape)
    value = values[index]
    where = f"{location} {int(index[0])}" if len(index) else location
    raise InvalidStateError(f"{what} {value:.6e} at {where}", index=int(index[0]) if len(index) else None)


def validate_states(U, location='node'):
    """
    Raise InvalidStateError naming the first offending node/cell.

    For arrays shaped (nc, nq, ncomp) the reported index is the cell.
    """
    rho = U[..., 0]
    bad = ~(rho > 0.0)
    if np.any(bad):
        _raise_first(bad, rho, 'Non-positive density', location)
    e = internal_energy(U)
    bad = ~(e > 0.0)
    if np.any(bad):
        _raise_first(bad, e, 'Non-positive internal energy', location)


def pressure(U, gamma):
    """
    p = (gamma - 1)(E - |m|^2/(2 rho) - |B|^2/2).

    Raises:
        InvalidStateError: If some density is not positive
    """
    rho = U[..., 0]
    bad = ~(rho > 0.0)
    if np.any(bad):
        _raise_first(bad, rho, 'Non-positive density', 'node')
    return (gamma - 1.0) * internal_energy(U)


# ============================================================================
# FLUX
# ============================================================================

def flux(U, gamma):
    """
    Ideal MHD flux, shape (..., 2d+2, d).

    Rows: m, m(x)u + (p + |B|^2/2) I - B(x)B, u(E + p + |B|^2/2) - (u.B) B,
    B(x)u - u(x)B.
    """
    d = state_dim(U)
    rho, m, E, B = split_state(U)
    u = m / rho[..., None]
    total = pressure(U, gamma) + 0.5 * np.sum(B * B, axis=-1)
    uB = np.sum(u * B, axis=-1)
    F = np.empty(U.shape + (d,))
    F[..., 0, :] = m
    F[..., 1:1 + d, :] = m[..., :, None] * u[..., None, :] - B[..., :, None] * B[..., None, :]
    F[..., 1:1 + d, :] += total[..., None, None] * np.eye(d)
    F[..., 1 + d, :] = u * (E + total)[..., None] - uB[..., None] * B
    F[..., 2 + d:, :] = B[..., :, None] * u[..., None, :] - u[..., :, None] * B[..., None, :]
    return F


def flux_divergence(U, grad_U, gamma):
    """
    div F(U_h) by the chain rule from U and its gradient.

    Args:
        U: states, (..., 2d+2)
        grad_U: gradients, (..., 2d+2, d)

    Returns:
        np.ndarray: (..., 2d+2)
    """
    d = state_dim(U)
    rho, m, E, B = split_state(U)
    g_rho = grad_U[..., 0, :]
    g_m = grad_U[..., 1:1 + d, :]
    g_E = grad_U[..., 1 + d, :]
    g_B = grad_U[..., 2 + d:, :]

    u = m / rho[..., None]
    g_u = (g_m - u[..., :, None] * g_rho[..., None, :]) / rho[..., None, None]
    total = pressure(U, gamma) + 0.5 * np.sum(B * B, axis=-1)
    B_gB = np.einsum('...a,...ab->...b', B, g_B)
    g_p = (gamma - 1.0) * (
        g_E
        - np.einsum('...a,...ab->...b', u, g_m)
        + 0.5 * np.sum(u * u, axis=-1)[..., None] * g_rho
        - B_gB
    )
    g_total = g_p + B_gB
    div_u = np.trace(g_u, axis1=-2, axis2=-1)
    div_B = np.trace(g_B, axis1=-2, axis2=-1)
    uB = np.sum(u * B, axis=-1)
    g_uB = np.einsum('...ab,...a->...b', g_u, B) + np.einsum('...a,...ab->...b', u, g_B)

    out = np.empty(U.shape)
    out[..., 0] = np.trace(g_m, axis1=-2, axis2=-1)
    out[..., 1:1 + d] = (
        np.einsum('...ab,...b->...a', g_m, u)
        + m * div_u[..., None]
        + g_total
        - np.einsum('...ab,...b->...a', g_B, B)
        - B * div_B[..., None]
    )
    out[..., 1 + d] = (
        div_u * (E + total)
        + np.sum(u * (g_E + g_total), axis=-1)
        - np.sum(g_uB * B, axis=-1)
        - uB * div_B
    )
    out[..., 2 + d:] = (
        np.einsum('...ab,...b->...a', g_B, u)
        + B * div_u[..., None]
        - np.einsum('...ab,...b->...a', g_u, B)
        - u * div_B[..., None]
    )
    return out


# ============================================================================
# WAVE SPEEDS
# ============================================================================

def _sound_and_alfven(U, gamma):
    rho, m, _, B = split_state(U)
    p = pressure(U, gamma)
    bad = ~(p >= 0.0)
    if np.any(bad):
        _raise_first(bad, p, 'Negative pressure', 'node')
    return rho, m / rho[..., None], gamma * p / rho, B


def wave_speeds(U, gamma, e):
    """
    Fast, slow and Alfven speeds along the unit direction e and the eight eigenvalues.

    Eigenvalues are ordered u.e - c_f, u.e - |b|, u.e - c_s, u.e, u.e,
    u.e + c_s, u.e + |b|, u.e + c_f with b = B.e / sqrt(rho).
    """
    rho, u, a2, B = _sound_and_alfven(U, gamma)
    e = np.asarray(e, dtype=float)
    b = np.sum(B * e, axis=-1) / np.sqrt(rho)
    q = a2 + np.sum(B * B, axis=-1) / rho
    disc = np.sqrt(np.maximum(q * q - 4.0 * a2 * b * b, 0.0))
    fast = np.sqrt(0.5 * (q + disc))
    slow = np.sqrt(np.maximum(0.5 * (q - disc), 0.0))
    alfven = np.abs(b)
    un = np.sum(u * e, axis=-1)
    eigenvalues = np.stack(
        [un - fast, un - alfven, un - slow, un, un, un + slow, un + alfven, un + fast], axis=-1
    )
    return WaveSpeeds(fast, slow, alfven, eigenvalues)


def fast_speed(U, gamma, e):
    return wave_speeds(U, gamma, e).fast


def max_wave_speed(U, gamma):
    """Direction-free bound |u| + sqrt(a^2 + |B|^2/rho) >= max_e |u.e| + c_f(e)."""
    rho, u, a2, B = _sound_and_alfven(U, gamma)
    return np.linalg.norm(u, axis=-1) + np.sqrt(a2 + np.sum(B * B, axis=-1) / rho)


def lambda_max_node(U, patch, gamma):
    """lambda_max,i: the largest wave-speed bound over the patch nodes I(S_i), i included."""
    return patch.patch_max(max_wave_speed(U, gamma))


# ============================================================================
# FLUX MODELS
# ============================================================================

class IdealMHD:
    """Flux model consumed by the solver."""

    name = 'ideal-mhd'

    def __init__(self, gamma):
        self.gamma = gamma

    def n_components(self, d):
        return n_components(d)

    def validate(self, U, location='node'):
        validate_states(U, location)

    def flux(self, U):
        return flux(U, self.gamma)

    def divergence(self, U, grad_U):
        return flux_divergence(U, grad_U, self.gamma)

    def max_speed(self, U):
        return max_wave_speed(U, self.gamma)


class LinearAdvection:
    """Componentwise transport with a constant velocity."""

    name = 'linear-advection'

    def __init__(self, velocity, components=1):
        self.velocity = np.atleast_1d(np.asarray(velocity, dtype=float))
        self.components = components

    def n_components(self, d):
        return self.components

    def validate(self, U, location='node'):
        if not np.all(np.isfinite(U)):
            _raise_first(~np.isfinite(U).all(axis=-1), U[..., 0], 'Non-finite value', location)

    def flux(self, U):
        return U[..., :, None] * self.velocity

    def divergence(self, U, grad_U):
        return grad_U @ self.velocity

    def max_speed(self, U):
        return np.full(U.shape[:-1], float(np.linalg.norm(self.velocity)))
