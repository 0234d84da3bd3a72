"""
Quadrature rules and Lagrange shape functions on the unit reference simplex.

Reference simplex: [0, 1] in 1D, the triangle (0,0), (1,0), (0,1) in 2D.
Triangle rules are collapsed Gauss-Legendre products (Duffy map), which are
exact for any requested total degree at the cost of a few extra points.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from mesh.utils import MeshError, lattice_points


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self):
        return len(self.weights)


def gauss_interval(n):
    """n-point Gauss-Legendre rule on [0, 1], weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def simplex_quadrature(d, degree):
    """
    Rule on the reference simplex integrating total degree <= degree exactly.

    Weights sum to the reference measure 1/d!.
    """
    if d == 1:
        n = max(1, math.ceil((degree + 1) / 2))
        x, w = gauss_interval(n)
        points, weights = x.reshape(-1, 1), w
    elif d == 2:
        # the collapsed direction carries one extra power from the Jacobian
        n = max(1, math.ceil((degree + 2) / 2))
        u, wu = gauss_interval(n)
        v, wv = gauss_interval(n)
        U, V = np.meshgrid(u, v, indexing='ij')
        WU, WV = np.meshgrid(wu, wv, indexing='ij')
        points = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
        weights = (WU * WV * (1.0 - U)).ravel()
    else:
        raise MeshError(f"Dimension {d} is not supported")
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, degree)


def reference_vertices(d):
    return np.vstack([np.zeros(d), np.eye(d)])


@lru_cache(maxsize=None)
def facet_quadrature(d, local_facet, degree):
    """
    Points on the facet opposite local vertex local_facet, in reference coordinates.

    Weights sum to 1 and must be scaled by the physical facet measure.
    """
    verts = reference_vertices(d)
    if d == 1:
        points = verts[[1 - local_facet]]
        weights = np.ones(1)
    else:
        a, b = [v for v in range(d + 1) if v != local_facet]
        s, weights = gauss_interval(max(1, math.ceil((degree + 1) / 2)))
        points = (1.0 - s)[:, None] * verts[a] + s[:, None] * verts[b]
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, degree)


def _monomial_exponents(d, k):
    if d == 1:
        return np.array([[a] for a in range(k + 1)], dtype=np.int64)
    return np.array([[a, b] for a in range(k + 1) for b in range(k + 1 - a)], dtype=np.int64)


def _monomials(points, exponents):
    return np.prod(np.power(points[:, None, :], exponents[None, :, :]), axis=2)


def _monomial_gradients(points, exponents):
    d = points.shape[1]
    out = np.empty((len(points), len(exponents), d))
    for a in range(d):
        lowered = exponents.copy()
        lowered[:, a] = np.maximum(lowered[:, a] - 1, 0)
        out[:, :, a] = exponents[None, :, a] * _monomials(points, lowered)
    return out


class LagrangeBasis:
    """Nodal P_k basis on the reference simplex at the principal-lattice nodes."""

    def __init__(self, d, k):
        self.dim = d
        self.degree = k
        self.lattice = lattice_points(d, k)
        self.nodes = self.lattice[:, 1:] / k
        self.exponents = _monomial_exponents(d, k)
        vandermonde = _monomials(self.nodes, self.exponents)
        self.coefficients = np.linalg.inv(vandermonde)

    @property
    def size(self):
        return len(self.nodes)

    def values(self, points):
        """Shape values, (npoints, nloc)."""
        return _monomials(np.asarray(points, dtype=float), self.exponents) @ self.coefficients

    def gradients(self, points):
        """Reference gradients, (npoints, nloc, d)."""
        grads = _monomial_gradients(np.asarray(points, dtype=float), self.exponents)
        return np.einsum('pjd,jl->pld', grads, self.coefficients)
