"""
P_k Lagrange spaces and the nodal geometric factors of the viscosity.

LagrangeSpace precomputes everything assembly needs per cell (shape values,
physical gradients, quadrature weights and points, the equilateral metric
J_K J_K^T) as dense numpy arrays so that element loops become einsum calls.
"""

import logging
import math
from collections import namedtuple
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from linalg.utils import assemble_csr
from mesh.utils import (
    EmptyPatchError,
    PatchTable,
    UnsupportedDegreeError,
    affine_maps,
    equilateral_jacobian,
    equilateral_jacobians,
    lagrange_nodes,
    match_periodic_nodes,
    periodic_dof_map,
    reference_measure,
)
from mhd_stabilizer.constants import SUPPORTED_DEGREES

from .quadrature_utils import LagrangeBasis, facet_quadrature, simplex_quadrature

logger = logging.getLogger(__name__)


StencilIntegrals = namedtuple('StencilIntegrals', ['matrix', 'measure', 'alpha', 'gamma'])


class LagrangeSpace:
    """
    Continuous P_k space on a Triangulation, periodic nodes identified.

    Attributes:
        node_coords: geometric Lagrange nodes (periodic copies kept)
        cell_nodes: cell -> geometric node map
        cell_dofs: cell -> degree of freedom map
        dof_coords: coordinates of each dof's representative node
        phi: shape values at quadrature points, (nq, nloc)
        grads: physical gradients, (nc, nq, nloc, d)
        weights: physical quadrature weights, (nc, nq)
        points: physical quadrature points, (nc, nq, d)
        jjt: equilateral metric J_K J_K^T, (nc, d, d)
        viscous_jjt: metric of the fine sub-cells, J_K J_K^T / k^2, used by
            the viscous form; every principal-lattice sub-cell is K scaled by 1/k
    """

    def __init__(self, mesh, degree, quadrature_degree=None):
        if degree not in SUPPORTED_DEGREES:
            raise UnsupportedDegreeError(f"Polynomial degree {degree} is not supported")
        self.mesh = mesh
        self.degree = degree
        self.dim = mesh.dim
        self.basis = LagrangeBasis(self.dim, degree)

        if degree == 1:
            self.node_coords, self.cell_nodes = mesh.vertices, mesh.cells
            pairs = mesh.periodic_pairs
        else:
            self.node_coords, self.cell_nodes = lagrange_nodes(mesh, degree)
            pairs = match_periodic_nodes(self.node_coords, mesh.periods)
        self.dof_of_node, representatives = periodic_dof_map(len(self.node_coords), pairs)
        self.cell_dofs = self.dof_of_node[self.cell_nodes]
        self.n_dofs = len(representatives)
        self.dof_coords = self.node_coords[representatives]

        self.quadrature = simplex_quadrature(self.dim, quadrature_degree or 2 * degree + 1)
        self.A, det = affine_maps(mesh.vertices, mesh.cells)
        self.det = np.abs(det)
        self.A_inv = np.linalg.inv(self.A)
        self.cell_measures = self.det * reference_measure(self.dim)
        self.phi, self.grads, self.weights, self.points = self.rule_data(self.quadrature)
        J = equilateral_jacobians(mesh.vertices, mesh.cells)
        self.jjt = J @ np.transpose(J, (0, 2, 1))
        self.viscous_jjt = self.jjt / degree ** 2
        self.patch = PatchTable(self.cell_dofs, self.n_dofs, self.cell_measures)
        logger.debug(f"P{degree} space: {self.n_dofs} dofs on {mesh.n_cells} cells, {self.quadrature.size} quadrature points")

    @property
    def n_cells(self):
        return len(self.cell_dofs)

    @property
    def n_local(self):
        return self.cell_dofs.shape[1]

    def rule_data(self, rule):
        """Shape values, physical gradients, weights and points for another rule."""
        phi = self.basis.values(rule.points)
        ref_grads = self.basis.gradients(rule.points)
        grads = np.einsum('cba,qlb->cqla', self.A_inv, ref_grads)
        weights = rule.weights[None, :] * self.det[:, None]
        origin = self.mesh.vertices[self.mesh.cells[:, 0]]
        points = np.einsum('cab,qb->cqa', self.A, rule.points) + origin[:, None, :]
        return phi, grads, weights, points

    # ------------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------------

    def interpolate(self, fn):
        """Nodal interpolant of fn(x) where x is (n_dofs, d)."""
        return np.asarray(fn(self.dof_coords), dtype=float)

    def cell_values(self, U):
        return np.asarray(U)[self.cell_dofs]

    def evaluate(self, U, phi=None):
        """U at quadrature points, (nc, nq, ...)."""
        phi = self.phi if phi is None else phi
        return np.einsum('ql,cl...->cq...', phi, self.cell_values(U))

    def gradient(self, U, grads=None):
        """Gradient of U at quadrature points, (nc, nq, ..., d)."""
        grads = self.grads if grads is None else grads
        local = self.cell_values(U)
        return np.moveaxis(np.einsum('cqla,cl...->cqa...', grads, local), 2, -1)

    # ------------------------------------------------------------------------
    # Assembly
    # ------------------------------------------------------------------------

    def assemble_vector(self, local):
        """Scatter-add cell contributions (nc, nloc, ...) into (n_dofs, ...)."""
        local = np.asarray(local, dtype=float)
        idx = self.cell_dofs.reshape(-1)
        flat = local.reshape(len(idx), -1)
        out = np.empty((self.n_dofs, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.bincount(idx, weights=flat[:, c], minlength=self.n_dofs)
        return out.reshape((self.n_dofs,) + local.shape[2:])

    def assemble_matrix(self, local):
        """Assemble cell matrices (nc, nloc, nloc) into a CSR matrix."""
        nloc = self.n_local
        rows = np.repeat(self.cell_dofs, nloc, axis=1)
        cols = np.tile(self.cell_dofs, (1, nloc))
        return assemble_csr(rows, cols, local.reshape(self.n_cells, -1), (self.n_dofs, self.n_dofs))

    def load_vector(self, values_at_points):
        """(f, phi_i) for f given at quadrature points, (nc, nq, ...)."""
        local = np.einsum('cq,ql,cq...->cl...', self.weights, self.phi, values_at_points)
        return self.assemble_vector(local)

    def stiffness_matrix(self, cell_coefficient=None):
        """sum_K c_K (grad phi_j, grad phi_i)_K."""
        local = np.einsum('cq,cqla,cqma->clm', self.weights, self.grads, self.grads)
        if cell_coefficient is not None:
            local *= np.asarray(cell_coefficient)[:, None, None]
        return self.assemble_matrix(local)

    @cached_property
    def boundary(self):
        """Non-periodic boundary facets with their quadrature data."""
        return BoundaryFacets(self)


class BoundaryFacets:
    """
    Non-periodic boundary facets of a space: owners, outward normals, facet
    quadrature and the local nodes lying on each facet.
    """

    def __init__(self, space):
        mesh = space.mesh
        d = space.dim
        self.cells, self.local, self.tags = mesh.boundary_facet_owners()
        lattice = space.basis.lattice
        self.facet_nodes = {f: np.nonzero(lattice[:, f] == 0)[0] for f in range(d + 1)}

        X = mesh.vertices
        n = len(self.cells)
        self.normals = np.zeros((n, d))
        self.measures = np.ones(n)
        for idx, (c, f) in enumerate(zip(self.cells, self.local)):
            verts = X[mesh.cells[c]]
            others = [v for v in range(d + 1) if v != f]
            if d == 1:
                normal = verts[others[0]] - verts[f]
            else:
                tangent = verts[others[1]] - verts[others[0]]
                self.measures[idx] = np.linalg.norm(tangent)
                normal = np.array([tangent[1], -tangent[0]])
                if np.dot(normal, verts[f] - verts[others[0]]) > 0:
                    normal = -normal
            self.normals[idx] = normal / np.linalg.norm(normal)

        self.rules = {f: facet_quadrature(d, f, 2 * space.degree + 1) for f in range(d + 1)}
        self.phi = {f: space.basis.values(rule.points) for f, rule in self.rules.items()}

    def __len__(self):
        return len(self.cells)

    def dofs_with_tag(self, space, tag):
        """Degrees of freedom on facets carrying tag."""
        dofs = [space.cell_dofs[c, self.facet_nodes[f]] for c, f, t in zip(self.cells, self.local, self.tags) if t == tag]
        if not dofs:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(dofs))


# ============================================================================
# MASS MATRICES
# ============================================================================

def lumped_mass(space):
    """m_i = integral of phi_i."""
    local = np.einsum('cq,ql->cl', space.weights, space.phi)
    return space.assemble_vector(local)


def consistent_mass(space):
    """Consistent mass matrix M_ij = (phi_j, phi_i)."""
    local = np.einsum('cq,ql,qm->clm', space.weights, space.phi, space.phi)
    return space.assemble_matrix(local)


# ============================================================================
# NODAL GEOMETRIC FACTORS
# ============================================================================

def patch_indicator(fine_space, patch=None):
    """
    Phi_i = max over fine cells K containing i and nodes j != i of K of |grad phi_j|_K.

    Local nodes sharing a dof (one-row periodic strips) are merged before
    taking norms, so phi_j is the global basis function restricted to K.

    Raises:
        EmptyPatchError: If a node has no neighbouring node
    """
    if fine_space.degree != 1:
        raise UnsupportedDegreeError("The patch indicator is defined on the fine P1 space")
    patch = fine_space.patch if patch is None else patch
    dofs = fine_space.cell_dofs
    same = dofs[:, :, None] == dofs[:, None, :]
    grads = np.einsum('clm,cma->cla', same.astype(float), fine_space.grads[:, 0])
    norms = np.linalg.norm(grads, axis=2)
    others = np.where(same, 0.0, norms[:, None, :]).max(axis=2)
    phi = np.zeros(patch.n_nodes)
    np.maximum.at(phi, dofs.reshape(-1), others.reshape(-1))
    if np.any(phi <= 0.0):
        raise EmptyPatchError(f"Node {int(np.argmin(phi))} has no neighbouring node")
    return phi


def viscosity_constant(patch, d, volume='max'):
    """
    C_i = ((d+1)/2) / Nel(S_i) / max_{K in S_i} |K| on the fine submesh.

    Nel(S_i) counts the local nodes carrying i, which is the number of cells
    unless a cell repeats the node. Counted this way C_i m_i = 1/2 on uniform
    patches, the same count the lumped mass m_i is summed over.

    volume='min' uses the smallest cell of the patch instead, the constant
    under which the scalar maximum principle holds on non-uniform meshes.
    """
    if volume == 'max':
        measure = patch.max_cell_measure()
    elif volume == 'min':
        measure = patch.min_cell_measure()
    else:
        raise ValueError(f"Unknown patch volume '{volume}'")
    return 0.5 * (d + 1) / patch.occurrences / measure


@dataclass
class NodalGeometry:
    m: np.ndarray
    m_fine: np.ndarray
    phi: np.ndarray
    C: np.ndarray
    kappa: np.ndarray
    fine_patch: PatchTable

    @property
    def n_nodes(self):
        return len(self.m_fine)


def build_nodal_geometry(space, fine_space, volume='max'):
    """Collect m, m^fine, Phi, C and kappa on the dofs shared by space and fine_space."""
    if fine_space.n_dofs != space.n_dofs:
        raise EmptyPatchError(
            f"Fine space has {fine_space.n_dofs} dofs but the P{space.degree} space has {space.n_dofs}"
        )
    patch = fine_space.patch
    return NodalGeometry(
        m=lumped_mass(space),
        m_fine=lumped_mass(fine_space),
        phi=patch_indicator(fine_space, patch),
        C=viscosity_constant(patch, space.dim, volume),
        kappa=patch.quality(),
        fine_patch=patch,
    )


# ============================================================================
# P1 STENCIL
# ============================================================================

def barycentric_gradients(cell_vertices):
    """Gradients of the P1 basis on one cell, (d+1, d)."""
    cell_vertices = np.asarray(cell_vertices, dtype=float)
    if cell_vertices.ndim == 1:
        cell_vertices = cell_vertices.reshape(-1, 1)
    A = (cell_vertices[1:] - cell_vertices[0]).T
    A_inv = np.linalg.inv(A)
    return np.vstack([-A_inv.sum(axis=0), A_inv])


def reference_stencil_check(cell_vertices):
    """
    Integrals of (J_K^T grad phi_j).(J_K^T grad phi_i) over one P1 cell.

    The closed form is -alpha|K| off the diagonal and gamma|K| on it, with
    alpha = 2/(d+1) and gamma = 2d/(d+1).
    """
    cell_vertices = np.asarray(cell_vertices, dtype=float)
    if cell_vertices.ndim == 1:
        cell_vertices = cell_vertices.reshape(-1, 1)
    d = cell_vertices.shape[1]
    grads = barycentric_gradients(cell_vertices)
    J = equilateral_jacobian(cell_vertices)
    measure = abs(np.linalg.det((cell_vertices[1:] - cell_vertices[0]).T)) / math.factorial(d)
    mapped = grads @ J
    return StencilIntegrals(
        matrix=measure * mapped @ mapped.T,
        measure=measure,
        alpha=2.0 / (d + 1),
        gamma=2.0 * d / (d + 1),
    )
