"""
Strong boundary conditions applied after every Runge-Kutta solution.

Periodicity needs nothing here: it is built into the dof numbering.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# nodal normals closer than this to parallel count as one wall
PARALLEL_TOL = 1e-10


class BoundaryConditionError(Exception):
    """Raised for boundary tags missing from the mesh or malformed boundary data"""
    pass


@dataclass
class BoundaryConditions:
    """
    dirichlet maps a boundary tag to data(x, t) -> conserved states at x.
    slip lists the tags of walls where the normal momentum is removed.
    """

    dirichlet: dict = field(default_factory=dict)
    slip: tuple = ()

    @property
    def empty(self):
        return not self.dirichlet and not self.slip


@dataclass
class ResolvedBoundary:
    """Boundary conditions resolved to dofs of one space."""

    dirichlet: dict = field(default_factory=dict)
    slip_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    slip_normals: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    corner_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    coords: np.ndarray = None


def _nodal_normals(space, tags):
    """Unit normal per slip dof; dofs touched by non-parallel facet normals are corners."""
    boundary = space.boundary
    collected = {}
    for c, f, tag, normal in zip(boundary.cells, boundary.local, boundary.tags, boundary.normals):
        if tag not in tags:
            continue
        for dof in space.cell_dofs[c, boundary.facet_nodes[f]]:
            collected.setdefault(int(dof), []).append(normal)

    dofs, normals, corners = [], [], []
    for dof, ns in sorted(collected.items()):
        ref = ns[0]
        if all(abs(np.dot(ref, n)) >= 1.0 - PARALLEL_TOL for n in ns[1:]):
            dofs.append(dof)
            normals.append(ref)
        else:
            corners.append(dof)
    d = space.dim
    return (
        np.array(dofs, dtype=np.int64),
        np.array(normals, dtype=float).reshape(-1, d),
        np.array(corners, dtype=np.int64),
    )


def resolve_boundary(space, bcs):
    """
    Map boundary tags to the dofs of space.

    Raises:
        BoundaryConditionError: If a tag does not occur on the mesh boundary
    """
    resolved = ResolvedBoundary(coords=space.dof_coords)
    if bcs is None or bcs.empty:
        return resolved
    present = set(space.boundary.tags)
    for tag in list(bcs.dirichlet) + list(bcs.slip):
        if tag not in present:
            raise BoundaryConditionError(f"Boundary tag '{tag}' does not occur on the mesh")

    for tag, data in bcs.dirichlet.items():
        resolved.dirichlet[tag] = (space.boundary.dofs_with_tag(space, tag), data)
    if bcs.slip:
        resolved.slip_dofs, resolved.slip_normals, resolved.corner_dofs = _nodal_normals(space, set(bcs.slip))
        if len(resolved.corner_dofs):
            logger.info(f"{len(resolved.corner_dofs)} slip corner nodes: momentum is set to zero there")
    return resolved


def slip_projection(m, n):
    """m - (m.n) n, row by row."""
    return m - np.sum(m * n, axis=-1, keepdims=True) * n


def apply_bcs(U, t, resolved, momentum=None):
    """
    Slip walls first, then Dirichlet data, on a copy of U.

    Args:
        U: nodal states (n_dofs, ncomp)
        t: time at which Dirichlet data is evaluated
        resolved: ResolvedBoundary
        momentum: slice of the momentum components (required for slip walls)
    """
    U = np.array(U, dtype=float, copy=True)
    if len(resolved.slip_dofs) or len(resolved.corner_dofs):
        if momentum is None:
            raise BoundaryConditionError("Slip walls need the momentum components of the state")
        m = U[resolved.slip_dofs, momentum]
        U[resolved.slip_dofs, momentum] = slip_projection(m, resolved.slip_normals)
        U[resolved.corner_dofs, momentum] = 0.0
    for dofs, data in resolved.dirichlet.values():
        if len(dofs):
            U[dofs] = np.asarray(data(resolved.coords[dofs], t), dtype=float).reshape(len(dofs), -1)
    return U
