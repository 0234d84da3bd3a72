"""
Mesh utilities for conforming simplex meshes.

Covers intervals (d=1) and triangles (d=2): the Triangulation container,
node patches, structured and perturbed generators, a plain-text mesh format,
equilateral-reference Jacobians and the fine P1 submesh whose vertices are the
Lagrange nodes of a P_k space.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from mhd_stabilizer.constants import NODE_MERGE_TOL, SUPPORTED_DEGREES

logger = logging.getLogger(__name__)

PERIODIC_TAG = 'periodic'


class MeshError(Exception):
    """Base exception for mesh construction and query errors"""
    pass


class DegenerateCellError(MeshError):
    """Raised when a cell has zero (or numerically zero) measure"""
    pass


class NonConformingMeshError(MeshError):
    """Raised when a facet is neither shared by two cells nor tagged"""
    pass


class UnsupportedDegreeError(MeshError):
    """Raised for polynomial degrees outside 1..3"""
    pass


class EmptyPatchError(MeshError):
    """Raised when a node belongs to no cell"""
    pass


class MeshFormatError(MeshError):
    """Raised when a mesh file cannot be parsed"""
    pass


# ============================================================================
# REFERENCE LATTICE
# ============================================================================

def lattice_points(d, k):
    """
    Barycentric multi-indices of the P_k principal lattice on the reference simplex.

    Ordered vertices first, then edge nodes, then interior nodes. Row l sums
    to k; the reference coordinate of node l is lattice[l, 1:] / k.
    """
    if k not in SUPPORTED_DEGREES:
        raise UnsupportedDegreeError(f"Polynomial degree {k} is not supported")
    if d == 1:
        points = [(k, 0), (0, k)] + [(k - m, m) for m in range(1, k)]
    elif d == 2:
        points = [(k, 0, 0), (0, k, 0), (0, 0, k)]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            for m in range(1, k):
                p = [0, 0, 0]
                p[a] = k - m
                p[b] = m
                points.append(tuple(p))
        for j in range(1, k):
            for i in range(1, k):
                if k - i - j > 0:
                    points.append((k - i - j, i, j))
    else:
        raise MeshError(f"Dimension {d} is not supported")
    return np.array(points, dtype=np.int64)


def principal_lattice_cells(d, k):
    """Local node indices of the k^d sub-simplices of the principal-lattice split."""
    lattice = lattice_points(d, k)
    index = {tuple(p): l for l, p in enumerate(lattice)}
    sub = []
    if d == 1:
        for m in range(k):
            sub.append((index[(k - m, m)], index[(k - m - 1, m + 1)]))
    else:
        def node(i, j):
            return index[(k - i - j, i, j)]

        for j in range(k):
            for i in range(k - j):
                sub.append((node(i, j), node(i + 1, j), node(i, j + 1)))
                if i + j <= k - 2:
                    sub.append((node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)))
    return np.array(sub, dtype=np.int64)


def reference_measure(d):
    return 1.0 / math.factorial(d)


def equilateral_vertices(d):
    if d == 1:
        return np.array([[0.0], [1.0]])
    return np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])


# ============================================================================
# AFFINE GEOMETRY
# ============================================================================

def affine_maps(vertices, cells):
    """
    Affine maps from the unit reference simplex onto every cell.

    Returns:
        tuple: (A, det) with A[c, :, a] = x_{a+1} - x_0 for cell c.
    """
    x = vertices[cells]
    A = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))
    det = np.linalg.det(A) if A.shape[1] > 1 else A[:, 0, 0].copy()
    return A, det


def equilateral_jacobian(cell_vertices):
    """
    Jacobian J_K of the affine map from the unit-edge equilateral simplex onto a cell.

    The reference vertex l is mapped to cell vertex l, so
    Phi_K(x) = J_K x + cell_vertices[0] and |det J_K| = |K| / |K_ref|.

    Args:
        cell_vertices: (d+1, d) array of vertex coordinates

    Returns:
        np.ndarray: d x d matrix J_K

    Raises:
        DegenerateCellError: If the cell has zero measure
    """
    cell_vertices = np.asarray(cell_vertices, dtype=float)
    if cell_vertices.ndim == 1:
        cell_vertices = cell_vertices.reshape(-1, 1)
    d = cell_vertices.shape[1]
    A = (cell_vertices[1:] - cell_vertices[0]).T
    scale = max(np.abs(A).max(), 1e-300)
    if abs(np.linalg.det(A)) <= 1e-14 * scale ** d:
        raise DegenerateCellError(f"Degenerate cell with vertices {cell_vertices.tolist()}")
    ref = equilateral_vertices(d)
    E = (ref[1:] - ref[0]).T
    return A @ np.linalg.inv(E)


def equilateral_jacobians(vertices, cells):
    """Vectorized equilateral_jacobian over all cells, shape (nc, d, d)."""
    A, det = affine_maps(vertices, cells)
    d = vertices.shape[1]
    scale = np.abs(A).reshape(len(A), -1).max(axis=1)
    bad = np.abs(det) <= 1e-14 * np.maximum(scale, 1e-300) ** d
    if np.any(bad):
        raise DegenerateCellError(f"Degenerate cell {int(np.nonzero(bad)[0][0])}")
    ref = equilateral_vertices(d)
    E_inv = np.linalg.inv((ref[1:] - ref[0]).T)
    return A @ E_inv


# ============================================================================
# PERIODIC IDENTIFICATION
# ============================================================================

def match_periodic_nodes(coords, periods, tol=None):
    """
    Pair nodes that differ by a declared period vector.

    Returns:
        np.ndarray: (npairs, 2) array of (i, j) with coords[j] = coords[i] + period
    """
    if not periods:
        return np.empty((0, 2), dtype=np.int64)
    if tol is None:
        diameter = float(np.ptp(coords, axis=0).max()) or 1.0
        tol = NODE_MERGE_TOL * diameter
    tree = cKDTree(coords)
    pairs = []
    for period in periods:
        dist, idx = tree.query(coords + np.asarray(period), distance_upper_bound=tol)
        found = np.isfinite(dist)
        pairs.append(np.column_stack([np.nonzero(found)[0], idx[found]]))
    return np.concatenate(pairs).astype(np.int64)


def periodic_dof_map(n_nodes, pairs):
    """
    Collapse periodic node pairs into degrees of freedom.

    Each equivalence class is represented by its smallest node index and
    classes are numbered in increasing order of that index.

    Returns:
        tuple: (dof_of_node, representatives)
    """
    master = np.arange(n_nodes)
    if len(pairs):
        while True:
            low = np.minimum(master[pairs[:, 0]], master[pairs[:, 1]])
            updated = master.copy()
            np.minimum.at(updated, pairs[:, 0], low)
            np.minimum.at(updated, pairs[:, 1], low)
            updated = updated[updated]
            if np.array_equal(updated, master):
                break
            master = updated
    representatives, dof_of_node = np.unique(master, return_inverse=True)
    return dof_of_node.reshape(-1), representatives


# ============================================================================
# TRIANGULATION
# ============================================================================

def cell_facets(cells):
    """Sorted facet vertex tuples, shape (nc, d+1, d); facet l is opposite local vertex l."""
    nloc = cells.shape[1]
    facets = np.stack([np.delete(cells, l, axis=1) for l in range(nloc)], axis=1)
    return np.sort(facets, axis=2)


@dataclass
class Triangulation:
    """
    Conforming simplex mesh.

    vertices is (nv, d), cells is (nc, d+1). boundary_facets maps a sorted
    vertex tuple to a tag; facets on periodic boundaries carry PERIODIC_TAG.
    periods lists the period vectors; periodic_pairs is derived from them by
    geometric matching unless given.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: dict = field(default_factory=dict)
    periods: tuple = ()
    periodic_pairs: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim == 1:
            self.vertices = self.vertices.reshape(-1, 1)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.periods = tuple(np.asarray(p, dtype=float).reshape(-1) for p in self.periods)
        self.boundary_facets = {tuple(sorted(int(v) for v in k)): t for k, t in self.boundary_facets.items()}
        if self.periodic_pairs is None:
            self.periodic_pairs = match_periodic_nodes(self.vertices, self.periods)
        else:
            self.periodic_pairs = np.asarray(self.periodic_pairs, dtype=np.int64).reshape(-1, 2)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @cached_property
    def cell_measures(self):
        _, det = affine_maps(self.vertices, self.cells)
        return np.abs(det) * reference_measure(self.dim)

    @cached_property
    def diameter(self):
        return float(np.linalg.norm(np.ptp(self.vertices, axis=0)))

    @property
    def measure(self):
        return float(self.cell_measures.sum())

    @cached_property
    def facet_table(self):
        """(unique facets, cell-local facet -> unique index, multiplicity of each unique facet)."""
        facets = cell_facets(self.cells)
        flat = facets.reshape(-1, self.dim)
        unique, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
        return unique, inverse.reshape(-1), counts

    def boundary_facet_owners(self, include_periodic=False):
        """
        Cells owning the boundary facets.

        Returns:
            tuple: (cell indices, local facet indices, tags)
        """
        _, inverse, counts = self.facet_table
        nloc = self.cells.shape[1]
        flat = np.nonzero(counts[inverse] == 1)[0]
        cells = flat // nloc
        local = flat % nloc
        facets = cell_facets(self.cells)
        tags = [self.boundary_facets.get(tuple(int(v) for v in facets[c, f])) for c, f in zip(cells, local)]
        if not include_periodic:
            keep = np.array([t != PERIODIC_TAG for t in tags], dtype=bool)
            cells, local = cells[keep], local[keep]
            tags = [t for t, k in zip(tags, keep) if k]
        return cells, local, tags

    def validate(self):
        """
        Check positive measures, conformity and periodic geometry.

        Raises:
            DegenerateCellError: If some cell has zero measure
            NonConformingMeshError: If a facet is over-shared or an open facet is untagged
        """
        measures = self.cell_measures
        floor = 1e-14 * max(self.diameter, 1e-300) ** self.dim
        degenerate = np.nonzero(measures <= floor)[0]
        if len(degenerate):
            raise DegenerateCellError(f"Cell {int(degenerate[0])} has measure {measures[degenerate[0]]:.3e}")
        unique, _, counts = self.facet_table
        if np.any(counts > 2):
            bad = unique[np.argmax(counts > 2)]
            raise NonConformingMeshError(f"Facet {bad.tolist()} is shared by more than two cells")
        for facet in unique[counts == 1]:
            if tuple(int(v) for v in facet) not in self.boundary_facets:
                raise NonConformingMeshError(f"Open facet {facet.tolist()} carries no boundary tag")
        for period in self.periods:
            if len(self.periodic_pairs) == 0:
                raise NonConformingMeshError(f"No node pairs found for period {period.tolist()}")
        if len(self.periodic_pairs):
            offsets = self.vertices[self.periodic_pairs[:, 1]] - self.vertices[self.periodic_pairs[:, 0]]
            lengths = np.linalg.norm(offsets, axis=1)
            scale = max(self.diameter, 1e-300)
            consistent = np.zeros(len(offsets), dtype=bool)
            for period in self.periods:
                consistent |= np.linalg.norm(offsets - period, axis=1) <= 1e-12 * scale
            if not np.all(consistent & (lengths > 0)):
                raise NonConformingMeshError("Periodic pairs do not match a declared period vector")
        return True

    def vertex_dofs(self):
        """Periodic-identified numbering of the vertices."""
        dof_of_node, _ = periodic_dof_map(self.n_vertices, self.periodic_pairs)
        return dof_of_node


# ============================================================================
# PATCHES
# ============================================================================

@dataclass
class PatchTable:
    """
    Node patches of a mesh or space.

    cell_nodes lists I(K) for every cell in the (periodic-identified) node
    numbering. S_i is the set of cells containing node i and I(S_i) the
    nodes of those cells, i included.
    """

    cell_nodes: np.ndarray
    n_nodes: int
    cell_measures: np.ndarray

    def __post_init__(self):
        self.cell_nodes = np.asarray(self.cell_nodes, dtype=np.int64)
        self.cell_measures = np.asarray(self.cell_measures, dtype=float)
        nc, nloc = self.cell_nodes.shape
        rows = self.cell_nodes.reshape(-1)
        cols = np.repeat(np.arange(nc), nloc)
        incidence = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_nodes, nc)
        )
        incidence.sum_duplicates()
        incidence.sort_indices()
        incidence.data[:] = 1.0
        self.incidence = incidence
        adjacency = (incidence @ incidence.T).tocsr()
        adjacency.sum_duplicates()
        adjacency.sort_indices()
        self.adjacency = adjacency
        self.nel = np.diff(incidence.indptr)
        # local nodes carrying i; exceeds nel where a cell repeats a node (one-row periodic strips)
        self.occurrences = np.bincount(rows, minlength=self.n_nodes)

    @classmethod
    def from_mesh(cls, mesh):
        dofs = mesh.vertex_dofs()
        return cls(dofs[mesh.cells], int(dofs.max()) + 1, mesh.cell_measures)

    def cells_of(self, i):
        return self.incidence.indices[self.incidence.indptr[i]:self.incidence.indptr[i + 1]]

    def neighbors_of(self, i):
        return self.adjacency.indices[self.adjacency.indptr[i]:self.adjacency.indptr[i + 1]]

    def support_intersection(self, i, j):
        """Cells of S_ij = S_i ∩ S_j."""
        return np.intersect1d(self.cells_of(i), self.cells_of(j), assume_unique=True)

    def _check_nonempty(self):
        if np.any(self.nel == 0):
            raise EmptyPatchError(f"Node {int(np.argmin(self.nel))} belongs to no cell")

    def _node_reduce(self, ufunc, values, initial):
        self._check_nonempty()
        rows = np.repeat(np.arange(self.n_nodes), np.diff(self.adjacency.indptr))
        out = np.full(self.n_nodes, initial, dtype=float)
        ufunc.at(out, rows, np.asarray(values, dtype=float)[self.adjacency.indices])
        return out

    def patch_max(self, values):
        """max_{j in I(S_i)} values_j for every node."""
        return self._node_reduce(np.maximum, values, -np.inf)

    def patch_min(self, values):
        return self._node_reduce(np.minimum, values, np.inf)

    def max_cell_measure(self):
        self._check_nonempty()
        out = np.zeros(self.n_nodes)
        np.maximum.at(out, self.cell_nodes.reshape(-1), np.repeat(self.cell_measures, self.cell_nodes.shape[1]))
        return out

    def min_cell_measure(self):
        self._check_nonempty()
        out = np.full(self.n_nodes, np.inf)
        np.minimum.at(out, self.cell_nodes.reshape(-1), np.repeat(self.cell_measures, self.cell_nodes.shape[1]))
        return out

    def quality(self):
        """kappa_i for every node."""
        return self.max_cell_measure() / self.min_cell_measure()


def mesh_quality(i, patch):
    """
    Nodal mesh quality kappa_i = max |K| / min |K| over the cells of S_i.

    Raises:
        EmptyPatchError: If node i belongs to no cell
    """
    cells = patch.cells_of(i)
    if len(cells) == 0:
        raise EmptyPatchError(f"Node {i} belongs to no cell")
    measures = patch.cell_measures[cells]
    return float(measures.max() / measures.min())


# ============================================================================
# LAGRANGE NODES AND THE FINE SUBMESH
# ============================================================================

def lagrange_nodes(mesh, k):
    """
    Global P_k Lagrange nodes of a mesh.

    Vertex nodes keep the vertex numbering; edge nodes follow, merged across
    cells by (edge, position) key; interior nodes come last, cell by cell.

    Returns:
        tuple: (node coordinates (n, d), cell -> node map (nc, nloc))
    """
    d = mesh.dim
    lattice = lattice_points(d, k)
    cells = mesh.cells
    X = mesh.vertices
    nc = len(cells)
    cell_nodes = np.empty((nc, len(lattice)), dtype=np.int64)
    support = (lattice > 0).sum(axis=1)

    for l in np.nonzero(support == 1)[0]:
        cell_nodes[:, l] = cells[:, int(np.argmax(lattice[l]))]

    edge_locals = np.nonzero(support == 2)[0]
    coords = [X]
    n_nodes = len(X)
    if len(edge_locals):
        keys = []
        for l in edge_locals:
            a, b = np.nonzero(lattice[l])[0]
            va, vb = cells[:, a], cells[:, b]
            lo = np.minimum(va, vb)
            hi = np.maximum(va, vb)
            s = np.where(va < vb, lattice[l, b], lattice[l, a])
            keys.append(np.column_stack([lo, hi, s]))
        keys = np.stack(keys, axis=1)
        unique, inverse = np.unique(keys.reshape(-1, 3), axis=0, return_inverse=True)
        cell_nodes[:, edge_locals] = n_nodes + inverse.reshape(nc, len(edge_locals))
        s = unique[:, 2:3].astype(float)
        coords.append(((k - s) * X[unique[:, 0]] + s * X[unique[:, 1]]) / k)
        n_nodes += len(unique)

    interior_locals = np.nonzero(support == d + 1)[0]
    if d == 2 and len(interior_locals):
        n_int = len(interior_locals)
        ids = n_nodes + np.arange(nc * n_int).reshape(nc, n_int)
        cell_nodes[:, interior_locals] = ids
        bary = lattice[interior_locals] / k
        interior = np.einsum('lv,cvd->cld', bary, X[cells]).reshape(-1, d)
        coords.append(interior)

    return np.concatenate(coords, axis=0), cell_nodes


def build_fine_submesh(mesh, k):
    """
    Fine P1 submesh whose vertices are the P_k Lagrange nodes of mesh.

    Each cell is split along the principal lattice into k sub-intervals
    (d=1) or k^2 sub-triangles (d=2). Boundary tags are inherited by the
    sub-facets and periodic pairs are re-matched on the fine node set.

    Raises:
        UnsupportedDegreeError: If k is not 1, 2 or 3
        NonConformingMeshError: If the input mesh is not conforming
    """
    if k not in SUPPORTED_DEGREES:
        raise UnsupportedDegreeError(f"Polynomial degree {k} is not supported")
    mesh.validate()
    if k == 1:
        return Triangulation(
            mesh.vertices.copy(), mesh.cells.copy(), dict(mesh.boundary_facets),
            mesh.periods, mesh.periodic_pairs.copy(),
        )

    d = mesh.dim
    coords, cell_nodes = lagrange_nodes(mesh, k)
    sub = principal_lattice_cells(d, k)
    fine_cells = cell_nodes[:, sub].reshape(-1, d + 1)

    lattice = lattice_points(d, k)
    owners, local, tags = mesh.boundary_facet_owners(include_periodic=True)
    boundary = {}
    for c, f, tag in zip(owners, local, tags):
        on_facet = np.nonzero(lattice[:, f] == 0)[0]
        if d == 1:
            boundary[(int(cell_nodes[c, on_facet[0]]),)] = tag
            continue
        b = [v for v in range(3) if v != f][1]
        ordered = on_facet[np.argsort(lattice[on_facet, b])]
        nodes = cell_nodes[c, ordered]
        for n0, n1 in zip(nodes[:-1], nodes[1:]):
            boundary[tuple(sorted((int(n0), int(n1))))] = tag

    fine = Triangulation(coords, fine_cells, boundary, mesh.periods)
    logger.debug(f"Fine P{k} submesh: {fine.n_vertices} vertices, {fine.n_cells} cells")
    return fine


# ============================================================================
# GENERATORS
# ============================================================================

def interval_mesh(n_cells, x_range=(0.0, 1.0), periodic=False, perturbation=0.0, seed=None):
    """
    Uniform (or randomly perturbed) interval mesh.

    perturbation is the amplitude of interior node jitter in units of the
    cell size; nodes move by at most perturbation*h/2.
    """
    x0, x1 = x_range
    h = (x1 - x0) / n_cells
    x = np.linspace(x0, x1, n_cells + 1)
    if perturbation:
        rng = np.random.default_rng(seed)
        x[1:-1] += perturbation * h * rng.uniform(-0.5, 0.5, size=n_cells - 1)
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    if periodic:
        boundary = {(0,): PERIODIC_TAG, (n_cells,): PERIODIC_TAG}
        periods = ((x1 - x0,),)
    else:
        boundary = {(0,): 'left', (n_cells,): 'right'}
        periods = ()
    return Triangulation(x.reshape(-1, 1), cells, boundary, periods)


def rectangle_mesh(nx, ny, x_range=(0.0, 1.0), y_range=(0.0, 1.0), periodic_x=False,
                   periodic_y=False, perturbation=0.0, diagonal='right', seed=None):
    """
    Triangulated rectangle with nx x ny squares split by one diagonal each.

    Args:
        diagonal: 'right' (lower-left to upper-right), 'alternate' or 'random'
        perturbation: interior vertex jitter amplitude in units of the cell size
        seed: seed for the perturbation and random diagonals

    Boundary facets are tagged 'left', 'right', 'bottom', 'top', or
    PERIODIC_TAG on periodic sides.
    """
    rng = np.random.default_rng(seed)
    x0, x1 = x_range
    y0, y1 = y_range
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    xs, ys = np.meshgrid(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    if perturbation:
        interior = np.ones((ny + 1, nx + 1), dtype=bool)
        interior[0, :] = interior[-1, :] = False
        interior[:, 0] = interior[:, -1] = False
        interior = interior.ravel()
        jitter = perturbation * rng.uniform(-0.5, 0.5, size=(int(interior.sum()), 2))
        vertices[interior] += jitter * np.array([hx, hy])

    def vid(i, j):
        return j * (nx + 1) + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.ravel(), jj.ravel()
    v00, v10, v11, v01 = vid(ii, jj), vid(ii + 1, jj), vid(ii + 1, jj + 1), vid(ii, jj + 1)
    if diagonal == 'right':
        flip = np.zeros(len(ii), dtype=bool)
    elif diagonal == 'alternate':
        flip = (ii + jj) % 2 == 1
    elif diagonal == 'random':
        flip = rng.random(len(ii)) < 0.5
    else:
        raise MeshError(f"Unknown diagonal pattern '{diagonal}'")
    first = np.where(flip[:, None], np.column_stack([v00, v10, v01]), np.column_stack([v00, v10, v11]))
    second = np.where(flip[:, None], np.column_stack([v10, v11, v01]), np.column_stack([v00, v11, v01]))
    cells = np.stack([first, second], axis=1).reshape(-1, 3)

    boundary = {}
    for i in range(nx):
        boundary[(vid(i, 0), vid(i + 1, 0))] = PERIODIC_TAG if periodic_y else 'bottom'
        boundary[(vid(i, ny), vid(i + 1, ny))] = PERIODIC_TAG if periodic_y else 'top'
    for j in range(ny):
        boundary[(vid(0, j), vid(0, j + 1))] = PERIODIC_TAG if periodic_x else 'left'
        boundary[(vid(nx, j), vid(nx, j + 1))] = PERIODIC_TAG if periodic_x else 'right'
    periods = []
    if periodic_x:
        periods.append((x1 - x0, 0.0))
    if periodic_y:
        periods.append((0.0, y1 - y0))
    return Triangulation(vertices, cells, boundary, tuple(periods))


def equilateral_mesh(n, side=1.0):
    """
    Doubly periodic mesh of equilateral triangles with edge side/n.

    A right-diagonal square grid sheared by x' = x - y/2, y' = (sqrt(3)/2) y.
    """
    square = rectangle_mesh(n, n, (0.0, side), (0.0, side), periodic_x=True, periodic_y=True)
    shear = np.array([[1.0, 0.0], [-0.5, math.sqrt(3.0) / 2.0]])
    periods = ((side, 0.0), (-0.5 * side, math.sqrt(3.0) / 2.0 * side))
    return Triangulation(square.vertices @ shear, square.cells, square.boundary_facets, periods)


# ============================================================================
# TEXT FORMAT
# ============================================================================

def write_mesh(mesh, path):
    """
    Write the plain-text mesh format.

    Header "dim nv nc", nv coordinate lines, nc cell lines (0-based), then
    one line per tagged boundary facet ("v0 v1 tag", "v0 tag" in 1D) and an
    optional "period px [py]" line per period vector.
    """
    with open(path, 'w') as f:
        f.write(f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells}\n")
        for x in mesh.vertices:
            f.write(' '.join(f"{v:.17g}" for v in x) + '\n')
        for c in mesh.cells:
            f.write(' '.join(str(int(v)) for v in c) + '\n')
        for facet, tag in sorted(mesh.boundary_facets.items()):
            f.write(' '.join(str(v) for v in facet) + f" {tag}\n")
        for period in mesh.periods:
            f.write('period ' + ' '.join(f"{v:.17g}" for v in period) + '\n')


def read_mesh(path):
    """
    Read the plain-text mesh format written by write_mesh.

    Raises:
        MeshFormatError: On malformed headers, rows or indices
    """
    with open(path) as f:
        lines = [line.split() for line in f if line.strip() and not line.lstrip().startswith('#')]
    try:
        d, nv, nc = (int(v) for v in lines[0])
        vertices = np.array([[float(v) for v in row] for row in lines[1:1 + nv]])
        cells = np.array([[int(v) for v in row] for row in lines[1 + nv:1 + nv + nc]], dtype=np.int64)
    except (ValueError, IndexError) as e:
        raise MeshFormatError(f"Malformed mesh file {path}: {e}") from e
    if vertices.shape != (nv, d) or cells.shape != (nc, d + 1):
        raise MeshFormatError(f"Mesh file {path}: expected {nv}x{d} vertices and {nc}x{d + 1} cells")
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise MeshFormatError(f"Mesh file {path}: cell vertex index out of range")

    boundary = {}
    periods = []
    for row in lines[1 + nv + nc:]:
        if row[0] == 'period':
            periods.append(tuple(float(v) for v in row[1:]))
            continue
        if len(row) != d + 1:
            raise MeshFormatError(f"Mesh file {path}: bad boundary line {' '.join(row)}")
        try:
            boundary[tuple(int(v) for v in row[:d])] = row[d]
        except ValueError as e:
            raise MeshFormatError(f"Mesh file {path}: bad boundary line {' '.join(row)}") from e
    mesh = Triangulation(vertices, cells, boundary, tuple(periods))
    mesh.validate()
    logger.info(f"Read mesh {path}: d={d}, {nv} vertices, {nc} cells")
    return mesh
