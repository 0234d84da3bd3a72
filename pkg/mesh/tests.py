"""
Unit tests for mesh/utils.py
"""

import math

import numpy as np
import pytest

from mesh.utils import (
    PERIODIC_TAG,
    DegenerateCellError,
    EmptyPatchError,
    MeshFormatError,
    NonConformingMeshError,
    PatchTable,
    Triangulation,
    UnsupportedDegreeError,
    build_fine_submesh,
    equilateral_jacobian,
    equilateral_mesh,
    interval_mesh,
    lattice_points,
    mesh_quality,
    principal_lattice_cells,
    read_mesh,
    rectangle_mesh,
    write_mesh,
)


# ============================================================================
# FIXTURES
# ============================================================================

@pytest.fixture
def unit_square():
    return rectangle_mesh(4, 4)


@pytest.fixture
def periodic_square():
    return rectangle_mesh(4, 4, periodic_x=True, periodic_y=True)


# ============================================================================
# TEST: reference lattice
# ============================================================================

class TestLattice:

    @pytest.mark.parametrize('d,k,count', [(1, 1, 2), (1, 3, 4), (2, 1, 3), (2, 2, 6), (2, 3, 10)])
    def test_node_count(self, d, k, count):
        """Test the P_k lattice has dim P_k nodes with rows summing to k"""
        lattice = lattice_points(d, k)
        assert len(lattice) == count
        assert np.all(lattice.sum(axis=1) == k)

    def test_vertices_first(self):
        """Test vertex nodes come first"""
        lattice = lattice_points(2, 3)
        assert lattice[:3].tolist() == [[3, 0, 0], [0, 3, 0], [0, 0, 3]]

    def test_unsupported_degree(self):
        """Test degree 4 is rejected"""
        with pytest.raises(UnsupportedDegreeError):
            lattice_points(2, 4)

    @pytest.mark.parametrize('d,k', [(1, 2), (1, 3), (2, 2), (2, 3)])
    def test_principal_split_count(self, d, k):
        """Test the principal lattice split has k^d sub-simplices"""
        assert len(principal_lattice_cells(d, k)) == k ** d


# ============================================================================
# TEST: generators and validation
# ============================================================================

class TestGenerators:

    def test_rectangle_counts(self, unit_square):
        """Test a 4x4 rectangle has 32 triangles covering the unit square"""
        assert unit_square.n_cells == 32
        assert unit_square.n_vertices == 25
        assert unit_square.measure == pytest.approx(1.0)
        assert unit_square.validate()

    def test_rectangle_boundary_tags(self, unit_square):
        """Test the four sides carry their names"""
        tags = set(unit_square.boundary_facets.values())
        assert tags == {'left', 'right', 'bottom', 'top'}

    def test_periodic_identification(self, periodic_square):
        """Test periodic sides collapse 25 vertices into 16 dofs"""
        dofs = periodic_square.vertex_dofs()
        assert dofs.max() + 1 == 16
        assert set(periodic_square.boundary_facets.values()) == {PERIODIC_TAG}
        assert periodic_square.validate()

    def test_perturbed_mesh_stays_valid(self):
        """Test interior jitter keeps positive measures and the total area"""
        mesh = rectangle_mesh(6, 6, perturbation=0.3, diagonal='random', seed=3)
        assert mesh.validate()
        assert mesh.measure == pytest.approx(1.0)

    def test_perturbation_is_seeded(self):
        """Test equal seeds give equal meshes"""
        a = rectangle_mesh(5, 5, perturbation=0.2, seed=7)
        b = rectangle_mesh(5, 5, perturbation=0.2, seed=7)
        np.testing.assert_array_equal(a.vertices, b.vertices)

    def test_interval_periodic(self):
        """Test a periodic interval has one dof per cell"""
        mesh = interval_mesh(8, periodic=True)
        assert mesh.vertex_dofs().max() + 1 == 8

    def test_equilateral_mesh(self):
        """Test every cell of the sheared mesh is equilateral with edge 1/n"""
        mesh = equilateral_mesh(4)
        assert mesh.validate()
        np.testing.assert_allclose(mesh.cell_measures, math.sqrt(3.0) / 4.0 / 16.0, rtol=1e-12)
        edges = np.linalg.norm(mesh.vertices[mesh.cells] - np.roll(mesh.vertices[mesh.cells], 1, axis=1), axis=2)
        np.testing.assert_allclose(edges, 0.25, rtol=1e-12)
        assert mesh.vertex_dofs().max() + 1 == 16

    def test_unknown_diagonal(self):
        """Test an unknown diagonal pattern is rejected"""
        from mesh.utils import MeshError
        with pytest.raises(MeshError):
            rectangle_mesh(2, 2, diagonal='zigzag')


class TestValidation:

    def test_degenerate_cell(self):
        """Test a collinear triangle is rejected"""
        mesh = Triangulation(
            np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), np.array([[0, 1, 2]]),
            {(0, 1): 'a', (1, 2): 'a', (0, 2): 'a'},
        )
        with pytest.raises(DegenerateCellError):
            mesh.validate()

    def test_untagged_open_facet(self):
        """Test an open facet without a tag makes the mesh non-conforming"""
        mesh = Triangulation(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
        with pytest.raises(NonConformingMeshError):
            mesh.validate()

    def test_over_shared_facet(self):
        """Test three cells on one facet are rejected"""
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]])
        cells = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
        with pytest.raises(NonConformingMeshError):
            Triangulation(vertices, cells).validate()


# ============================================================================
# TEST: patches and quality
# ============================================================================

class TestPatches:

    def test_patch_sizes(self):
        """Test boundary nodes of an interval have one cell, interior nodes two"""
        mesh = interval_mesh(4)
        patch = PatchTable.from_mesh(mesh)
        assert patch.nel.tolist() == [1, 2, 2, 2, 1]
        assert patch.occurrences.tolist() == [1, 2, 2, 2, 1]
        assert sorted(patch.neighbors_of(2).tolist()) == [1, 2, 3]

    def test_patch_max_min(self):
        """Test patch extrema include the node itself"""
        patch = PatchTable.from_mesh(interval_mesh(4))
        values = np.array([0.0, 5.0, -1.0, 2.0, 3.0])
        assert patch.patch_max(values).tolist() == [5.0, 5.0, 5.0, 3.0, 3.0]
        assert patch.patch_min(values).tolist() == [0.0, -1.0, -1.0, -1.0, 2.0]

    def test_support_intersection(self):
        """Test neighbouring nodes share exactly one interval"""
        patch = PatchTable.from_mesh(interval_mesh(4))
        assert patch.support_intersection(1, 2).tolist() == [1]

    def test_quality_uniform(self, periodic_square):
        """Test kappa is 1 on a uniform mesh"""
        patch = PatchTable.from_mesh(periodic_square)
        np.testing.assert_allclose(patch.quality(), 1.0, rtol=1e-12)
        assert mesh_quality(0, patch) == pytest.approx(1.0)

    def test_quality_graded(self):
        """Test kappa is the largest to smallest cell ratio around a node"""
        mesh = Triangulation(np.array([[0.0], [1.0], [4.0]]), np.array([[0, 1], [1, 2]]), {(0,): 'l', (2,): 'r'})
        patch = PatchTable.from_mesh(mesh)
        assert mesh_quality(1, patch) == pytest.approx(3.0)

    def test_orphan_node(self):
        """Test a node outside every cell has an empty patch"""
        patch = PatchTable(np.array([[0, 1]]), 3, np.array([1.0]))
        with pytest.raises(EmptyPatchError):
            patch.patch_max(np.zeros(3))


# ============================================================================
# TEST: Jacobians and the fine submesh
# ============================================================================

class TestGeometry:

    def test_equilateral_reference_is_identity(self):
        """Test the unit equilateral triangle maps onto itself"""
        cell = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])
        np.testing.assert_allclose(equilateral_jacobian(cell), np.eye(2), atol=1e-14)

    def test_jacobian_determinant(self):
        """Test |det J_K| = |K| / |K_ref| for the right triangle"""
        cell = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        det = abs(np.linalg.det(equilateral_jacobian(cell)))
        assert det == pytest.approx(0.5 / (math.sqrt(3.0) / 4.0))

    def test_jacobian_1d(self):
        """Test J_K is the interval length in 1D"""
        assert equilateral_jacobian(np.array([[2.0], [2.5]]))[0, 0] == pytest.approx(0.5)

    def test_degenerate_jacobian(self):
        """Test a zero-measure cell has no Jacobian"""
        with pytest.raises(DegenerateCellError):
            equilateral_jacobian(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))

    @pytest.mark.parametrize('k,cells,nodes', [(1, 8, 9), (2, 32, 25), (3, 72, 49)])
    def test_fine_submesh_counts(self, k, cells, nodes):
        """Test the fine submesh of a 2x2 square has k^2 sub-triangles per cell"""
        fine = build_fine_submesh(rectangle_mesh(2, 2), k)
        assert fine.n_cells == cells
        assert fine.n_vertices == nodes
        assert fine.measure == pytest.approx(1.0)
        assert fine.validate()

    def test_fine_submesh_periodic(self):
        """Test periodic identification carries over to the fine nodes"""
        fine = build_fine_submesh(rectangle_mesh(3, 3, periodic_x=True, periodic_y=True), 2)
        assert fine.vertex_dofs().max() + 1 == 36

    def test_fine_submesh_interval(self):
        """Test a P3 interval splits every cell in three"""
        fine = build_fine_submesh(interval_mesh(4), 3)
        assert fine.n_cells == 12
        np.testing.assert_allclose(np.sort(fine.vertices[:, 0]), np.linspace(0.0, 1.0, 13), atol=1e-14)

    def test_fine_submesh_degree(self):
        """Test unsupported degrees are rejected"""
        with pytest.raises(UnsupportedDegreeError):
            build_fine_submesh(interval_mesh(4), 5)


# ============================================================================
# TEST: text format
# ============================================================================

class TestMeshFile:

    def test_write_read(self, tmp_path):
        """Test the text format keeps vertices, cells, tags and periods"""
        mesh = rectangle_mesh(3, 2, periodic_x=True, perturbation=0.1, seed=1)
        path = tmp_path / 'mesh.txt'
        write_mesh(mesh, path)
        loaded = read_mesh(path)
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.cells, mesh.cells)
        assert loaded.boundary_facets == mesh.boundary_facets
        assert len(loaded.periods) == 1

    def test_malformed_header(self, tmp_path):
        """Test a bad header raises MeshFormatError"""
        path = tmp_path / 'bad.txt'
        path.write_text('two 3 1\n')
        with pytest.raises(MeshFormatError):
            read_mesh(path)

    def test_index_out_of_range(self, tmp_path):
        """Test cell indices beyond the vertex count are rejected"""
        path = tmp_path / 'bad.txt'
        path.write_text('1 2 1\n0\n1\n0 5\n')
        with pytest.raises(MeshFormatError):
            read_mesh(path)
