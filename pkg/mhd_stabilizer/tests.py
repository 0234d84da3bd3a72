"""
Unit tests for mhd_stabilizer/utils.py
"""

import csv

import numpy as np
import pytest
from lxml import etree

from benchmarks.utils import ErrorReport, ErrorRow
from mesh.utils import interval_mesh, rectangle_mesh
from mhd_stabilizer.utils import (
    read_error_csv,
    read_run_metadata,
    read_vtu_point_data,
    write_error_csv,
    write_nodal_csv,
    write_run_metadata,
    write_series_csv,
    write_vtu,
)


class TestVtu:

    def test_triangle_mesh(self, tmp_path):
        """Test points, cells and point data of a triangle mesh"""
        mesh = rectangle_mesh(2, 2)
        rho = np.linspace(1.0, 2.0, mesh.n_vertices)
        B = np.column_stack([rho, -rho])
        path = str(tmp_path / 'frame.vtu')
        write_vtu(path, mesh, {'rho': rho, 'B': B}, time=0.25)

        data = read_vtu_point_data(path)
        np.testing.assert_array_equal(data['rho'], rho)
        np.testing.assert_array_equal(data['B'][:, :2], B)
        np.testing.assert_array_equal(data['B'][:, 2], 0.0)

        root = etree.parse(path).getroot()
        piece = root.find('.//Piece')
        assert (piece.get('NumberOfPoints'), piece.get('NumberOfCells')) == ('9', '8')
        assert set(root.find(".//DataArray[@Name='types']").text.split()) == {'5'}
        assert float(root.find(".//FieldData/DataArray[@Name='TimeValue']").text) == 0.25

    def test_interval_mesh(self, tmp_path):
        """Test a 1D mesh is written as VTK lines padded to 3D points"""
        path = str(tmp_path / 'line.vtu')
        write_vtu(path, interval_mesh(3), {'rho': np.ones(4)})
        root = etree.parse(path).getroot()
        assert set(root.find(".//DataArray[@Name='types']").text.split()) == {'3'}
        assert len(root.find(".//Points/DataArray").text.split()) == 12
        assert root.find('.//FieldData') is None


class TestCsv:

    def test_nodal_columns(self, tmp_path):
        """Test vector fields expand into name_c columns and floats round-trip"""
        coords = np.array([[0.0, 0.0], [1.0 / 3.0, 0.5]])
        path = tmp_path / 'nodal.csv'
        write_nodal_csv(path, coords, {'rho': [0.1, 2.0 / 7.0], 'u': [[1.0, 2.0], [3.0, 4.0]]})
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        assert rows[0] == ['x0', 'x1', 'rho', 'u_0', 'u_1']
        assert float(rows[2][0]) == 1.0 / 3.0
        assert float(rows[2][2]) == 2.0 / 7.0

    def test_series_keeps_blanks(self, tmp_path):
        """Test strings are written as they are"""
        path = tmp_path / 'series.csv'
        write_series_csv(path, ['step', 'delta'], [[1, ''], [2, 0.5]])
        with open(path, newline='') as f:
            assert list(csv.reader(f)) == [['step', 'delta'], ['1', ''], ['2', '0.5']]

    def test_error_table(self, tmp_path):
        """Test comments, header and rates of an error table"""
        report = ErrorReport([ErrorRow(16, 'rho', 'L1', 0.1), ErrorRow(64, 'rho', 'L1', 0.025)]).with_rates(2)
        path = tmp_path / 'nested' / 'errors.csv'
        write_error_csv(path, report, ['problem=vortex'])
        with open(path) as f:
            assert f.readline() == '# problem=vortex\n'
            assert f.readline().strip() == 'dofs,var,norm,error,rate'
        rows = read_error_csv(path)
        assert rows[0] == {'dofs': 16, 'var': 'rho', 'norm': 'L1', 'error': 0.1, 'rate': None}
        assert rows[1]['rate'] == pytest.approx(2.0)


class TestMetadata:

    def test_numpy_values(self, tmp_path):
        """Test metadata with numpy values is written as JSON"""
        path = tmp_path / 'run.json'
        write_run_metadata(path, {'problem': 'blast', 'steps': 3, 'eps': np.array([0.5, 1.0]), 'errors': None})
        assert read_run_metadata(path) == {'problem': 'blast', 'steps': 3, 'eps': [0.5, 1.0], 'errors': None}
