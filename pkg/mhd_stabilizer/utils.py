"""
Output writers: VTU frames, nodal and series CSV, error tables and run metadata.
"""

import csv
import logging
import os

import numpy as np
import orjson as json
from lxml import etree

from mhd_stabilizer.constants import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)


ERROR_CSV_FIELDS = ['dofs', 'var', 'norm', 'error', 'rate']

# VTK cell type ids
VTK_LINE = 3
VTK_TRIANGLE = 5


def _fmt(value):
    if value is None:
        return ''
    return format(float(value), CSV_FLOAT_FORMAT)


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ============================================================================
# VTU
# ============================================================================

def _data_array(parent, name, values, components=1, dtype='Float64'):
    array = etree.SubElement(parent, 'DataArray')
    array.set('type', dtype)
    array.set('Name', name)
    array.set('format', 'ascii')
    if components > 1:
        array.set('NumberOfComponents', str(components))
    flat = np.asarray(values).reshape(-1)
    if dtype.startswith('Float'):
        array.text = ' '.join(_fmt(v) for v in flat)
    else:
        array.text = ' '.join(str(int(v)) for v in flat)
    return array


def write_vtu(path, mesh, point_data, time=None):
    """
    Write an ASCII VTU file of the fine P1 mesh.

    Args:
        mesh: Triangulation whose vertices carry the data (periodic copies included)
        point_data: dict name -> (n_vertices,) or (n_vertices, ncomp) values
        time: written as a field-data TimeValue when given
    """
    _ensure_parent(path)
    points = mesh.vertices
    if points.shape[1] < 3:
        points = np.hstack([points, np.zeros((len(points), 3 - points.shape[1]))])
    cells = mesh.cells
    cell_type = VTK_TRIANGLE if mesh.dim == 2 else VTK_LINE

    root = etree.Element('VTKFile', type='UnstructuredGrid', version='0.1', byte_order='LittleEndian')
    grid = etree.SubElement(root, 'UnstructuredGrid')
    if time is not None:
        field_data = etree.SubElement(grid, 'FieldData')
        _data_array(field_data, 'TimeValue', [time]).set('NumberOfTuples', '1')
    piece = etree.SubElement(grid, 'Piece', NumberOfPoints=str(len(points)), NumberOfCells=str(len(cells)))

    data = etree.SubElement(piece, 'PointData')
    for name, values in point_data.items():
        values = np.asarray(values, dtype=float)
        components = 1 if values.ndim == 1 else values.shape[1]
        if components == 2:
            values = np.hstack([values, np.zeros((len(values), 1))])
            components = 3
        _data_array(data, name, values, components)

    _data_array(etree.SubElement(piece, 'Points'), 'Points', points, 3)
    cell_el = etree.SubElement(piece, 'Cells')
    _data_array(cell_el, 'connectivity', cells, dtype='Int64')
    _data_array(cell_el, 'offsets', np.arange(1, len(cells) + 1) * cells.shape[1], dtype='Int64')
    _data_array(cell_el, 'types', np.full(len(cells), cell_type), dtype='UInt8')

    etree.ElementTree(root).write(path, pretty_print=True, xml_declaration=True, encoding='UTF-8')
    logger.debug(f"Wrote {path}: {len(points)} points, {len(cells)} cells")


def read_vtu_point_data(path):
    """Point-data arrays of a VTU written by write_vtu, keyed by name."""
    root = etree.parse(path).getroot()
    out = {}
    for array in root.iterfind('.//PointData/DataArray'):
        values = np.array([float(v) for v in (array.text or '').split()])
        components = int(array.get('NumberOfComponents', '1'))
        out[array.get('Name')] = values.reshape(-1, components) if components > 1 else values
    return out


# ============================================================================
# CSV
# ============================================================================

def write_nodal_csv(path, coords, fields):
    """One row per node: coordinates then every field (vector fields expanded as name_0, name_1, ...)."""
    _ensure_parent(path)
    columns = [f"x{a}" for a in range(coords.shape[1])]
    data = [coords]
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            columns.append(name)
            data.append(values[:, None])
        else:
            columns.extend(f"{name}_{c}" for c in range(values.shape[1]))
            data.append(values)
    table = np.hstack(data)
    with open(path, 'w', newline='', encoding='utf-8') as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(columns)
        for row in table:
            writer.writerow([_fmt(v) for v in row])


def write_series_csv(path, header, rows):
    _ensure_parent(path)
    with open(path, 'w', newline='', encoding='utf-8') as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def write_error_csv(path, report, comments=()):
    """
    Error table with header dofs,var,norm,error,rate, preceded by '# ' comment lines.

    The first level of every (var, norm) pair has an empty rate.
    """
    _ensure_parent(path)
    with open(path, 'w', newline='', encoding='utf-8') as csvfile:
        for line in comments:
            csvfile.write(f"# {line}\n")
        writer = csv.DictWriter(csvfile, fieldnames=ERROR_CSV_FIELDS)
        writer.writeheader()
        for row in report.rows:
            writer.writerow({
                'dofs': row.dofs,
                'var': row.var,
                'norm': row.norm,
                'error': _fmt(row.error),
                'rate': _fmt(row.rate),
            })
    logger.info(f"Error table written to {path} ({len(report.rows)} rows)")


def read_error_csv(path):
    """Rows of an error table as dicts with dofs int, error float and rate float or None."""
    with open(path, newline='', encoding='utf-8') as csvfile:
        lines = [line for line in csvfile if not line.startswith('#')]
    rows = []
    for record in csv.DictReader(lines):
        rows.append({
            'dofs': int(record['dofs']),
            'var': record['var'],
            'norm': record['norm'],
            'error': float(record['error']),
            'rate': float(record['rate']) if record['rate'] else None,
        })
    return rows


# ============================================================================
# METADATA
# ============================================================================

def write_run_metadata(path, metadata):
    _ensure_parent(path)
    with open(path, 'wb') as f:
        f.write(json.dumps(metadata, option=json.OPT_INDENT_2 | json.OPT_SERIALIZE_NUMPY))


def read_run_metadata(path):
    with open(path, 'rb') as f:
        return json.loads(f.read())
