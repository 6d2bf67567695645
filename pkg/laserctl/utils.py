import csv
import hashlib
import json
import logging
import os

import numpy as np
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from laserctl.errors import DomainError
from laserctl.models import AngularGrid, WaveFunction
from laserctl.units import hartree_to_ev

logger = logging.getLogger(__name__)

WAVEFUNCTION_MAGIC = 'laserctl-wavefunction'


def _number(value):
    return repr(float(value))


def write_table(path, columns, rows, comments=()):
    """CSV with optional '# ' comment lines, one header row and full-precision numbers."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size and rows.shape[1] != len(columns):
        raise DomainError(f'{len(columns)} column names for {rows.shape[1]} columns in {path}')
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', newline='') as handle:
        for comment in comments:
            handle.write(f'# {comment}\n')
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_number(v) for v in row])
    return path


def read_table(path):
    """(columns, data, comments) of a file written by ``write_table``."""
    if not os.path.exists(path):
        raise DomainError(f'table {path} does not exist')
    comments, rows, columns = [], [], None
    with open(path, newline='') as handle:
        for line in handle:
            if line.startswith('#'):
                comments.append(line[1:].strip())
                continue
            row = next(csv.reader([line]))
            if not row:
                continue
            if columns is None:
                columns = row
            else:
                rows.append([float(v) for v in row])
    if columns is None:
        raise DomainError(f'table {path} has no header row')
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    return columns, data, comments


def write_matrix(path, row_axis, column_axis, values, corner=''):
    """Matrix CSV: first row is the column axis, first column the row axis."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(row_axis), len(column_axis)):
        raise DomainError(f'matrix of shape {values.shape} for axes {len(row_axis)} x {len(column_axis)}')
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow([corner] + [_number(v) for v in column_axis])
        for r, row in zip(row_axis, values):
            writer.writerow([_number(r)] + [_number(v) for v in row])
    return path


def read_matrix(path):
    """(row_axis, column_axis, values, corner) of a matrix CSV."""
    if not os.path.exists(path):
        raise DomainError(f'matrix {path} does not exist')
    with open(path, newline='') as handle:
        rows = [row for row in csv.reader(handle) if row]
    if len(rows) < 2:
        raise DomainError(f'matrix {path} has no data rows')
    corner = rows[0][0]
    column_axis = np.array([float(v) for v in rows[0][1:]])
    row_axis = np.array([float(r[0]) for r in rows[1:]])
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return row_axis, column_axis, values, corner


def write_wavefunction(path, psi, time_au=None):
    """Flat little-endian complex128 array, theta-major, after a one-line text header."""
    header = (f'{WAVEFUNCTION_MAGIC} n_theta={psi.grid.n_theta} n_phi={psi.grid.n_phi} '
              f'order=theta-major dtype=complex128-le')
    if time_au is not None:
        header += f' t_au={_number(time_au)}'
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'wb') as handle:
        handle.write((header + '\n').encode('ascii'))
        handle.write(np.ascontiguousarray(psi.amplitudes, dtype='<c16').tobytes())
    return path


def read_wavefunction(path):
    """(WaveFunction, header fields) of a file written by ``write_wavefunction``."""
    with open(path, 'rb') as handle:
        header = handle.readline().decode('ascii').split()
        payload = handle.read()
    if not header or header[0] != WAVEFUNCTION_MAGIC:
        raise DomainError(f'{path} is not a wavefunction file')
    meta = dict(item.split('=', 1) for item in header[1:])
    grid = AngularGrid(int(meta['n_theta']), int(meta['n_phi']))
    amplitudes = np.frombuffer(payload, dtype='<c16')
    if amplitudes.size != grid.n_theta * grid.n_phi:
        raise DomainError(f'{path}: {amplitudes.size} amplitudes for a {grid.n_theta}x{grid.n_phi} grid')
    return WaveFunction(grid, amplitudes.reshape(grid.shape)), meta


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    return str(value)


def write_json(path, data):
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w') as handle:
        json.dump(data, handle, indent=2, sort_keys=True, default=_jsonable)
        handle.write('\n')
    return path


def read_json(path):
    with open(path) as handle:
        return json.load(handle)


def file_checksum(path):
    """sha256 hex digest of a file."""
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def save_cached_surface(path, record):
    """Store a calibrated surface record; failures are logged, not raised."""
    try:
        write_json(path, record)
        return path
    except Exception as e:
        logger.error(f"Failed to cache calibrated surface: {str(e)}")
        return None


def load_cached_surface(path):
    try:
        if os.path.exists(path):
            return read_json(path)
        return None
    except Exception as e:
        logger.error(f"Failed to read cached surface {path}: {str(e)}")
        return None


def format_energy(hartree, unit='eV'):
    """Format an energy given in hartree"""
    if hartree is None:
        return ''
    try:
        hartree = float(hartree)
    except (ValueError, TypeError):
        return str(hartree)
    if unit == 'eV':
        return f"{hartree_to_ev(hartree):.6f} eV"
    return f"{hartree:.8f} Eh"


BOUND_SYMBOLS = {'min': '>=', 'max': '<=', 'equal': '=='}


def format_check(check):
    """Format an acceptance check as "value (need >= threshold)"."""
    def fmt(value, digits):
        return f"{value:.{digits}f}" if isinstance(value, (int, float)) else str(value)

    symbol = BOUND_SYMBOLS[check.get('bound', 'min')]
    return f"{fmt(check['value'], 6)} (need {symbol} {fmt(check['threshold'], 4)})"


def format_seconds(seconds):
    """Format a wall-clock duration"""
    if seconds is None:
        return ''
    seconds = float(seconds)
    if seconds < 60.0:
        return f"{seconds:.1f} s"
    minutes, rest = divmod(seconds, 60.0)
    if minutes < 60.0:
        return f"{int(minutes)} min {rest:.0f} s"
    hours, minutes = divmod(minutes, 60.0)
    return f"{int(hours)} h {int(minutes)} min"


def _grid_table(rows, widths):
    table = Table(rows, colWidths=widths)
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
        ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 9),
        ('BOTTOMPADDING', (0, 0), (-1, -1), 4),
        ('GRID', (0, 0), (-1, -1), 1, colors.black)
    ]))
    return table


def generate_run_report(manifest, path):
    """Generate PDF run report"""
    try:
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        doc = SimpleDocTemplate(path, pagesize=A4, invariant=True)
        styles = getSampleStyleSheet()
        story = []

        title_style = ParagraphStyle(
            'CustomTitle',
            parent=styles['Heading1'],
            fontSize=18,
            spaceAfter=30,
            alignment=1  # Center
        )
        kind = manifest.config['scenario']['kind']
        story.append(Paragraph(f"RUN REPORT - {kind}", title_style))
        story.append(Spacer(1, 12))

        status = 'partial' if manifest.partial else ('passed' if manifest.passed else 'failed')
        summary = [
            ['Field', 'Value'],
            ['Toolkit version', manifest.version],
            ['Surface variant', manifest.config['scenario']['variant']],
            ['Status', status],
            ['Peak memory', f"{manifest.memory_mb:.0f} MB"],
        ]
        for stage, seconds in manifest.timings.items():
            summary.append([f'Time: {stage}', format_seconds(seconds)])
        if manifest.error:
            summary.append(['Error', manifest.error])
        story.append(_grid_table(summary, [2 * inch, 4.5 * inch]))
        story.append(Spacer(1, 20))

        calibration = manifest.calibration
        if calibration:
            story.append(Paragraph("Calibration", styles['Heading3']))
            rows = [['Point', 'theta (rad)', 'phi (rad)', 'E (eV)', 'Kind']]
            for point in calibration.get('stationary_points', []):
                rows.append([point['name'], f"{point['theta']:.4f}", f"{point['phi']:.4f}",
                             f"{point['energy_ev']:.4f}", point['kind']])
            story.append(_grid_table(rows, [1 * inch, 1.2 * inch, 1.2 * inch, 1.2 * inch, 1.2 * inch]))
            story.append(Paragraph(
                f"Splitting {calibration['splitting_ev']:.3e} eV ({calibration['splitting_method']}), "
                f"tunneling time {calibration['tunneling_time_ps']:.1f} ps", styles['Normal']))
            story.append(Spacer(1, 20))

        if manifest.acceptance:
            story.append(Paragraph("Acceptance", styles['Heading3']))
            rows = [['Check', 'Result', 'Passed']]
            for name, check in manifest.acceptance.items():
                rows.append([name, format_check(check), 'yes' if check['passed'] else 'no'])
            story.append(_grid_table(rows, [2.4 * inch, 2.8 * inch, 1 * inch]))
            story.append(Spacer(1, 20))

        story.append(Paragraph("Outputs", styles['Heading3']))
        rows = [['File', 'sha256']]
        for name, digest in sorted(manifest.outputs.items()):
            rows.append([name, digest[:32]])
        story.append(_grid_table(rows, [2.5 * inch, 4 * inch]))

        doc.build(story)
        return path
    except Exception as e:
        logger.error(f"Failed to generate PDF run report: {str(e)}")
        return None
