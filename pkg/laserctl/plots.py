"""Static figures rendered from the CSV outputs of a run directory."""

import glob
import logging
import os

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from laserctl.errors import DomainError  # noqa: E402
from laserctl.utils import read_matrix, read_table  # noqa: E402

logger = logging.getLogger(__name__)

PLOT_DIR = 'plots'

params = {
    'axes.labelsize': 10,
    'font.size': 9,
    'legend.fontsize': 8,
    'xtick.labelsize': 9,
    'ytick.labelsize': 9,
    'figure.figsize': [6.4, 4.0],
    'figure.dpi': 100,
    'lines.linewidth': 1.2,
    'savefig.bbox': 'tight',
}


def _save(fig, path):
    # Dropping the Software tag keeps the PNG bytes reproducible.
    fig.savefig(path, dpi=150, metadata={'Software': None})
    plt.close(fig)
    return path


def _state_labels(comments, count):
    for comment in comments:
        if comment.startswith('states:'):
            labels = [s.strip() for s in comment[len('states:'):].split(';') if s.strip()]
            if len(labels) == count:
                return [f'|{label}>' for label in labels]
    return [f'state {k + 1}' for k in range(count)]


def plot_populations(csv_path, out_path):
    """Population traces with a legend of state labels."""
    columns, data, comments = read_table(csv_path)
    pop_columns = [i for i, name in enumerate(columns) if name.startswith('pop_')]
    labels = _state_labels(comments, len(pop_columns))
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for label, i in zip(labels, pop_columns):
            ax.plot(data[:, 0], data[:, i], label=label)
        ax.set_xlabel('t (a.u.)')
        ax.set_ylabel('population')
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc='best', ncol=2)
        return _save(fig, out_path)


def plot_field(csv_path, out_path):
    columns, data, _ = read_table(csv_path)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(data[:, 0], data[:, 1], label='E_x')
        ax.plot(data[:, 0], data[:, 2], label='E_y', alpha=0.8)
        ax.set_xlabel('t (a.u.)')
        ax.set_ylabel('field (a.u.)')
        ax.legend(loc='upper right')
        return _save(fig, out_path)


def plot_convergence(csv_path, out_path):
    _, data, _ = read_table(csv_path)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.semilogy(data[:, 0], np.maximum(1.0 - data[:, 1], 1e-16), marker='o', markersize=3)
        ax.set_xlabel('iteration')
        ax.set_ylabel('1 - J')
        return _save(fig, out_path)


def plot_curve(csv_path, out_path):
    columns, data, _ = read_table(csv_path)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(data[:, 0], data[:, 1], marker='o')
        ax.set_xlabel(columns[0])
        ax.set_ylabel(columns[1])
        return _save(fig, out_path)


def plot_spectrogram(csv_path, out_path):
    """Heat map of a spectrogram matrix (rows t in ps, columns omega in cm^-1)."""
    times, omegas, power, _ = read_matrix(csv_path)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        mesh = ax.pcolormesh(times, omegas, power.T, shading='auto', cmap='viridis')
        fig.colorbar(mesh, ax=ax, label='|F|^2')
        ax.set_xlabel('t (ps)')
        ax.set_ylabel('omega (cm^-1)')
        return _save(fig, out_path)


def plot_scan(csv_path, out_path):
    """Fidelity heat map over (delay, rabi) in atomic units."""
    rabi, delay, fidelity, _ = read_matrix(csv_path)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        mesh = ax.pcolormesh(delay, rabi, np.ma.masked_invalid(fidelity), shading='auto',
                             cmap='magma', vmin=0.0, vmax=1.0)
        fig.colorbar(mesh, ax=ax, label='fidelity')
        ax.set_xlabel('delay (a.u.)')
        ax.set_ylabel('Rabi frequency (a.u.)')
        ax.ticklabel_format(axis='both', style='sci', scilimits=(-3, 3))
        return _save(fig, out_path)


PLOTTERS = (
    ('populations.csv', plot_populations),
    ('rwa_populations.csv', plot_populations),
    ('*field.csv', plot_field),
    ('convergence.csv', plot_convergence),
    ('area_curve.csv', plot_curve),
    ('performance.csv', plot_curve),
    ('spectrogram_*.csv', plot_spectrogram),
    ('scan_*.csv', plot_scan),
)


def emit_plots(run_dir):
    """Render every recognised CSV in ``run_dir`` into ``run_dir/plots``.

    A plot that fails is logged and skipped; the CSV inputs are only read.
    """
    if not os.path.isdir(run_dir):
        raise DomainError(f'run directory {run_dir} does not exist')
    inputs = []
    for pattern, plotter in PLOTTERS:
        for path in sorted(glob.glob(os.path.join(run_dir, pattern))):
            inputs.append((path, plotter))
    if not inputs:
        raise DomainError(f'no plottable CSV outputs in {run_dir}')

    out_dir = os.path.join(run_dir, PLOT_DIR)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for path, plotter in inputs:
        name = os.path.splitext(os.path.basename(path))[0] + '.png'
        try:
            written.append(plotter(path, os.path.join(out_dir, name)))
        except Exception as e:
            plt.close('all')
            logger.error(f"Failed to plot {os.path.basename(path)}: {str(e)}")
    logger.info(f"Wrote {len(written)} plot(s) to {out_dir}")
    return written
