import os

import numpy as np
import pytest
from click.testing import CliRunner

from laserctl import create_toolkit
from laserctl.adiabatic import FewLevelModel
from laserctl.eigen import dvr_diagonalize
from laserctl.grid import normalize
from laserctl.models import AngularGrid, TimeGrid, WaveFunction
from laserctl.propagation import KineticSpec, PropagationPlan
from laserctl.surfaces import PotentialSurface

# Analytic double well used wherever the calibrated surface is not needed:
# harmonic in theta around THETA_WELL, two minima at +-PHI_WELL with a barrier at phi = 0.
THETA_WELL = 1.2
PHI_WELL = np.deg2rad(75.0)
K_THETA = 0.1
BARRIER = 0.005


def well_potential(theta, phi):
    c = np.cos(PHI_WELL)
    return 0.5 * K_THETA * (theta - THETA_WELL) ** 2 + BARRIER * ((np.cos(phi) - c) / (1.0 - c)) ** 2


@pytest.fixture
def toolkit(tmp_path):
    """Create a testing toolkit with its data and run directories under tmp_path."""
    return create_toolkit('testing', data_dir=str(tmp_path / 'data'), output_dir=str(tmp_path / 'runs'))


@pytest.fixture
def runner():
    """A test runner for the toolkit's Click commands."""
    return CliRunner()


@pytest.fixture(scope='session')
def grid():
    """Coarse angular grid for fast propagation tests."""
    return AngularGrid(24, 24)


@pytest.fixture(scope='session')
def plan(grid):
    """Propagation plan of the analytic double well (no time grid)."""
    return PropagationPlan(grid, KineticSpec(), well_potential)


@pytest.fixture
def timed_plan(plan):
    """The analytic plan with a 1000 a.u. time grid at dt = 1."""
    return plan.with_time_grid(TimeGrid.from_step(0.0, 1000.0, 1.0))


@pytest.fixture(scope='session')
def pairs(plan):
    """Lowest eigenpairs of the analytic double well by dense diagonalization."""
    return dvr_diagonalize(plan, 8)


@pytest.fixture
def wavepacket(grid):
    """Normalized Gaussian displaced into the phi < 0 well with some momentum."""
    theta, phi = grid.mesh
    amplitudes = np.exp(-((theta - THETA_WELL - 0.1) / 0.2) ** 2 - ((phi + PHI_WELL) / 0.35) ** 2 + 2j * phi)
    return normalize(WaveFunction(grid, amplitudes))


@pytest.fixture
def three_level_model():
    """Ground doublet plus one intermediate level with parity-allowed couplings."""
    mu_x = np.zeros((3, 3))
    mu_y = np.zeros((3, 3))
    mu_x[0, 2] = mu_x[2, 0] = 0.5
    mu_y[0, 1] = mu_y[1, 0] = 0.3
    mu_y[1, 2] = mu_y[2, 1] = 0.4
    return FewLevelModel(['0+,0', '0-,0', '1+,0'], [0.0, 1e-6, 0.01], mu_x, mu_y, ['+', '-', '+'])


@pytest.fixture
def phase_gate_model():
    """Ground doublet with the 1+ and 2+ levels used by the adiabatic phase gate."""
    mu_x = np.zeros((4, 4))
    mu_y = np.zeros((4, 4))
    mu_x[2, 3] = mu_x[3, 2] = 0.5
    mu_y[1, 3] = mu_y[3, 1] = 0.4
    return FewLevelModel(['0+,0', '0-,0', '1+,0', '2+,0'], [0.0, 1e-6, 0.008, 0.016], mu_x, mu_y,
                         ['+', '-', '+', '+'])


@pytest.fixture(scope='session')
def fitted_surface():
    """QCISD surrogate with its shape fitted but without the splitting fit (fast)."""
    surface = PotentialSurface('qcisd')
    surface.fit_shape()
    surface.calibrated = True
    return surface


@pytest.fixture
def calibration_file(tmp_path, fitted_surface):
    """Surface record on disk, as written by the calibrate scenario."""
    from laserctl.utils import write_json
    return write_json(str(tmp_path / 'calibration.json'), fitted_surface.to_record())


@pytest.fixture
def scenario_file(tmp_path):
    """Factory writing scenario INI text to a file and returning its path."""
    def write(text, name='scenario.ini'):
        path = os.path.join(str(tmp_path), name)
        with open(path, 'w') as handle:
            handle.write(text)
        return path
    return write
