"""Inner products, superpositions and projections on the angular grid."""

import logging
from typing import NamedTuple

import numpy as np

from laserctl.errors import DomainError, GridMismatchError, NormalizationError
from laserctl.models import Parity, WaveFunction

logger = logging.getLogger(__name__)


class Populations(NamedTuple):
    values: np.ndarray
    leakage: float


def _same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f'grids differ: {a.grid.shape} vs {b.grid.shape}')


def inner_product(a, b):
    """<a|b> with the grid quadrature weight; linear in ``b``."""
    _same_grid(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes) * a.grid.weight)


def normalize(psi):
    norm = psi.norm()
    if norm == 0.0:
        raise DomainError('cannot normalize the zero wavefunction')
    return WaveFunction(psi.grid, psi.amplitudes / norm)


def superpose(coefficients, states, normalize_result=False):
    coefficients = list(coefficients)
    states = list(states)
    if not states:
        raise DomainError('superposition of an empty set of states')
    if len(coefficients) != len(states):
        raise DomainError(f'{len(coefficients)} coefficients for {len(states)} states')
    grid = states[0].grid
    amplitudes = np.zeros(grid.shape, dtype=np.complex128)
    for c, state in zip(coefficients, states):
        if state.grid != grid:
            raise GridMismatchError('states of a superposition live on different grids')
        amplitudes += c * state.amplitudes
    result = WaveFunction(grid, amplitudes)
    return normalize(result) if normalize_result else result


def _observable_values(grid, observable):
    if callable(observable):
        theta, phi = grid.mesh
        values = np.asarray(observable(theta, phi), dtype=float)
    else:
        values = np.asarray(observable, dtype=float)
    if values.shape != grid.shape:
        raise GridMismatchError(f'observable of shape {values.shape} does not fit grid {grid.shape}')
    return values


def expectation(psi, observable, tolerance=1e-8):
    """<psi|O|psi> for a multiplicative observable (array on the grid or f(theta, phi))."""
    norm_sq = psi.norm() ** 2
    if abs(norm_sq - 1.0) > tolerance:
        raise NormalizationError(f'expectation value of an unnormalized state (norm^2 = {norm_sq:.3e})',
                                 norm=norm_sq)
    values = _observable_values(psi.grid, observable)
    return float(np.sum(np.abs(psi.amplitudes) ** 2 * values) * psi.grid.weight)


def project_populations(psi, basis):
    """|<e_k|psi>|^2 for each basis state and the population left outside the basis."""
    values = np.array([abs(inner_product(e, psi)) ** 2 for e in basis])
    total = psi.norm() ** 2
    return Populations(values, float(max(total - values.sum(), 0.0)))


def reflect_phi(psi):
    """psi(theta, -phi); exact on the periodic phi grid."""
    reflected = np.roll(psi.amplitudes[:, ::-1], 1, axis=1)
    return WaveFunction(psi.grid, reflected)


def reflect_phi_array(amplitudes):
    return np.roll(amplitudes[..., ::-1], 1, axis=-1)


def parity_project(psi, sign):
    if sign not in (1, -1):
        raise DomainError(f'parity sign must be +1 or -1, got {sign}')
    return WaveFunction(psi.grid, 0.5 * (psi.amplitudes + sign * reflect_phi(psi).amplitudes))


def parity_of(psi, tolerance=1e-6):
    reflected = reflect_phi(psi).amplitudes
    scale = np.linalg.norm(psi.amplitudes)
    if scale == 0.0:
        return Parity.NONE
    if np.linalg.norm(psi.amplitudes - reflected) <= tolerance * scale:
        return Parity.EVEN
    if np.linalg.norm(psi.amplitudes + reflected) <= tolerance * scale:
        return Parity.ODD
    return Parity.NONE


def theta_observable(theta, phi):
    return theta + 0.0 * phi


def phi_observable(theta, phi):
    return phi + 0.0 * theta


def sine_kinetic_matrix(n, inertia):
    """Dense -(1/2I) d^2/dtheta^2 on the sine-transform nodes (Dirichlet at 0 and pi)."""
    j = np.arange(1, n + 1)
    s = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(j, j) / (n + 1))
    return s @ np.diag(j.astype(float) ** 2 / (2.0 * inertia)) @ s


def fourier_kinetic_matrix(n, inertia):
    """Dense -(1/2I) d^2/dphi^2 on ``n`` periodic nodes spanning 2 pi."""
    m = np.fft.fftfreq(n, d=1.0 / n)
    d2 = np.fft.ifft(np.fft.fft(np.eye(n), axis=0) * (m ** 2)[:, None], axis=0).real
    return d2 / (2.0 * inertia)
