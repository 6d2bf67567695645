"""Time-frequency (Gabor) analysis and pulse areas of control fields."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from laserctl.errors import DomainError
from laserctl.units import hartree_to_cm1, ps_to_au

logger = logging.getLogger(__name__)

DEFAULT_TAU_PS = 0.2
DEFAULT_FREQUENCY_BINS = 512


def blackman_window(s, tau):
    """0.08 cos(4 pi s/tau) + 0.5 cos(2 pi s/tau) + 0.42 on |s| <= tau/2, zero outside."""
    s = np.asarray(s, dtype=float)
    values = 0.08 * np.cos(4.0 * np.pi * s / tau) + 0.5 * np.cos(2.0 * np.pi * s / tau) + 0.42
    return np.where(np.abs(s) <= tau / 2.0, values, 0.0)


@dataclass
class Spectrogram:
    times: np.ndarray
    omegas: np.ndarray
    power: np.ndarray
    tau: float

    @property
    def omegas_cm1(self):
        return hartree_to_cm1(self.omegas)

    def table(self):
        """Rows of (t, power over omega); the header row carries omega."""
        header = np.concatenate([[np.nan], self.omegas])
        body = np.column_stack([self.times, self.power.T])
        return np.vstack([header, body])


def _uniform_step(times):
    steps = np.diff(times)
    if steps.size == 0:
        raise DomainError('field needs at least two samples')
    dt = float(np.mean(steps))
    if not np.allclose(steps, dt, rtol=1e-6, atol=1e-9):
        raise DomainError('field samples are not uniformly spaced')
    return dt


def gabor_transform(times, values, tau=None, omegas=None, window_times=None, n_omega=DEFAULT_FREQUENCY_BINS,
                    omega_max=None):
    """F(omega, t) = |integral H(s - t) E(s) exp(i omega s) ds|^2 for omega >= 0.

    The integral runs over the support of the window with the trapezoid rule.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise DomainError('field samples and times differ in length')
    dt = _uniform_step(times)
    tau = ps_to_au(DEFAULT_TAU_PS) if tau is None else float(tau)
    if tau < 10.0 * dt:
        raise DomainError(f'window width {tau:.3g} a.u. spans fewer than 10 samples (dt = {dt:.3g})')
    if omegas is None:
        omega_max = np.pi / dt if omega_max is None else omega_max
        omegas = np.linspace(0.0, omega_max, n_omega)
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas < 0.0):
        raise DomainError('Gabor frequencies must be non-negative')
    if window_times is None:
        window_times = np.linspace(times[0], times[-1], 200)
    window_times = np.asarray(window_times, dtype=float)

    power = np.zeros((omegas.size, window_times.size))
    for k, t in enumerate(window_times):
        lo = np.searchsorted(times, t - tau / 2.0, side='left')
        hi = np.searchsorted(times, t + tau / 2.0, side='right')
        if hi - lo < 2:
            continue
        s = times[lo:hi]
        weighted = blackman_window(s - t, tau) * values[lo:hi]
        phases = np.exp(1j * np.outer(omegas, s))
        power[:, k] = np.abs(trapezoid(phases * weighted, s, axis=1)) ** 2
    return Spectrogram(window_times, omegas, power, tau)


def dominant_frequency(spectrogram, t):
    k = int(np.argmin(np.abs(spectrogram.times - t)))
    column = spectrogram.power[:, k]
    if np.max(column) == np.min(column):
        raise DomainError(f'spectrogram is flat at t = {t:.3g}; no dominant frequency')
    return float(spectrogram.omegas[int(np.argmax(column))])


def pulse_area(times, values, dipole, signed=False):
    """|mu| integral |E| dt (or the signed integral of E)."""
    values = np.asarray(values, dtype=float)
    integrand = values if signed else np.abs(values)
    return float(trapezoid(integrand, np.asarray(times, dtype=float)) * abs(dipole))


def ridge(spectrogram):
    """Dominant frequency at every window time (NaN where the column is flat)."""
    out = np.full(spectrogram.times.size, np.nan)
    for k, t in enumerate(spectrogram.times):
        try:
            out[k] = dominant_frequency(spectrogram, t)
        except DomainError:
            continue
    return out
