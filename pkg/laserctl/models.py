"""Core value types: grids, wavefunctions, time grids, eigenpairs, fields."""

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from laserctl.errors import DomainError, GridMismatchError


class Polarization(enum.Enum):
    X = 'x'
    Y = 'y'


class Parity(enum.Enum):
    EVEN = '+'
    ODD = '-'
    NONE = 'none'


class Well(enum.Enum):
    R = 'R'
    DOUBLE = 'double-well'


class SurfaceVariant(enum.Enum):
    QCISD = 'qcisd'
    MP2 = 'mp2'


class KineticConvention(enum.Enum):
    WILSON = 'wilson'
    EUCLIDEAN = 'euclidean'


class ScenarioKind(enum.Enum):
    CALIBRATE = 'calibrate'
    EIGEN = 'eigen'
    FSTIRAP_LOCALIZE = 'fstirap-localize'
    LOCALIZED_SWAP = 'localized-swap'
    PHASE_GATE_ADIABATIC = 'phase-gate-adiabatic'
    CNOT_ADIABATIC = 'cnot-adiabatic'
    ROBUSTNESS_SCAN = 'robustness-scan'
    OCT_LOCALIZE = 'oct-localize'
    OCT_HADAMARD = 'oct-hadamard'
    OCT_PHASE = 'oct-phase'
    OCT_CNOT = 'oct-cnot'
    OCT_BIFURCATION = 'oct-bifurcation'
    LOCAL_CONTROL = 'local-control'
    GABOR = 'gabor'


@dataclass(frozen=True)
class AngularGrid:
    """Tensor grid on (0, pi) x [-pi, pi).

    theta nodes are the interior points of the sine transform,
    theta_j = j pi / (n_theta + 1), j = 1..n_theta, so no node sits on a pole.
    phi nodes are periodic, phi_k = -pi + 2 pi k / n_phi.
    """
    n_theta: int
    n_phi: int

    def __post_init__(self):
        if self.n_theta < 8 or self.n_phi < 8:
            raise DomainError(f'grid too coarse: {self.n_theta} x {self.n_phi} (minimum 8 x 8)')

    @cached_property
    def theta(self):
        return np.pi * np.arange(1, self.n_theta + 1) / (self.n_theta + 1)

    @cached_property
    def phi(self):
        return -np.pi + 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi

    @property
    def d_theta(self):
        return np.pi / (self.n_theta + 1)

    @property
    def d_phi(self):
        return 2.0 * np.pi / self.n_phi

    @property
    def weight(self):
        return self.d_theta * self.d_phi

    @property
    def shape(self):
        return (self.n_theta, self.n_phi)

    @cached_property
    def mesh(self):
        return np.meshgrid(self.theta, self.phi, indexing='ij')


class WaveFunction:
    """Complex amplitudes on an ``AngularGrid`` (Wilson convention, measure dtheta dphi)."""

    def __init__(self, grid, amplitudes):
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if amplitudes.shape != grid.shape:
            raise GridMismatchError(f'amplitudes of shape {amplitudes.shape} do not fit grid {grid.shape}')
        if not np.all(np.isfinite(amplitudes)):
            raise DomainError('wavefunction contains non-finite amplitudes')
        self.grid = grid
        self.amplitudes = amplitudes

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.weight))

    def copy(self):
        return WaveFunction(self.grid, self.amplitudes.copy())

    def __repr__(self):
        return f'<WaveFunction {self.grid.n_theta}x{self.grid.n_phi} norm={self.norm():.6f}>'


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time axis in atomic units."""
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError(f'time grid needs at least one step, got {self.n_steps}')
        if not self.t_end > self.t_start:
            raise DomainError(f'time grid end {self.t_end} is not after start {self.t_start}')

    @classmethod
    def from_step(cls, t_start, t_end, dt):
        n_steps = max(1, int(round((t_end - t_start) / dt)))
        return cls(t_start, t_end, n_steps)

    @property
    def dt(self):
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def duration(self):
        return self.t_end - self.t_start

    def nodes(self):
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def midpoints(self):
        return self.t_start + self.dt * (np.arange(self.n_steps) + 0.5)


@dataclass(frozen=True)
class EigenLabel:
    well: Well
    parity: Parity
    n_phi_quanta: int
    n_theta_quanta: int

    @property
    def ket(self):
        if self.well is Well.R:
            return f'{self.n_phi_quanta},{self.n_theta_quanta}_R'
        sign = self.parity.value if self.parity is not Parity.NONE else '?'
        return f'{self.n_phi_quanta}{sign},{self.n_theta_quanta}'

    def __str__(self):
        return f'|{self.ket}>'


@dataclass
class EigenPair:
    energy: float
    state: WaveFunction
    label: EigenLabel
    residual: float = 0.0


@dataclass
class PolarizedField:
    """Cartesian field components sampled at ``times`` (a.u.)."""
    times: np.ndarray
    ex: np.ndarray
    ey: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.ex = np.asarray(self.ex, dtype=float)
        self.ey = np.asarray(self.ey, dtype=float)
        if not (self.times.shape == self.ex.shape == self.ey.shape) or self.times.ndim != 1:
            raise GridMismatchError('field components and sample times must be 1-D and of equal length')

    @classmethod
    def zeros(cls, time_grid):
        mids = time_grid.midpoints()
        return cls(mids, np.zeros_like(mids), np.zeros_like(mids))

    @classmethod
    def from_function(cls, time_grid, func):
        """Sample ``func(t) -> (ex, ey)`` at the step midpoints of ``time_grid``."""
        mids = time_grid.midpoints()
        ex, ey = func(mids)
        return cls(mids, np.broadcast_to(ex, mids.shape).copy(), np.broadcast_to(ey, mids.shape).copy())

    def midpoint_samples(self, time_grid):
        mids = time_grid.midpoints()
        if self.times.shape != mids.shape or not np.allclose(self.times, mids, rtol=0.0,
                                                             atol=1e-9 * max(1.0, abs(time_grid.t_end))):
            raise GridMismatchError(
                f'field has {self.times.size} samples that are not the {mids.size} step midpoints of the time grid')
        return self.ex, self.ey

    def scaled(self, factor):
        return PolarizedField(self.times.copy(), self.ex * factor, self.ey * factor, dict(self.metadata))

    def reversed(self):
        """Field of the time-reversed problem on the mirrored grid."""
        t0, t1 = self.times[0], self.times[-1]
        return PolarizedField(t0 + t1 - self.times[::-1], self.ex[::-1].copy(), self.ey[::-1].copy(),
                              dict(self.metadata))

    def component(self, polarization):
        return self.ex if Polarization(polarization) is Polarization.X else self.ey

    def copy(self):
        return PolarizedField(self.times.copy(), self.ex.copy(), self.ey.copy(), dict(self.metadata))
