"""Wilson-convention kinetic operator and split-operator wavepacket propagation.

Grid functions carry the measure dtheta dphi, so the kinetic operator is

    T = -(1/2 I_theta) d2/dtheta2 - (1/(2 I_phi sin^2 theta)) d2/dphi2 + v(theta)

with the extra potential v(theta) = -(1/2 I_theta)(1/2 + cot^2(theta)/4). The
theta part is diagonal in the type-I sine basis (Dirichlet at both poles) and
the phi part in the Fourier basis of each theta row.
"""

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from laserctl.errors import DomainError, GridMismatchError
from laserctl.grid import inner_product, project_populations
from laserctl.models import KineticConvention, WaveFunction
from laserctl.surfaces import DIPOLE, I_PHI, I_THETA

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KineticSpec:
    I_theta: float = I_THETA
    I_phi: float = I_PHI
    convention: KineticConvention = KineticConvention.WILSON

    def __post_init__(self):
        if self.I_theta <= 0.0 or self.I_phi <= 0.0:
            raise DomainError(f'moments of inertia must be positive, got {self.I_theta}, {self.I_phi}')


def extra_potential_v(theta, kinetic):
    theta = np.asarray(theta, dtype=float)
    if np.any((theta <= 0.0) | (theta >= np.pi)):
        raise DomainError('extra potential is singular at the poles theta = 0, pi')
    cot = np.cos(theta) / np.sin(theta)
    return -(0.5 + 0.25 * cot ** 2) / (2.0 * kinetic.I_theta)


def _dst(a):
    if np.iscomplexobj(a):
        return (sfft.dst(a.real, type=1, axis=-2, norm='ortho')
                + 1j * sfft.dst(a.imag, type=1, axis=-2, norm='ortho'))
    return sfft.dst(a, type=1, axis=-2, norm='ortho')


class PropagationPlan:
    """Precomputed operators for one grid, kinetic model, surface and time step.

    Step-size guard: a time grid is accepted only when dt * max|V + v| stays below
    ``accuracy_guard``, and ``check_field`` adds the peak dipole coupling to that
    bound before a propagation. The kinetic factors are exact exponentials in the
    DST/FFT bases, so dt * (max|V| + max T) above the guard is only logged.
    """

    def __init__(self, grid, kinetic, potential, time_grid=None, dipole=DIPOLE, accuracy_guard=0.5):
        kinetic = kinetic or KineticSpec()
        if kinetic.convention is not KineticConvention.WILSON:
            raise DomainError('grid propagation is formulated in the Wilson convention; '
                              'use eigen.euclidean_reference_levels for the Euclidean form')
        self.grid = grid
        self.kinetic = kinetic
        self.accuracy_guard = accuracy_guard
        theta, phi = grid.mesh
        self.potential_values = np.asarray(potential(theta, phi), dtype=float)
        self.v_total = self.potential_values + extra_potential_v(theta, kinetic)
        self.mu_x = np.asarray(dipole.x(theta, phi), dtype=float)
        self.mu_y = np.asarray(dipole.y(theta, phi), dtype=float)

        k = np.arange(1, grid.n_theta + 1, dtype=float)
        self.kin_theta = (k ** 2 / (2.0 * kinetic.I_theta))[:, None]
        m = sfft.fftfreq(grid.n_phi, d=1.0 / grid.n_phi)
        inv_sin2 = 1.0 / np.sin(grid.theta) ** 2
        self.kin_phi = (m ** 2)[None, :] * inv_sin2[:, None] / (2.0 * kinetic.I_phi)
        m_half = np.arange(grid.n_phi // 2 + 1, dtype=float)
        self.kin_phi_half = (m_half ** 2)[None, :] * inv_sin2[:, None] / (2.0 * kinetic.I_phi)

        self.time_grid = None
        if time_grid is not None:
            self._prepare(time_grid)

    @property
    def potential_bound(self):
        return float(np.max(np.abs(self.v_total)))

    @property
    def kinetic_bound(self):
        return float(self.kin_theta.max() + self.kin_phi.max())

    @property
    def dipole_bound(self):
        return float(max(np.max(np.abs(self.mu_x)), np.max(np.abs(self.mu_y))))

    def _prepare(self, time_grid):
        dt = time_grid.dt
        if dt * self.potential_bound >= self.accuracy_guard:
            raise DomainError(f'time step {dt:.3g} a.u. too large: dt * max|V| = '
                              f'{dt * self.potential_bound:.3g} >= {self.accuracy_guard}')
        if dt * (self.potential_bound + self.kinetic_bound) >= self.accuracy_guard:
            logger.debug(f"Kinetic spectral bound {self.kinetic_bound:.3g} hartree exceeds the "
                         f"split-step guard at dt={dt:.3g}; kinetic factors are applied exactly")
        self.time_grid = time_grid
        self.dt = dt
        forward = {
            'theta': np.exp(-0.5j * dt * self.kin_theta),
            'phi': np.exp(-1j * dt * self.kin_phi),
        }
        self._factors = {1: forward, -1: {key: np.conj(value) for key, value in forward.items()}}

    def with_time_grid(self, time_grid):
        plan = copy.copy(self)
        plan._prepare(time_grid)
        return plan

    def require_time_grid(self):
        if self.time_grid is None:
            raise GridMismatchError('propagation plan has no time grid')
        return self.time_grid


def apply_h0_array(a, plan):
    t_theta = _dst(_dst(a) * plan.kin_theta)
    if np.iscomplexobj(a):
        t_phi = sfft.ifft(sfft.fft(a, axis=-1) * plan.kin_phi, axis=-1)
    else:
        t_phi = sfft.irfft(sfft.rfft(a, axis=-1) * plan.kin_phi_half, n=plan.grid.n_phi, axis=-1)
    return t_theta + t_phi + plan.v_total * a


def apply_h0(psi, plan):
    """H0 psi (field-free Hamiltonian) in hartree."""
    if psi.grid != plan.grid:
        raise GridMismatchError('wavefunction and plan live on different grids')
    return WaveFunction(psi.grid, apply_h0_array(psi.amplitudes, plan))


def step_array(a, ex, ey, plan, direction=1):
    """One Strang step of length direction * dt; ``a`` may carry leading batch axes."""
    factors = plan._factors[direction]
    w = plan.v_total - plan.mu_x * ex - plan.mu_y * ey
    half = np.exp(-0.5j * direction * plan.dt * w)
    a = a * half
    a = _dst(_dst(a) * factors['theta'])
    a = sfft.ifft(sfft.fft(a, axis=-1) * factors['phi'], axis=-1)
    a = _dst(_dst(a) * factors['theta'])
    return a * half


def imaginary_step_array(a, plan, dtau):
    """exp(-H0 dtau) in the same Strang splitting; real input stays real."""
    half = np.exp(-0.5 * dtau * plan.v_total)
    theta_half = np.exp(-0.5 * dtau * plan.kin_theta)
    phi_full = np.exp(-dtau * plan.kin_phi_half)
    a = a * half
    a = _dst(_dst(a) * theta_half)
    a = sfft.irfft(sfft.rfft(a, axis=-1) * phi_full, n=plan.grid.n_phi, axis=-1)
    a = _dst(_dst(a) * theta_half)
    return a * half


def check_field(field_samples, plan):
    ex, ey = field_samples
    peak = float(max(np.max(np.abs(ex), initial=0.0), np.max(np.abs(ey), initial=0.0)))
    bound = plan.dt * (plan.potential_bound + peak * plan.dipole_bound)
    if bound >= plan.accuracy_guard:
        raise DomainError(f'field too strong for dt={plan.dt:.3g}: dt * max|W| = {bound:.3g}')


def step(psi, ex, ey, plan):
    return WaveFunction(psi.grid, step_array(psi.amplitudes, ex, ey, plan))


@dataclass
class Trajectory:
    times: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    theta_avg: np.ndarray
    phi_avg: np.ndarray
    final: WaveFunction
    populations: np.ndarray = None
    snapshots: list = field(default_factory=list)

    def table(self):
        """Columns (t, norm, <H0>, <theta>, <phi>, populations...) as one array."""
        columns = [self.times, self.norm, self.energy, self.theta_avg, self.phi_avg]
        if self.populations is not None:
            columns.extend(self.populations.T)
        return np.column_stack(columns)


def observe(a, plan):
    """(norm^2, <H0>, <theta>, <phi>) of one amplitude array."""
    weight = plan.grid.weight
    density = np.abs(a) ** 2
    norm_sq = float(density.sum() * weight)
    theta, phi = plan.grid.mesh
    energy = float(np.real(np.vdot(a, apply_h0_array(a, plan))) * weight) / norm_sq
    return (norm_sq, energy,
            float((density * theta).sum() * weight) / norm_sq,
            float((density * phi).sum() * weight) / norm_sq)


def propagate(psi0, field_, plan, stride=100, basis=None, snapshot_stride=None):
    """Propagate ``psi0`` through ``field_`` (sampled at the step midpoints).

    Observables are recorded at t0, every ``stride`` steps and at the final time.
    """
    time_grid = plan.require_time_grid()
    if psi0.grid != plan.grid:
        raise GridMismatchError('initial state and plan live on different grids')
    samples = field_.midpoint_samples(time_grid)
    check_field(samples, plan)
    ex, ey = samples
    nodes = time_grid.nodes()

    rows, pops, snapshots = [], [], []
    a = psi0.amplitudes.copy()

    def record(i):
        rows.append((nodes[i],) + observe(a, plan))
        if basis is not None:
            pops.append(project_populations(WaveFunction(plan.grid, a), basis).values)

    record(0)
    for i in range(time_grid.n_steps):
        a = step_array(a, ex[i], ey[i], plan)
        if (i + 1) % stride == 0 or i + 1 == time_grid.n_steps:
            record(i + 1)
        if snapshot_stride and (i + 1) % snapshot_stride == 0:
            snapshots.append((nodes[i + 1], WaveFunction(plan.grid, a.copy())))

    data = np.array(rows)
    final = WaveFunction(plan.grid, a)
    logger.debug(f"Propagated {time_grid.n_steps} steps; norm drift "
                 f"{abs(data[-1, 1] - data[0, 1]):.2e}")
    return Trajectory(times=data[:, 0], norm=np.sqrt(data[:, 1]), energy=data[:, 2],
                      theta_avg=data[:, 3], phi_avg=data[:, 4], final=final,
                      populations=np.array(pops) if basis is not None else None,
                      snapshots=snapshots)


def interaction_amplitudes(psi, pairs, t):
    """<e_k|psi(t)> exp(i E_k t): coefficients with the free phases divided out."""
    return np.array([inner_product(p.state, psi) * np.exp(1j * p.energy * t) for p in pairs])
