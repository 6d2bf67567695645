"""Potential energy and dipole surfaces of the three-well bifurcating model.

The potential is a smooth surrogate built so that its stationary points sit
exactly on prescribed energies:

    V(theta, phi) = P(theta) + W(theta) (U_P(phi) - h) + (1 - W(theta)) U_R(phi)

P(theta) is a C2 piecewise quintic through the reactant minimum, the
reactant-side saddle and the product trough. W(theta) switches between the
product side (theta < pi/2, a symmetric double well in phi) and the reactant
side (a single well at phi = 0). On the phi = 0 line V reduces to P(theta),
so R, TS1 and TS2 lie on the knots of P and the remaining freedom (trough
position, double-well barrier, reactant phi stiffness) is fitted to the
product minima energy, the reactant frequencies and the tunneling splitting.
"""

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.interpolate import BPoly
from scipy.linalg import eigh
from scipy.optimize import minimize

from laserctl.errors import CalibrationError, DomainError
from laserctl.grid import fourier_kinetic_matrix
from laserctl.models import SurfaceVariant
from laserctl.units import cm1_to_hartree, ev_to_hartree, hartree_to_cm1, hartree_to_ev, tunneling_time_ps

logger = logging.getLogger(__name__)

I_THETA = 6160.0
I_PHI = 4430.0

DIPOLE_COEFFICIENTS = (0.7, 1.1, 0.5, -1.0, -1.11)


@dataclass(frozen=True)
class DipoleSurface:
    """Dipole components of the bending model (atomic units)."""
    coefficients: tuple = DIPOLE_COEFFICIENTS

    def mu_cs(self, theta):
        x = np.cos(theta)
        return sum(a * x ** k for k, a in enumerate(self.coefficients))

    @staticmethod
    def _f1(theta):
        return 0.5 * np.arctan(-3.0 * (theta - np.pi / 2)) + 0.9

    @staticmethod
    def _f2(theta):
        return 0.5 * np.arctan(3.0 * (theta - np.pi / 2)) + 0.9

    @staticmethod
    def _f3(theta):
        return 0.5 * np.arctan(3.0 * (theta - np.pi / 2)) + 2.4

    def x(self, theta, phi):
        c = np.cos(phi)
        return self.mu_cs(theta) * (self._f1(theta) * c + self._f2(theta) * (0.25 * c ** 2 + 1.75 * c - 1.0))

    def y(self, theta, phi):
        return self.mu_cs(theta) * self._f3(theta) * np.sin(phi)


DIPOLE = DipoleSurface()


def dipole_x(theta, phi):
    return DIPOLE.x(theta, phi)


def dipole_y(theta, phi):
    return DIPOLE.y(theta, phi)


@dataclass(frozen=True)
class SurfaceTargets:
    """Energies (eV, relative to the product minima) and frequencies (cm^-1)."""
    r_ev: float
    ts1_ev: float
    ts2_ev: float
    splitting_ev: float = 4.3e-5
    omega_theta_r_cm1: float = 1715.0
    omega_phi_r_cm1: float = 1578.0
    omega_theta_p_cm1: float = 1916.0


TARGETS = {
    SurfaceVariant.QCISD: SurfaceTargets(r_ev=0.181, ts1_ev=1.854, ts2_ev=0.195),
    SurfaceVariant.MP2: SurfaceTargets(r_ev=0.451, ts1_ev=1.911, ts2_ev=0.216),
}


@dataclass
class SurfaceParameters:
    theta_p: float = 0.78
    theta_ts1: float = 1.75
    theta_r: float = 2.25
    phi_p: float = float(np.deg2rad(75.0))
    curvature_ts1: float = -0.1
    wall_ev: float = 3.0
    switch_steepness: float = 8.0
    switch_center: float = float(np.pi / 2)
    # fitted by PotentialSurface.fit_shape
    barrier_p: float = 0.0
    stiffness_r: float = 0.0


@dataclass
class StationaryPoint:
    name: str
    theta: float
    phi: float
    energy_ev: float
    kind: str
    gradient_norm: float

    def to_dict(self):
        return asdict(self)


@dataclass
class CalibrationReport:
    variant: str
    stationary_points: list
    splitting_ev: float
    splitting_method: str
    tunneling_time_ps: float
    frequencies_cm1: dict
    parameters: dict
    residuals: dict
    success: bool
    message: str = ''
    iterations: int = 0

    def point(self, name):
        for p in self.stationary_points:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self):
        data = asdict(self)
        data['stationary_points'] = [p.to_dict() for p in self.stationary_points]
        return data


class PotentialSurface:
    """Callable V(theta, phi) in hartree, zero at the product minima once calibrated."""

    def __init__(self, variant=SurfaceVariant.QCISD, parameters=None, targets=None,
                 inertia=(I_THETA, I_PHI)):
        self.variant = SurfaceVariant(variant)
        self.targets = targets or TARGETS[self.variant]
        self.parameters = parameters or SurfaceParameters()
        self.I_theta, self.I_phi = inertia
        self.offset = 0.0
        self.calibrated = False
        self.report = None
        self._check_targets()
        self._build_profile()

    def __repr__(self):
        state = 'calibrated' if self.calibrated else 'uncalibrated'
        return f'<PotentialSurface {self.variant.value} {state}>'

    def _check_targets(self):
        t, p = self.targets, self.parameters
        if not (t.ts1_ev > t.r_ev > 0.0 and t.ts1_ev > t.ts2_ev > 0.0):
            raise CalibrationError(
                f'infeasible targets: need TS1 > R > 0 and TS1 > TS2 > 0 (got R={t.r_ev}, '
                f'TS1={t.ts1_ev}, TS2={t.ts2_ev} eV)')
        if not (0.0 < p.theta_p < p.theta_ts1 < p.theta_r < np.pi):
            raise CalibrationError(
                f'knots out of order: theta_p={p.theta_p}, theta_ts1={p.theta_ts1}, theta_r={p.theta_r}')

    def _build_profile(self):
        t, p = self.targets, self.parameters
        k_p = self.I_theta * cm1_to_hartree(t.omega_theta_p_cm1) ** 2
        k_r = self.I_theta * cm1_to_hartree(t.omega_theta_r_cm1) ** 2
        e_r, e_ts1, e_ts2 = (ev_to_hartree(v) for v in (t.r_ev, t.ts1_ev, t.ts2_ev))
        wall = ev_to_hartree(p.wall_ev)
        knots = [0.0, p.theta_p, p.theta_ts1, p.theta_r, np.pi]
        values = [[e_ts2 + wall, 0.0, 0.0],
                  [e_ts2, 0.0, k_p],
                  [e_ts1, 0.0, p.curvature_ts1],
                  [e_r, 0.0, k_r],
                  [e_r + wall, 0.0, 0.0]]
        self._profile = BPoly.from_derivatives(knots, values)
        self._profile_d1 = self._profile.derivative(1)
        self._profile_d2 = self._profile.derivative(2)

    # switching function and its derivatives
    def _switch(self, theta):
        p = self.parameters
        u = p.switch_steepness * (p.switch_center - theta)
        tanh = np.tanh(u)
        sech2 = 1.0 - tanh ** 2
        kappa = p.switch_steepness
        return 0.5 * (1.0 + tanh), -0.5 * kappa * sech2, -kappa ** 2 * sech2 * tanh

    def _double_well(self, phi):
        p = self.parameters
        c0 = np.cos(p.phi_p)
        a = p.barrier_p / (1.0 - c0) ** 2
        c, s = np.cos(phi), np.sin(phi)
        return (a * (c - c0) ** 2,
                -2.0 * a * (c - c0) * s,
                2.0 * a * (s ** 2 - c ** 2 + c0 * c))

    def _single_well(self, phi):
        g = self.parameters.stiffness_r
        return g * (1.0 - np.cos(phi)), g * np.sin(phi), g * np.cos(phi)

    def raw(self, theta, phi):
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if np.any((theta < 0.0) | (theta > np.pi)):
            raise DomainError('theta outside [0, pi]')
        w, _, _ = self._switch(theta)
        u_p, _, _ = self._double_well(phi)
        u_r, _, _ = self._single_well(phi)
        return self._profile(theta) + w * (u_p - self.parameters.barrier_p) + (1.0 - w) * u_r

    def __call__(self, theta, phi):
        return potential(theta, phi, self)

    def gradient(self, theta, phi):
        w, w1, _ = self._switch(theta)
        u_p, u_p1, _ = self._double_well(phi)
        u_r, u_r1, _ = self._single_well(phi)
        d_theta = self._profile_d1(theta) + w1 * (u_p - self.parameters.barrier_p - u_r)
        d_phi = w * u_p1 + (1.0 - w) * u_r1
        return np.array([float(d_theta), float(d_phi)])

    def hessian(self, theta, phi):
        w, w1, w2 = self._switch(theta)
        u_p, u_p1, u_p2 = self._double_well(phi)
        u_r, u_r1, u_r2 = self._single_well(phi)
        h_tt = self._profile_d2(theta) + w2 * (u_p - self.parameters.barrier_p - u_r)
        h_tp = w1 * (u_p1 - u_r1)
        h_pp = w * u_p2 + (1.0 - w) * u_r2
        return np.array([[float(h_tt), float(h_tp)], [float(h_tp), float(h_pp)]])

    def find_stationary(self, theta, phi, max_iterations=200, tolerance=1e-12):
        """Damped Newton search for the stationary point nearest to (theta, phi)."""
        x = np.array([theta, phi], dtype=float)
        for _ in range(max_iterations):
            g = self.gradient(*x)
            if np.linalg.norm(g) < tolerance:
                break
            step = -np.linalg.solve(self.hessian(*x), g)
            size = np.linalg.norm(step)
            if size > 0.05:
                step *= 0.05 / size
            x = x + step
            x[0] = np.clip(x[0], 1e-3, np.pi - 1e-3)
        return float(x[0]), float(x[1]), float(np.linalg.norm(self.gradient(*x)))

    def fit_shape(self, max_iterations=60):
        """Set the double-well barrier so the product minima sit at zero and the
        reactant phi stiffness so the reactant phi frequency matches its target."""
        p, t = self.parameters, self.targets
        if p.barrier_p <= 0.0:
            p.barrier_p = ev_to_hartree(t.ts2_ev)
        omega_phi = cm1_to_hartree(t.omega_phi_r_cm1)
        c0 = np.cos(p.phi_p)
        theta, phi = p.theta_p, p.phi_p
        for _ in range(max_iterations):
            w_r, _, _ = self._switch(p.theta_r)
            curvature_p0 = -2.0 * p.barrier_p / (1.0 - c0)
            p.stiffness_r = (self.I_phi * np.sin(p.theta_r) ** 2 * omega_phi ** 2 - w_r * curvature_p0) / (1.0 - w_r)
            theta, phi, _ = self.find_stationary(theta, phi)
            energy = float(self.raw(theta, phi))
            if abs(energy) < 1e-15:
                break
            w, _, _ = self._switch(theta)
            p.barrier_p += energy / w
        self.offset = float(self.raw(theta, phi))
        return theta, phi

    def stationary_points(self):
        p = self.parameters
        seeds = [('R', p.theta_r, 0.0), ('TS1', p.theta_ts1, 0.0), ('TS2', p.theta_p, 0.0),
                 ('P', p.theta_p, p.phi_p), ("P'", p.theta_p, -p.phi_p)]
        points = []
        for name, theta0, phi0 in seeds:
            theta, phi, gnorm = self.find_stationary(theta0, phi0)
            eigenvalues = np.linalg.eigvalsh(self.hessian(theta, phi))
            negative = int(np.sum(eigenvalues < 0.0))
            kind = {0: 'minimum', 1: 'saddle'}.get(negative, 'maximum')
            energy = hartree_to_ev(float(self.raw(theta, phi)) - self.offset)
            points.append(StationaryPoint(name, theta, phi, energy, kind, gnorm))
        return points

    def harmonic_frequencies(self, theta, phi):
        """(omega_theta, omega_phi) in cm^-1 from the G-matrix weighted Hessian.

        Imaginary frequencies are returned as negative numbers.
        """
        g_half = np.diag([1.0 / np.sqrt(self.I_theta), 1.0 / np.sqrt(self.I_phi * np.sin(theta) ** 2)])
        values, vectors = np.linalg.eigh(g_half @ self.hessian(theta, phi) @ g_half)
        omegas = np.sign(values) * np.sqrt(np.abs(values))
        theta_like = int(np.argmax(np.abs(vectors[0])))
        return hartree_to_cm1(omegas[theta_like]), hartree_to_cm1(omegas[1 - theta_like])

    def phi_cut_splitting(self, n_phi=256):
        """Ground doublet splitting (eV) of the 1-D phi Hamiltonian through the product minima."""
        theta = self.parameters.theta_p
        phi = -np.pi + 2.0 * np.pi * np.arange(n_phi) / n_phi
        h = fourier_kinetic_matrix(n_phi, self.I_phi * np.sin(theta) ** 2)
        h[np.diag_indices(n_phi)] += self.raw(np.full(n_phi, theta), phi)
        levels = eigh(h, eigvals_only=True, subset_by_index=[0, 1])
        return hartree_to_ev(float(levels[1] - levels[0]))

    def profile_extrema(self, samples=20000):
        theta = np.linspace(1e-3, np.pi - 1e-3, samples)
        slope = self._profile_d1(theta)
        return int(np.sum(np.sign(slope[1:]) != np.sign(slope[:-1])))

    def with_trough(self, theta_p):
        parameters = replace(self.parameters, theta_p=float(theta_p), barrier_p=0.0, stiffness_r=0.0)
        trial = PotentialSurface(self.variant, parameters, self.targets, (self.I_theta, self.I_phi))
        trial.fit_shape()
        return trial

    def to_record(self):
        return {'variant': self.variant.value, 'parameters': asdict(self.parameters),
                'targets': asdict(self.targets), 'inertia': [self.I_theta, self.I_phi],
                'offset': self.offset, 'calibrated': self.calibrated,
                'report': self.report.to_dict() if self.report else None}

    @classmethod
    def from_record(cls, record):
        surface = cls(record['variant'], SurfaceParameters(**record['parameters']),
                      SurfaceTargets(**record['targets']), tuple(record['inertia']))
        surface.offset = float(record['offset'])
        surface.calibrated = bool(record['calibrated'])
        return surface


def potential(theta, phi, surface):
    """V(theta, phi) in hartree relative to the product minima."""
    if not surface.calibrated:
        raise CalibrationError(f'{surface!r} has not been calibrated')
    return surface.raw(theta, phi) - surface.offset


def calibrate(variant=SurfaceVariant.QCISD, targets=None, parameters=None,
              splitting_solver=None, max_iterations=200):
    """Fit the surrogate surface to the target energetics.

    The trough position is optimised with a Nelder-Mead simplex on the 1-D phi-cut
    splitting; ``splitting_solver(surface) -> eV``, when given, re-evaluates the
    splitting on the full angular grid for the report.
    """
    variant = SurfaceVariant(variant)
    surface = PotentialSurface(variant, parameters, targets)
    target = surface.targets.splitting_ev
    logger.info(f"Calibrating {variant.value} surface (splitting target {target:.3e} eV)")

    def objective(x):
        theta_p = float(x[0])
        if not 0.3 < theta_p < surface.parameters.theta_ts1 - 0.3:
            return 1e6
        try:
            splitting = surface.with_trough(theta_p).phi_cut_splitting()
        except (np.linalg.LinAlgError, CalibrationError):
            return 1e6
        if splitting <= 0.0:
            return 1e6
        return float(np.log(splitting / target) ** 2)

    result = minimize(objective, [surface.parameters.theta_p], method='Nelder-Mead',
                      options={'xatol': 1e-5, 'fatol': 1e-8, 'maxiter': max_iterations,
                               'initial_simplex': [[surface.parameters.theta_p],
                                                   [surface.parameters.theta_p + 0.05]]})
    fitted = surface.with_trough(float(result.x[0]))
    fitted.calibrated = True

    points = fitted.stationary_points()
    t = fitted.targets
    expected = {'R': t.r_ev, 'TS1': t.ts1_ev, 'TS2': t.ts2_ev, 'P': 0.0, "P'": 0.0}
    residuals = {p.name: p.energy_ev - expected[p.name] for p in points}

    r = next(p for p in points if p.name == 'R')
    prod = next(p for p in points if p.name == 'P')
    omega_theta_r, omega_phi_r = fitted.harmonic_frequencies(r.theta, r.phi)
    omega_theta_p, omega_phi_p = fitted.harmonic_frequencies(prod.theta, prod.phi)
    frequencies = {'R_theta': omega_theta_r, 'R_phi': omega_phi_r,
                   'P_theta': omega_theta_p, 'P_phi': omega_phi_p}
    residuals['omega_R_theta_cm1'] = omega_theta_r - t.omega_theta_r_cm1
    residuals['omega_R_phi_cm1'] = omega_phi_r - t.omega_phi_r_cm1

    splitting, method = fitted.phi_cut_splitting(), 'phi-cut'
    if splitting_solver is not None:
        splitting, method = splitting_solver(fitted), 'grid'
    residuals['log_splitting'] = float(np.log(splitting / target))

    kinds = {p.name: p.kind for p in points}
    problems = []
    if any(abs(residuals[name]) > 1e-3 for name in expected):
        problems.append('stationary energies off target')
    if kinds != {'R': 'minimum', 'TS1': 'saddle', 'TS2': 'saddle', 'P': 'minimum', "P'": 'minimum'}:
        problems.append(f'unexpected topology {kinds}')
    if any(p.gradient_norm >= 1e-8 for p in points):
        problems.append('stationary search did not converge')
    if fitted.profile_extrema() != 3:
        problems.append('spurious extrema along the minimum energy path')
    if abs(residuals['log_splitting']) > np.log(2.0):
        problems.append(f'splitting {splitting:.3e} eV more than a factor 2 from target')

    report = CalibrationReport(
        variant=variant.value,
        stationary_points=points,
        splitting_ev=splitting,
        splitting_method=method,
        tunneling_time_ps=tunneling_time_ps(splitting),
        frequencies_cm1=frequencies,
        parameters=asdict(fitted.parameters),
        residuals=residuals,
        success=not problems,
        message='; '.join(problems) or 'ok',
        iterations=int(result.nit),
    )
    fitted.report = report
    if problems:
        logger.error(f"Calibration of {variant.value} surface failed: {report.message}")
        raise CalibrationError(f'calibration failed: {report.message}', report=report)

    logger.info(f"Calibrated {variant.value} surface: splitting {splitting:.3e} eV "
                f"({method}), tunneling time {report.tunneling_time_ps:.1f} ps")
    return fitted, report
