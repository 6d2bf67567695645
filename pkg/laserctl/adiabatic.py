"""Adiabatic pulse schemes (f-STIRAP, localization swap, phase gate, C-NOT),
their few-level rotating-wave model and robustness scans.

Couplings follow the rotating-wave convention: a pulse of amplitude E0,
envelope f(t) and phase p acting on a transition a -> b (E_b > E_a) through the
dipole element mu_ab contributes H_ab = -mu_ab E0 f(t) exp(i p) / 2 in the
interaction picture. The signed Rabi frequency of that pulse is mu_ab E0 exp(i p).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from celery import group

from laserctl.errors import DomainError, SchemeError
from laserctl.grid import inner_product
from laserctl.models import Polarization, PolarizedField
from laserctl.units import MAX_RABI_AU

logger = logging.getLogger(__name__)

# Pulses without an explicit transition drive every pair within this window (hartree).
RESONANCE_WINDOW = 2e-4
SELECTION_TOLERANCE = 1e-8


@dataclass(frozen=True)
class GaussianPulse:
    amplitude: float
    center: float
    width: float
    carrier: float
    phase: float = 0.0
    polarization: Polarization = Polarization.X
    transition: tuple = None

    def __post_init__(self):
        if self.width <= 0.0:
            raise SchemeError(f'pulse width must be positive, got {self.width}')
        if self.amplitude < 0.0:
            raise SchemeError('pulse amplitude must be non-negative; encode signs in the phase')
        object.__setattr__(self, 'polarization', Polarization(self.polarization))

    def envelope(self, t):
        return self.amplitude * np.exp(-(np.asarray(t) - self.center) ** 2 / (2.0 * self.width ** 2))

    def value(self, t):
        t = np.asarray(t)
        return self.envelope(t) * np.cos(self.carrier * t + self.phase)

    def to_record(self):
        return {'amplitude': self.amplitude, 'center': self.center, 'width': self.width,
                'carrier': self.carrier, 'phase': self.phase, 'polarization': self.polarization.value,
                'transition': list(self.transition) if self.transition else None}

    @classmethod
    def from_record(cls, record):
        record = dict(record)
        if record.get('transition'):
            record['transition'] = tuple(record['transition'])
        return cls(**record)


@dataclass
class PulseSequence:
    pulses: list
    time_grid: object
    check_support: bool = True

    def __post_init__(self):
        if not self.check_support:
            return
        t0, t1 = self.time_grid.t_start, self.time_grid.t_end
        slack = 1e-9 * max(1.0, abs(t1))
        for pulse in self.pulses:
            if pulse.center - 5.0 * pulse.width < t0 - slack or pulse.center + 5.0 * pulse.width > t1 + slack:
                raise SchemeError(f'pulse centred at {pulse.center:.1f} a.u. with width {pulse.width:.1f} '
                                  f'extends beyond the window [{t0:.1f}, {t1:.1f}]')

    def sample(self, t):
        t = np.asarray(t, dtype=float)
        ex, ey = np.zeros_like(t), np.zeros_like(t)
        for pulse in self.pulses:
            if pulse.polarization is Polarization.X:
                ex = ex + pulse.value(t)
            else:
                ey = ey + pulse.value(t)
        return ex, ey

    def to_field(self, time_grid=None):
        time_grid = time_grid or self.time_grid
        return PolarizedField.from_function(time_grid, self.sample)

    @property
    def peak_amplitude(self):
        return max((p.amplitude for p in self.pulses), default=0.0)


def sample_field(sequence, t):
    return sequence.sample(t)


@dataclass
class FewLevelModel:
    """Energies and dipole matrices of a handful of labelled eigenstates."""
    labels: list
    energies: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    parities: list = field(default_factory=list)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.mu_x = np.asarray(self.mu_x, dtype=float)
        self.mu_y = np.asarray(self.mu_y, dtype=float)
        n = len(self.labels)
        for name, mu in (('mu_x', self.mu_x), ('mu_y', self.mu_y)):
            if mu.shape != (n, n):
                raise SchemeError(f'{name} has shape {mu.shape}, expected {(n, n)}')
            if not np.allclose(mu, mu.T, atol=1e-12):
                raise SchemeError(f'{name} is not symmetric')

    @classmethod
    def from_eigenpairs(cls, pairs, labels, plan):
        """Dipole matrices <e_a|mu_j|e_b> by grid quadrature.

        With ``labels=None`` every pair is kept; repeated kets get a '#k' suffix.
        """
        from laserctl.eigen import find_state
        if labels is None:
            chosen = list(pairs)
        else:
            chosen = [find_state(pairs, label) for label in labels]
        names = []
        for k, pair in enumerate(chosen):
            ket = pair.label.ket
            names.append(ket if ket not in names else f'{ket}#{k}')
        weight = plan.grid.weight
        n = len(chosen)
        mu_x, mu_y = np.zeros((n, n)), np.zeros((n, n))
        for a in range(n):
            for b in range(a, n):
                prod = np.conj(chosen[a].state.amplitudes) * chosen[b].state.amplitudes
                mu_x[a, b] = mu_x[b, a] = float(np.real(np.sum(prod * plan.mu_x)) * weight)
                mu_y[a, b] = mu_y[b, a] = float(np.real(np.sum(prod * plan.mu_y)) * weight)
        return cls(names, [p.energy for p in chosen], mu_x, mu_y,
                   [p.label.parity.value for p in chosen])

    def index(self, label):
        key = label.strip().lstrip('|').rstrip('>')
        try:
            return self.labels.index(key)
        except ValueError:
            raise SchemeError(f'level |{key}> is not part of the model {self.labels}') from None

    def mu(self, polarization):
        return self.mu_x if Polarization(polarization) is Polarization.X else self.mu_y

    def dipole(self, polarization, a, b):
        return float(self.mu(polarization)[self.index(a), self.index(b)])

    def selection_violations(self, tolerance=SELECTION_TOLERANCE):
        """Pairs that break the phi-reflection selection rules (x: same parity, y: opposite)."""
        violations = []
        for a in range(len(self.labels)):
            for b in range(a + 1, len(self.labels)):
                pa = self.parities[a] if self.parities else None
                pb = self.parities[b] if self.parities else None
                if pa not in ('+', '-') or pb not in ('+', '-'):
                    continue
                if pa == pb and abs(self.mu_y[a, b]) > tolerance:
                    violations.append(('y', self.labels[a], self.labels[b], float(self.mu_y[a, b])))
                if pa != pb and abs(self.mu_x[a, b]) > tolerance:
                    violations.append(('x', self.labels[a], self.labels[b], float(self.mu_x[a, b])))
        return violations

    def alpha(self, intermediate):
        """Ratio of the Stokes couplings 0+ <-> 0- and 0- <-> intermediate."""
        return self.dipole('y', '0+,0', '0-,0') / self.dipole('y', '0-,0', intermediate)

    def to_record(self):
        return {'labels': list(self.labels), 'energies': self.energies.tolist(),
                'mu_x': self.mu_x.tolist(), 'mu_y': self.mu_y.tolist(), 'parities': list(self.parities)}

    @classmethod
    def from_record(cls, record):
        return cls(record['labels'], record['energies'], record['mu_x'], record['mu_y'],
                   record.get('parities', []))


def _signed_phase(dipole, sign=1.0):
    """Phase (0 or pi) that gives a pulse on ``dipole`` a signed Rabi frequency of sign ``sign``."""
    return 0.0 if dipole * sign > 0.0 else np.pi


def _pulse(model, polarization, lower, upper, rabi, center, width, sign=1.0, phase=0.0):
    mu = model.dipole(polarization, lower, upper)
    if abs(mu) < 1e-12:
        raise SchemeError(f'{Polarization(polarization).value}-polarized transition {lower} -> {upper} '
                          f'is dipole forbidden (mu = {mu:.2e})')
    carrier = model.energies[model.index(upper)] - model.energies[model.index(lower)]
    return GaussianPulse(amplitude=abs(rabi) / abs(mu), center=center, width=width, carrier=carrier,
                         phase=(_signed_phase(mu, sign) + phase) % (2.0 * np.pi),
                         polarization=Polarization(polarization), transition=(lower, upper))


def _check_adiabatic(rabi, duration, scheme):
    if rabi * duration < 10.0:
        logger.warning(f"{scheme}: rabi * duration = {rabi * duration:.2f} < 10, "
                       f"transfer will not be adiabatic")


def _check_rabi(rabi, force):
    if rabi < 0.0:
        raise SchemeError(f'rabi frequency must be non-negative, got {rabi}')
    if rabi > MAX_RABI_AU and not force:
        raise SchemeError(f'rabi frequency {rabi:.3g} a.u. exceeds the intensity guard '
                          f'{MAX_RABI_AU:.3g} a.u.; pass force=True to override')


def stirap_timing(duration, delay, t_start=0.0):
    """(t_stokes, t_pump, width) with both supports inside [t_start, t_start + duration]."""
    width = (duration - delay) / 10.0
    if width <= 0.0 or delay < 0.0:
        raise SchemeError(f'delay {delay} incompatible with duration {duration}')
    mid = t_start + duration / 2.0
    return mid - delay / 2.0, mid + delay / 2.0, width


def _time_grid(t_start, duration, dt):
    from laserctl.models import TimeGrid
    return TimeGrid.from_step(t_start, t_start + duration, dt)


def build_fstirap(intermediate, epsilon, duration, rabi, delay, model, t_start=0.0, dt=1.0,
                  final_ratio=None, force=False):
    """Fractional STIRAP |0+,0> -> (|0+,0> - epsilon |0-,0>)/sqrt(2).

    The Stokes field (0- <-> intermediate, y) is an early Gaussian plus a late
    component coincident with the pump (0+ <-> intermediate, x), so the ratio of
    pump to Stokes Rabi frequencies ends at ``final_ratio`` (default epsilon).
    """
    if epsilon not in (1, -1):
        raise SchemeError(f'epsilon must be +1 or -1, got {epsilon}')
    _check_rabi(rabi, force)
    _check_adiabatic(rabi, duration, 'f-STIRAP')
    ratio = epsilon if final_ratio is None else final_ratio
    t_s, t_p, width = stirap_timing(duration, delay, t_start)
    p0, m0 = '0+,0', '0-,0'
    pulses = [
        _pulse(model, 'y', m0, intermediate, rabi, t_s, width),
        _pulse(model, 'y', m0, intermediate, rabi / abs(ratio), t_p, width),
        _pulse(model, 'x', p0, intermediate, rabi, t_p, width, sign=np.sign(ratio)),
    ]
    logger.debug(f"f-STIRAP via |{intermediate}>: epsilon={epsilon:+d}, rabi={rabi:.3g}, "
                 f"delay={delay:.1f}, width={width:.1f}")
    return PulseSequence(pulses, _time_grid(t_start, duration, dt))


def build_localization_swap(epsilon, duration, rabi, delay, model, intermediate='1+,0', t_start=0.0,
                            dt=1.0, force=False):
    """(|0+,0> + epsilon |0-,0>)/sqrt(2) -> (|0+,0> - epsilon |0-,0>)/sqrt(2).

    Both fields carry an early and a late component: the pump to Stokes ratio is
    -epsilon early and +epsilon late, so the dark state rotates between the two
    localized combinations.
    """
    if epsilon not in (1, -1):
        raise SchemeError(f'epsilon must be +1 or -1, got {epsilon}')
    _check_rabi(rabi, force)
    _check_adiabatic(rabi, duration, 'localization swap')
    t_early, t_late, width = stirap_timing(duration, delay, t_start)
    p0, m0 = '0+,0', '0-,0'
    pulses = [
        _pulse(model, 'y', m0, intermediate, rabi, t_early, width),
        _pulse(model, 'y', m0, intermediate, rabi, t_late, width),
        _pulse(model, 'x', p0, intermediate, rabi, t_early, width, sign=-epsilon),
        _pulse(model, 'x', p0, intermediate, rabi, t_late, width, sign=epsilon),
    ]
    return PulseSequence(pulses, _time_grid(t_start, duration, dt))


def _three_pulse_timing(duration, delay, t_start):
    if delay is None:
        width = duration / 12.4
        delay = 1.2 * width
    else:
        width = (duration - 2.0 * delay) / 10.0
    if width <= 0.0:
        raise SchemeError(f'delay {delay} incompatible with duration {duration}')
    first = t_start + 5.0 * width
    return (first, first + delay, first + 2.0 * delay), width


def build_phase_gate(phi, duration, rabi, model, delay=None, t_start=0.0, dt=1.0, force=False):
    """Adiabatic phase gate |0+> -> |0+>, |0-> -> exp(i phi)|0->.

    Two back-to-back STIRAP transfers 0- -> 1+ -> 0- through 2+: an x pulse on
    1+ <-> 2+ with phase phi, a y pulse on 0- <-> 2+ shared by both transfers and
    a final x pulse on 1+ <-> 2+ with phase 0.
    """
    _check_rabi(rabi, force)
    _check_adiabatic(rabi, duration, 'phase gate')
    (t1, t2, t3), width = _three_pulse_timing(duration, delay, t_start)
    pulses = [
        _pulse(model, 'x', '1+,0', '2+,0', rabi, t1, width, phase=phi),
        _pulse(model, 'y', '0-,0', '2+,0', rabi, t2, width),
        _pulse(model, 'x', '1+,0', '2+,0', rabi, t3, width),
    ]
    return PulseSequence(pulses, _time_grid(t_start, duration, dt))


def build_cnot(duration, rabi, model, delay=None, phi=np.pi, t_start=0.0, dt=1.0, force=False):
    """Adiabatic C-NOT on the qubit encoded in |1+,0>, |1-,0>.

    The pumps couple h- = (|1+> - |1->)/sqrt(2) to |2-,0> (y from 1+, x from 1-,
    with opposite signed Rabi frequencies) while h+ stays dark; the Stokes pulses
    on 2+ <-> 2- carry phases phi (first) and 0 (last), so h- -> exp(i phi) h-.
    """
    _check_rabi(rabi, force)
    _check_adiabatic(rabi, duration, 'C-NOT')
    (t1, t2, t3), width = _three_pulse_timing(duration, delay, t_start)
    pump = rabi / np.sqrt(2.0)
    pulses = [
        _pulse(model, 'y', '2+,0', '2-,0', rabi, t1, width, phase=phi),
        _pulse(model, 'y', '1+,0', '2-,0', pump, t2, width, sign=1.0),
        _pulse(model, 'x', '1-,0', '2-,0', pump, t2, width, sign=-1.0),
        _pulse(model, 'y', '2+,0', '2-,0', rabi, t3, width),
    ]
    return PulseSequence(pulses, _time_grid(t_start, duration, dt))


def _coupling_terms(model, sequence, resonance_window):
    """Constant matrices K_p with H(t) = sum_p f_p(t) K_p."""
    n = len(model.labels)
    terms = []
    for pulse in sequence.pulses:
        mu = model.mu(pulse.polarization)
        if pulse.transition is not None:
            pairs = [(model.index(pulse.transition[0]), model.index(pulse.transition[1]))]
        else:
            pairs = []
            for a in range(n):
                for b in range(n):
                    gap = model.energies[b] - model.energies[a]
                    if gap > 0.0 and abs(gap - pulse.carrier) <= resonance_window \
                            and abs(mu[a, b]) > SELECTION_TOLERANCE:
                        pairs.append((a, b))
        k = np.zeros((n, n), dtype=np.complex128)
        for a, b in pairs:
            detuning = model.energies[b] - model.energies[a] - pulse.carrier
            span = sequence.time_grid.duration
            if abs(detuning) * span > 1.0:
                logger.warning(f"Neglecting detuning {detuning:.2e} hartree on {model.labels[a]} -> "
                               f"{model.labels[b]} (accumulated phase {abs(detuning) * span:.1f} rad)")
            coupling = -0.5 * mu[a, b] * pulse.amplitude * np.exp(1j * pulse.phase)
            k[a, b] += coupling
            k[b, a] += np.conj(coupling)
        terms.append(k)
    return np.array(terms).reshape(len(terms), n, n)


def rwa_hamiltonian(model, sequence, t, resonance_window=RESONANCE_WINDOW):
    """Interaction-picture Hamiltonian sum_p f_p(t) K_p at one instant."""
    terms = _coupling_terms(model, sequence, resonance_window)
    envelope = np.array([np.exp(-(t - p.center) ** 2 / (2.0 * p.width ** 2)) for p in sequence.pulses])
    return np.tensordot(envelope, terms, axes=1)


@dataclass
class RWATrajectory:
    labels: list
    times: np.ndarray
    amplitudes: np.ndarray

    @property
    def final(self):
        return self.amplitudes[-1]

    @property
    def populations(self):
        return np.abs(self.amplitudes) ** 2


def rwa_propagate(model, sequence, initial, record_every=1, resonance_window=RESONANCE_WINDOW,
                  step_fraction=0.01):
    """Fixed-step RK4 in the interaction picture with detunings neglected."""
    initial = np.asarray(initial, dtype=np.complex128)
    if initial.shape != (len(model.labels),):
        raise SchemeError(f'initial vector of length {initial.size} for a {len(model.labels)}-level model')
    terms = _coupling_terms(model, sequence, resonance_window)
    t0, t1 = sequence.time_grid.t_start, sequence.time_grid.t_end
    rabi_max = max((np.max(np.abs(k)) * 2.0 for k in terms), default=0.0)
    n_steps = max(1, int(np.ceil((t1 - t0) * rabi_max / step_fraction))) if rabi_max > 0.0 else 1
    h = (t1 - t0) / n_steps

    def rhs(t, y):
        envelope = np.array([np.exp(-(t - p.center) ** 2 / (2.0 * p.width ** 2)) for p in sequence.pulses])
        return -1j * (np.tensordot(envelope, terms, axes=1) @ y) if len(terms) else np.zeros_like(y)

    y = initial.copy()
    times, states = [t0], [y.copy()]
    for i in range(n_steps):
        t = t0 + i * h
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (i + 1) % record_every == 0 or i + 1 == n_steps:
            times.append(t + h)
            states.append(y.copy())
    return RWATrajectory(list(model.labels), np.array(times), np.array(states))


def rwa_unitary(model, sequence, **kwargs):
    """Columns are the propagated basis vectors."""
    n = len(model.labels)
    return np.column_stack([rwa_propagate(model, sequence, np.eye(n)[k], record_every=10 ** 9, **kwargs).final
                            for k in range(n)])


def hcp_unitary(area):
    """exp(i A sigma_x) of a half-cycle pulse of area A on the ground doublet."""
    return np.array([[np.cos(area), 1j * np.sin(area)], [1j * np.sin(area), np.cos(area)]])


def free_evolution(energies, t):
    return np.diag(np.exp(-1j * np.asarray(energies) * t))


def hcp_localize(area, energies, t_free):
    """HCP kick on |0+> followed by free tunneling for ``t_free``."""
    return free_evolution(energies, t_free) @ hcp_unitary(area) @ np.array([1.0, 0.0])


class RWAEvaluator:
    """Fidelity |<target|psi(T)>|^2 of a sequence in the few-level model."""

    def __init__(self, model, initial, target):
        self.model = model
        self.initial = np.asarray(initial, dtype=np.complex128)
        self.target = np.asarray(target, dtype=np.complex128)

    def __call__(self, sequence):
        final = rwa_propagate(self.model, sequence, self.initial, record_every=10 ** 9).final
        return float(abs(np.vdot(self.target, final)) ** 2)


class GridEvaluator:
    """Fidelity on the full angular grid, free phases divided out by eigenbasis projection."""

    def __init__(self, plan, pairs, initial, target_coefficients):
        from laserctl.propagation import interaction_amplitudes, propagate
        self._propagate = propagate
        self._amplitudes = interaction_amplitudes
        self.plan = plan
        self.pairs = pairs
        self.initial = initial
        self.target = np.asarray(target_coefficients, dtype=np.complex128)

    def __call__(self, sequence):
        plan = self.plan.with_time_grid(sequence.time_grid)
        trajectory = self._propagate(self.initial, sequence.to_field(), plan,
                                     stride=sequence.time_grid.n_steps)
        coefficients = self._amplitudes(trajectory.final, self.pairs, sequence.time_grid.duration)
        return float(abs(np.vdot(self.target, coefficients)) ** 2)


SCHEME_BUILDERS = {
    'fstirap': build_fstirap,
    'swap': build_localization_swap,
}


@dataclass
class ScanGrid:
    rabi_axis: np.ndarray
    delay_axis: np.ndarray
    fidelity: np.ndarray
    duration: float = 0.0

    def plateau_fraction(self, threshold=0.9):
        finite = np.isfinite(self.fidelity)
        if not finite.any():
            return 0.0
        return float(np.sum(self.fidelity[finite] >= threshold) / self.fidelity.size)

    def best(self):
        index = np.unravel_index(np.nanargmax(self.fidelity), self.fidelity.shape)
        return float(self.rabi_axis[index[0]]), float(self.delay_axis[index[1]]), float(self.fidelity[index])


def _evaluate_point(builder, evaluator, rabi, delay):
    try:
        return evaluator(builder(rabi=rabi, delay=delay))
    except Exception as e:
        logger.error(f"Scan point rabi={rabi:.3g}, delay={delay:.3g} failed: {str(e)}")
        return float('nan')


def robustness_scan(builder, evaluator, rabi_range, delay_range, resolution, threads=1, duration=0.0):
    """Fidelity over a (rabi, delay) grid; failed points become NaN."""
    if resolution < 2:
        raise DomainError(f'scan resolution must be at least 2, got {resolution}')
    rabi_axis = np.linspace(rabi_range[0], rabi_range[1], resolution)
    delay_axis = np.linspace(delay_range[0], delay_range[1], resolution)
    points = [(i, j) for i in range(resolution) for j in range(resolution)]
    fidelity = np.full((resolution, resolution), np.nan)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        values = pool.map(lambda ij: _evaluate_point(builder, evaluator, rabi_axis[ij[0]], delay_axis[ij[1]]),
                          points)
        for (i, j), value in zip(points, values):
            fidelity[i, j] = value

    logger.info(f"Robustness scan {resolution}x{resolution}: "
                f"{np.sum(np.isnan(fidelity))} failed points")
    return ScanGrid(rabi_axis, delay_axis, fidelity, duration)


def _encode_vector(vector):
    vector = np.asarray(vector, dtype=np.complex128)
    return [vector.real.tolist(), vector.imag.tolist()]


def distributed_robustness_scan(scheme, fixed, model, initial, target, rabi_range, delay_range, resolution):
    """Same scan fanned out over Celery workers (few-level evaluator only)."""
    from laserctl.tasks import evaluate_scan_point
    if scheme not in SCHEME_BUILDERS:
        raise SchemeError(f'unknown scheme {scheme!r}; choose from {sorted(SCHEME_BUILDERS)}')
    rabi_axis = np.linspace(rabi_range[0], rabi_range[1], resolution)
    delay_axis = np.linspace(delay_range[0], delay_range[1], resolution)
    record = model.to_record()
    job = group(evaluate_scan_point.s(scheme, fixed, record, _encode_vector(initial), _encode_vector(target),
                                      float(r), float(d))
                for r in rabi_axis for d in delay_axis)
    result = job.apply() if job.app.conf.task_always_eager else job.apply_async()
    values = result.get()
    fidelity = np.array([np.nan if v is None else v for v in values], dtype=float).reshape(resolution, resolution)
    return ScanGrid(rabi_axis, delay_axis, fidelity, fixed.get('duration', 0.0))


def target_overlap(psi, target):
    return abs(inner_product(target, psi)) ** 2
