"""Optimal control (immediate-feedback iterations), multitarget gates, local control
and the bifurcation-selective driver.

For pairs (psi_i^n, psi_f^n) the field update of one forward sweep is

    dE_j(t) = -(s(t)/alpha0) Im[ sum_n <psi^n(t)|chi^n(t)> <chi^n(t)|mu_j|psi^n(t)> ]

where chi^n is the target propagated backward under the previous field and
psi^n is propagated forward under the field being updated.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import psutil

from laserctl.errors import DomainError, MemoryGuardError, MonotonicityError, NormalizationError, SchemeError
from laserctl.grid import inner_product, superpose
from laserctl.models import PolarizedField, WaveFunction
from laserctl.propagation import check_field, propagate, step_array

logger = logging.getLogger(__name__)

FUNCTIONALS = ('ss', 'sm')
OVERLAP_MODES = ('instantaneous', 'krotov')


def sin2_envelope(t, time_grid):
    return np.sin(np.pi * (np.asarray(t) - time_grid.t_start) / time_grid.duration) ** 2


@dataclass
class ControlProblem:
    initial_states: list
    target_states: list
    penalty: float = 1.2
    zero_order_field: PolarizedField = None
    max_iterations: int = 50
    convergence_threshold: float = 1e-6
    patience: int = 3
    monotonic_tolerance: float = 1e-10
    functional: str = 'ss'
    overlap: str = 'instantaneous'

    def __post_init__(self):
        if not self.initial_states or len(self.initial_states) != len(self.target_states):
            raise SchemeError(f'{len(self.initial_states)} initial states for '
                              f'{len(self.target_states)} targets')
        grid = self.initial_states[0].grid
        for state in list(self.initial_states) + list(self.target_states):
            if state.grid != grid:
                raise SchemeError('control states live on different grids')
            if abs(state.norm() - 1.0) > 1e-6:
                raise NormalizationError(f'control state with norm {state.norm():.6f}', norm=state.norm())
        if self.penalty <= 0.0:
            raise SchemeError(f'penalty must be positive, got {self.penalty}')
        if self.functional not in FUNCTIONALS:
            raise SchemeError(f'unknown functional {self.functional!r}; choose from {FUNCTIONALS}')
        if self.overlap not in OVERLAP_MODES:
            raise SchemeError(f'unknown overlap mode {self.overlap!r}; choose from {OVERLAP_MODES}')


def _stack(states):
    return np.stack([s.amplitudes for s in states])


def _overlaps(bra, ket, weight):
    return np.sum(np.conj(bra) * ket, axis=(-2, -1)) * weight


def memory_budget(limit_gb=None):
    available = 0.5 * psutil.virtual_memory().available
    if limit_gb is None:
        return available
    return min(limit_gb * 1024 ** 3, available)


class MultiplierStore:
    """Targets propagated backward under a fixed field, served forward in time.

    When all time slices do not fit the memory budget only every ``stride``-th
    slice is kept and each block is re-propagated from its checkpoint on demand.
    """

    def __init__(self, plan, targets, ex, ey, budget_bytes):
        self.plan = plan
        self.ex, self.ey = ex, ey
        self.n_steps = plan.require_time_grid().n_steps
        state_bytes = targets.nbytes
        slots = int(budget_bytes // state_bytes)
        if slots >= self.n_steps + 1:
            self.stride = 1
        else:
            self.stride = max(2, math.ceil(math.sqrt(self.n_steps + 1)))
            needed = (self.n_steps // self.stride + 2 + self.stride + 1) * state_bytes
            if needed > budget_bytes:
                raise MemoryGuardError(f'multiplier storage needs {needed / 1e9:.2f} GB with checkpointing, '
                                       f'budget is {budget_bytes / 1e9:.2f} GB')
            logger.info(f"Checkpointing backward states every {self.stride} steps")

        self._slices = {}
        a = targets.copy()
        self._slices[self.n_steps] = a.copy()
        for i in reversed(range(self.n_steps)):
            a = step_array(a, ex[i], ey[i], plan, direction=-1)
            if self.stride == 1 or i % self.stride == 0:
                self._slices[i] = a.copy()
        self._block_start = None
        self._block = None

    def at(self, i):
        if self.stride == 1 or i in self._slices:
            return self._slices[i]
        start = (i // self.stride) * self.stride
        if self._block_start != start:
            stop = min(start + self.stride, self.n_steps)
            a = self._slices[stop].copy()
            block = {stop: a.copy()}
            for j in reversed(range(start, stop)):
                a = step_array(a, self.ex[j], self.ey[j], self.plan, direction=-1)
                block[j] = a.copy()
            self._block_start, self._block = start, block
        return self._block[i]


def _forward_sweep(plan, psi0, store, ex, ey, gain_x, gain_y, functional, fixed_overlaps=None):
    """Propagate forward while adding the feedback update to (ex, ey)."""
    weight = plan.grid.weight
    count = psi0.shape[0]
    a = psi0.copy()
    new_ex, new_ey = ex.copy(), ey.copy()
    n_steps = ex.size
    performance = np.zeros(n_steps + 1)
    rate = np.zeros(n_steps)
    for i in range(n_steps):
        chi = store.at(i)
        ov = _overlaps(a, chi, weight)
        performance[i] = float(np.mean(np.abs(ov) ** 2))
        factors = ov if fixed_overlaps is None else fixed_overlaps
        mx = _overlaps(chi, plan.mu_x * a, weight)
        my = _overlaps(chi, plan.mu_y * a, weight)
        if functional == 'ss':
            ix = float(np.imag(np.sum(factors * mx)))
            iy = float(np.imag(np.sum(factors * my)))
        else:
            ix = float(np.imag(np.sum(factors) * np.sum(mx))) / count
            iy = float(np.imag(np.sum(factors) * np.sum(my))) / count
        dx, dy = -gain_x[i] * ix, -gain_y[i] * iy
        if not (np.isfinite(dx) and np.isfinite(dy)):
            raise DomainError(f'non-finite field update at step {i}')
        new_ex[i] += dx
        new_ey[i] += dy
        rate[i] = -2.0 * (new_ex[i] * ix + new_ey[i] * iy)
        a = step_array(a, new_ex[i], new_ey[i], plan)
    performance[n_steps] = float(np.mean(np.abs(_overlaps(a, store.at(n_steps), weight)) ** 2))
    return a, new_ex, new_ey, performance, rate


def _objective(final, targets, weight, functional):
    overlaps = _overlaps(targets, final, weight)
    count = len(overlaps)
    if functional == 'ss':
        return float(np.sum(np.abs(overlaps) ** 2) / count), overlaps
    return float(abs(np.sum(overlaps)) ** 2 / count ** 2), overlaps


def _plain_forward(plan, psi0, ex, ey):
    a = psi0.copy()
    for i in range(ex.size):
        a = step_array(a, ex[i], ey[i], plan)
    return a


@dataclass
class OCTResult:
    field: PolarizedField
    base_field: PolarizedField
    time_grid: object
    objective_history: list
    iterations: int
    converged: bool
    final_states: list
    overlaps: np.ndarray
    performance: np.ndarray = None

    @property
    def objective(self):
        return self.objective_history[-1]

    @property
    def update(self):
        return self.field.ex - self.base_field.ex, self.field.ey - self.base_field.ey

    def update_on_nodes(self):
        """Accumulated update at the time nodes; it vanishes at t0 and T with s(t)."""
        out = []
        for component in self.update:
            nodes = np.zeros(component.size + 1)
            nodes[1:-1] = 0.5 * (component[1:] + component[:-1])
            out.append(nodes)
        return tuple(out)

    def convergence_table(self):
        return np.column_stack([np.arange(len(self.objective_history)), self.objective_history])


def _krotov(problem, plan, gain_scale=None, callback=None, memory_limit_gb=None):
    time_grid = plan.require_time_grid()
    weight = plan.grid.weight
    psi0 = _stack(problem.initial_states)
    targets = _stack(problem.target_states)
    if psi0[0].shape != plan.grid.shape:
        raise SchemeError('control states and plan live on different grids')

    base = problem.zero_order_field or PolarizedField.zeros(time_grid)
    ex, ey = (np.array(c, dtype=float) for c in base.midpoint_samples(time_grid))
    check_field((ex, ey), plan)
    gain = sin2_envelope(time_grid.midpoints(), time_grid) / problem.penalty
    if gain_scale is not None:
        gain = gain * gain_scale
    budget = memory_budget(memory_limit_gb)

    final = _plain_forward(plan, psi0, ex, ey)
    objective, overlaps = _objective(final, targets, weight, problem.functional)
    history = [objective]
    logger.info(f"OCT start: J = {objective:.6f} ({len(psi0)} pair(s), {time_grid.n_steps} steps)")

    converged = 1.0 - objective < problem.convergence_threshold
    stalled, iterations, performance = 0, 0, None
    while not converged and iterations < problem.max_iterations:
        iterations += 1
        store = MultiplierStore(plan, targets, ex, ey, budget)
        fixed = np.conj(overlaps) if problem.overlap == 'krotov' else None
        final, new_ex, new_ey, performance, _ = _forward_sweep(plan, psi0, store, ex, ey, gain, gain,
                                                               problem.functional, fixed)
        new_objective, new_overlaps = _objective(final, targets, weight, problem.functional)
        if new_objective < objective - problem.monotonic_tolerance:
            logger.error(f"OCT iteration {iterations}: objective fell from {objective:.10f} to {new_objective:.10f}")
            raise MonotonicityError(f'objective decreased at iteration {iterations}: '
                                    f'{objective:.10f} -> {new_objective:.10f}', history=history + [new_objective])
        gain_k = new_objective - objective
        ex, ey, objective, overlaps = new_ex, new_ey, new_objective, new_overlaps
        history.append(objective)
        logger.info(f"OCT iteration {iterations}: J = {objective:.8f} (gain {gain_k:.2e})")
        if callback is not None:
            callback(iterations, objective)
        stalled = stalled + 1 if gain_k < problem.convergence_threshold else 0
        converged = stalled >= problem.patience or 1.0 - objective < problem.convergence_threshold

    grid = plan.grid
    result_field = PolarizedField(time_grid.midpoints(), ex, ey, {'penalty': problem.penalty})
    return OCTResult(field=result_field, base_field=base, time_grid=time_grid,
                     objective_history=history, iterations=iterations, converged=converged,
                     final_states=[WaveFunction(grid, a) for a in final], overlaps=overlaps,
                     performance=performance)


def oct_optimize(problem, plan, callback=None, memory_limit_gb=None):
    """Optimize the field driving ``problem.initial_states[0]`` to its target."""
    if len(problem.initial_states) != 1:
        raise SchemeError('oct_optimize takes a single pair; use multitarget_oct for gates')
    return _krotov(problem, plan, callback=callback, memory_limit_gb=memory_limit_gb)


GATES = {
    'identity': np.eye(2, dtype=np.complex128),
    'hadamard': np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) / np.sqrt(2.0),
    'cnot': np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128),
}

# Computational basis |00>, |01>, |10>, |11> (or |0>, |1>) in eigenstate labels.
ENCODINGS = {
    'single': ('0+,0', '0-,0'),
    'excitation-parity': ('0+,0', '0-,0', '1+,0', '1-,0'),
    'parity-excitation': ('0+,0', '1+,0', '0-,0', '1-,0'),
    'two-vibrator': ('0+,0', '0+,1', '0-,0', '0-,1'),
}


def gate_matrix(name, phase=np.pi / 4):
    if name == 'phase':
        return np.diag([1.0, np.exp(1j * phase)]).astype(np.complex128)
    try:
        return GATES[name].copy()
    except KeyError:
        raise SchemeError(f'unknown gate {name!r}; choose from {sorted(GATES) + ["phase"]}') from None


def gate_fidelity(gate, achieved):
    """|tr(U_gate^dagger U)|^2 / d^2."""
    gate = np.asarray(gate)
    achieved = np.asarray(achieved)
    if gate.shape != achieved.shape or gate.ndim != 2 or gate.shape[0] != gate.shape[1]:
        raise SchemeError(f'gate shape {gate.shape} does not match achieved map {achieved.shape}')
    d = gate.shape[0]
    return float(abs(np.trace(gate.conj().T @ achieved)) ** 2 / d ** 2)


def control_unitary(basis_states, final_states):
    """U[m, n] = <e_m|psi_n(T)>."""
    return np.array([[inner_product(e, psi) for psi in final_states] for e in basis_states])


def gate_targets(gate, basis_states):
    """Images of the basis states under ``gate``: sum_m gate[m, n] |e_m>."""
    return [superpose(gate[:, n], basis_states) for n in range(len(basis_states))]


def multitarget_oct(basis_states, gate, plan, callback=None, memory_limit_gb=None, **options):
    """Optimize one field for all pairs (e_n, U e_n); returns (OCTResult, gate fidelity)."""
    gate = np.asarray(gate, dtype=np.complex128)
    d = len(basis_states)
    if gate.shape != (d, d):
        raise SchemeError(f'gate of shape {gate.shape} for {d} basis states')
    if not np.allclose(gate.conj().T @ gate, np.eye(d), atol=1e-10):
        raise SchemeError('gate is not unitary')
    gram = np.array([[inner_product(a, b) for b in basis_states] for a in basis_states])
    if not np.allclose(gram, np.eye(d), atol=1e-8):
        raise SchemeError('gate basis states are not orthonormal')

    problem = ControlProblem(list(basis_states), gate_targets(gate, basis_states), **options)
    result = _krotov(problem, plan, callback=callback, memory_limit_gb=memory_limit_gb)
    fidelity = gate_fidelity(gate, control_unitary(basis_states, result.final_states))
    logger.info(f"Multitarget OCT: J = {result.objective:.6f}, gate fidelity F = {fidelity:.6f}")
    return result, fidelity


@dataclass
class LocalControlConfig:
    lambda_x: float = 8.0
    lambda_y: float = 1.2
    shaped: bool = False


@dataclass
class LocalControlResult:
    field: PolarizedField
    performance: np.ndarray
    rate: np.ndarray
    final_state: WaveFunction

    @property
    def final_yield(self):
        return float(self.performance[-1])


def local_control_field(problem, config, plan, memory_limit_gb=None):
    """Field that keeps d<O>/dt >= 0 for O = |psi_f(t)><psi_f(t)| (field-free target)."""
    time_grid = plan.require_time_grid()
    if len(problem.initial_states) != 1:
        raise SchemeError('local control drives a single pair')
    psi0 = _stack(problem.initial_states)
    targets = _stack(problem.target_states)
    zeros = np.zeros(time_grid.n_steps)
    store = MultiplierStore(plan, targets, zeros, zeros, memory_budget(memory_limit_gb))
    shape = sin2_envelope(time_grid.midpoints(), time_grid) if config.shaped else np.ones(time_grid.n_steps)
    final, ex, ey, performance, rate = _forward_sweep(
        plan, psi0, store, zeros, zeros, config.lambda_x * shape, config.lambda_y * shape, 'ss')
    logger.info(f"Local control: final yield {performance[-1]:.6f}")
    return LocalControlResult(PolarizedField(time_grid.midpoints(), ex, ey), performance, rate,
                              WaveFunction(plan.grid, final[0]))


def area_perturbation_curve(initial, target, field_, plan, scales):
    """Yield |<target|psi(T)>|^2 when the whole field is multiplied by each scale."""
    yields = []
    for scale in scales:
        trajectory = propagate(initial, field_.scaled(scale), plan, stride=plan.time_grid.n_steps)
        yields.append(abs(inner_product(target, trajectory.final)) ** 2)
    return np.array(yields)


@dataclass
class BifurcationResult:
    control: OCTResult
    trajectory: object
    omega_theta: float
    omega_phi: float
    theta_crossing: float
    phi_crossing: float

    @property
    def mechanism(self):
        if np.isnan(self.theta_crossing) or np.isnan(self.phi_crossing):
            return 'incomplete'
        return 'sequential' if self.theta_crossing < self.phi_crossing else 'concerted'


def _first_crossing(times, values):
    hits = np.nonzero(values)[0]
    return float(times[hits[0]]) if hits.size else float('nan')


def bifurcation_scenario(plan, pairs, surface, amplitude=0.02, stride=100, phi_threshold_deg=10.0,
                         memory_limit_gb=None, **options):
    """Drive |0,0>_R into the localized product |0L,0> starting from zero-order
    fields E0 cos(omega t) at the reactant harmonic frequencies."""
    from laserctl.eigen import find_state
    from laserctl.units import cm1_to_hartree

    time_grid = plan.require_time_grid()
    reactant = find_state(pairs, '0,0_R')
    plus, minus = find_state(pairs, '0+,0'), find_state(pairs, '0-,0')
    target = superpose([1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)], [plus.state, minus.state])

    theta_r, phi_r, _ = surface.find_stationary(surface.parameters.theta_r, 0.0)
    omega_theta, omega_phi = (cm1_to_hartree(w) for w in surface.harmonic_frequencies(theta_r, phi_r))
    zero_order = PolarizedField.from_function(
        time_grid, lambda t: (amplitude * np.cos(omega_theta * t), amplitude * np.cos(omega_phi * t)))
    logger.info(f"Bifurcation control: zero-order fields at {omega_theta:.5f} and {omega_phi:.5f} hartree")

    problem = ControlProblem([reactant.state], [target], zero_order_field=zero_order, **options)
    result = oct_optimize(problem, plan, memory_limit_gb=memory_limit_gb)
    trajectory = propagate(reactant.state, result.field, plan, stride=stride)
    theta_crossing = _first_crossing(trajectory.times, trajectory.theta_avg < surface.parameters.switch_center)
    phi_crossing = _first_crossing(trajectory.times,
                                   np.abs(trajectory.phi_avg) > np.deg2rad(phi_threshold_deg))
    return BifurcationResult(result, trajectory, omega_theta, omega_phi, theta_crossing, phi_crossing)
