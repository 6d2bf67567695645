"""Scenario runner: executes one resolved scenario into a run directory.

Every scenario follows the same pipeline (surface -> eigenstates -> control ->
analysis) as far as it needs, writes CSV/binary outputs into its run directory
and finishes with ``manifest.json`` (checksums, timings, acceptance checks) and
an optional PDF report.
"""

import contextlib
import functools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import psutil

from laserctl import __version__, create_toolkit
from laserctl.adiabatic import (SCHEME_BUILDERS, FewLevelModel, GridEvaluator, RWAEvaluator, build_cnot,
                                build_fstirap, build_localization_swap, build_phase_gate,
                                distributed_robustness_scan, robustness_scan, rwa_propagate, rwa_unitary)
from laserctl.analysis import gabor_transform
from laserctl.control import (ENCODINGS, ControlProblem, LocalControlConfig, area_perturbation_curve,
                              bifurcation_scenario, control_unitary, gate_fidelity, gate_matrix,
                              local_control_field, multitarget_oct, oct_optimize)
from laserctl.eigen import dvr_diagonalize, find_state, relax_eigenstates
from laserctl.errors import (CalibrationError, ConvergenceError, DomainError, LaserCtlError, MonotonicityError,
                             SchemeError)
from laserctl.grid import inner_product, superpose
from laserctl.models import AngularGrid, PolarizedField, TimeGrid
from laserctl.plots import emit_plots
from laserctl.propagation import KineticSpec, PropagationPlan, interaction_amplitudes, propagate
from laserctl.schemas import GATE_DIMENSIONS
from laserctl.surfaces import PotentialSurface, calibrate
from laserctl.units import au_to_ps, cm1_to_hartree, hartree_to_cm1, hartree_to_ev, ps_to_au, tunneling_time_ps
from laserctl.utils import (file_checksum, format_check, generate_run_report, load_cached_surface, read_json,
                            read_table, save_cached_surface, write_json, write_matrix, write_table, write_wavefunction)

logger = logging.getLogger(__name__)

CONFIG_NAME = 'config.ini'
MANIFEST_NAME = 'manifest.json'
REPORT_NAME = 'report.pdf'
RWA_RECORD_EVERY = 10
LOCALIZED_LABELS = ['0L,0', '0R,0']

SQRT_HALF = 1.0 / np.sqrt(2.0)


@dataclass
class RunManifest:
    version: str
    config: dict
    calibration: dict = None
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    memory_mb: float = 0.0
    results: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    partial: bool = False
    error: str = None

    @property
    def passed(self):
        """No error and every configured acceptance threshold met."""
        return not self.partial and all(check['passed'] for check in self.acceptance.values())

    def to_dict(self):
        data = asdict(self)
        data['passed'] = self.passed
        return data

    def write(self, path):
        return write_json(path, self.to_dict())

    @classmethod
    def from_file(cls, path):
        data = read_json(path)
        data.pop('passed', None)
        return cls(**data)


class RunContext:
    """Run directory, settings and manifest shared by the stages of one scenario."""

    def __init__(self, config, settings, run_dir):
        self.config = config
        self.settings = settings
        self.run_dir = os.path.abspath(run_dir)
        self.manifest = RunManifest(version=__version__, config=config.to_dict())

    @property
    def threads(self):
        return self.config.scenario['threads']

    @property
    def memory_limit_gb(self):
        return self.settings.get('MEMORY_LIMIT_GB')

    def path(self, name):
        path = os.path.abspath(os.path.join(self.run_dir, name))
        if os.path.commonpath([path, self.run_dir]) != self.run_dir:
            raise DomainError(f'output {name!r} would be written outside {self.run_dir}')
        return path

    def output(self, name):
        path = self.path(name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        return path

    @contextlib.contextmanager
    def stage(self, name):
        start = time.perf_counter()
        logger.info(f"Stage '{name}' started")
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.manifest.timings[name] = self.manifest.timings.get(name, 0.0) + elapsed
            logger.info(f"Stage '{name}' finished in {elapsed:.1f} s")

    def check(self, name, value, threshold, upper=False):
        """Record ``value``; with a threshold it also becomes an acceptance check.

        The threshold is a lower bound unless ``upper`` is set.
        """
        value = float(value)
        self.manifest.results[name] = value
        if threshold is None:
            return True
        passed = bool(value <= threshold) if upper else bool(value >= threshold)
        return self._accept(name, value, float(threshold), passed, 'max' if upper else 'min')

    def expect(self, name, value, expected):
        """Record a categorical outcome; with an expected value it becomes an acceptance check."""
        self.manifest.results[name] = value
        if expected is None:
            return True
        return self._accept(name, value, expected, value == expected, 'equal')

    def _accept(self, name, value, threshold, passed, bound):
        check = {'value': value, 'threshold': threshold, 'bound': bound, 'passed': passed}
        self.manifest.acceptance[name] = check
        log = logger.info if passed else logger.warning
        log(f"Acceptance {name}: {format_check(check)} {'passed' if passed else 'FAILED'}")
        return passed

    def finalize(self):
        outputs = {}
        for root, _, files in os.walk(self.run_dir):
            for name in files:
                rel = os.path.relpath(os.path.join(root, name), self.run_dir).replace(os.sep, '/')
                if rel in (MANIFEST_NAME, REPORT_NAME):
                    continue
                outputs[rel] = file_checksum(os.path.join(root, name))
        self.manifest.outputs = dict(sorted(outputs.items()))
        self.manifest.memory_mb = psutil.Process().memory_info().rss / 1024 ** 2
        self.manifest.write(self.path(MANIFEST_NAME))
        return self.manifest


# Pipeline stages

def _cache_path(ctx, variant):
    return os.path.join(ctx.settings.get('DATA_DIR', 'data'), f'surface_{variant.value}.json')


def load_surface(ctx):
    """Calibrated surface from the scenario file, the data-directory cache or a fresh fit."""
    variant = ctx.config.variant
    calibration_file = ctx.config.scenario['calibration_file']
    cache = _cache_path(ctx, variant)
    if calibration_file:
        try:
            record = read_json(calibration_file)
        except (OSError, ValueError) as e:
            raise CalibrationError(f'cannot read calibration file {calibration_file}: {str(e)}') from None
    else:
        record = load_cached_surface(cache)

    if record is None:
        with ctx.stage('calibrate'):
            surface, report = calibrate(variant)
        save_cached_surface(cache, surface.to_record())
        ctx.manifest.calibration = report.to_dict()
        return surface

    try:
        surface = PotentialSurface.from_record(record)
    except (KeyError, TypeError) as e:
        raise CalibrationError(f'malformed surface record: {str(e)}') from None
    if surface.variant is not variant:
        raise CalibrationError(f'calibration is for the {surface.variant.value} surface, '
                               f'scenario asks for {variant.value}')
    if not surface.calibrated:
        raise CalibrationError('surface record is not calibrated')
    ctx.manifest.calibration = record.get('report')
    logger.info(f"Loaded calibrated {variant.value} surface from {calibration_file or cache}")
    return surface


def make_plan(ctx, surface, time_grid=None):
    grid = AngularGrid(ctx.config.grid['n_theta'], ctx.config.grid['n_phi'])
    return PropagationPlan(grid, KineticSpec(), surface, time_grid=time_grid)


def _time_grid(ctx, duration_ps=None):
    duration = ps_to_au(duration_ps if duration_ps is not None else ctx.config.time['duration_ps'])
    return TimeGrid.from_step(0.0, duration, ctx.config.time['dt_au'])


def _delay(ctx, duration):
    scheme = ctx.config.scheme
    if scheme['delay_au'] is not None:
        return scheme['delay_au']
    return scheme['delay_fraction'] * duration


def _write_eigenstates(ctx, pairs):
    rows = []
    for k, pair in enumerate(pairs):
        label = pair.label
        parity = {'+': 1, '-': -1}.get(label.parity.value, 0)
        rows.append((k, pair.energy, hartree_to_ev(pair.energy), pair.residual, label.n_phi_quanta,
                     label.n_theta_quanta, parity, 1 if label.well.value == 'R' else 0))
        write_wavefunction(ctx.output(f'eigenstates/eigenstate_{k}.bin'), pair.state)
    states = '; '.join(pair.label.ket for pair in pairs)
    write_table(ctx.output('eigenvalues.csv'),
                ['index', 'energy_au', 'energy_ev', 'residual', 'n_phi', 'n_theta', 'parity', 'well_r'],
                rows, comments=[f'states: {states}'])


def solve_eigenstates(ctx, plan):
    count = ctx.config.grid['eigen_count']
    with ctx.stage('eigen'):
        try:
            if ctx.config.grid['solver'] == 'dvr':
                pairs = dvr_diagonalize(plan, count, max_dim=ctx.settings.get('DVR_MAX_DIM', 4096))
            else:
                pairs = relax_eigenstates(plan, count, seed=ctx.config.scenario['seed'])
        except ConvergenceError as e:
            if e.partial:
                _write_eigenstates(ctx, e.partial)
            ctx.manifest.results['converged_states'] = len(e.partial)
            raise
    _write_eigenstates(ctx, pairs)
    return pairs


def _localized(pairs):
    plus, minus = find_state(pairs, '0+,0'), find_state(pairs, '0-,0')
    left = superpose([SQRT_HALF, SQRT_HALF], [plus.state, minus.state])
    right = superpose([SQRT_HALF, -SQRT_HALF], [plus.state, minus.state])
    return left, right


def _write_field(ctx, name, field_):
    write_table(ctx.output(name), ['t_au', 'Ex_au', 'Ey_au'],
                np.column_stack([field_.times, field_.ex, field_.ey]))


def _write_trajectory(ctx, trajectory, labels, name='populations.csv'):
    columns = ['t_au', 'norm', 'E0_au', 'theta_avg', 'phi_avg']
    if trajectory.populations is not None:
        columns += [f'pop_{k + 1}' for k in range(trajectory.populations.shape[1])]
    comments = [f'states: {"; ".join(labels)}'] if labels else []
    write_table(ctx.output(name), columns, trajectory.table(), comments=comments)
    drift = float(abs(trajectory.norm[-1] - trajectory.norm[0]))
    ctx.manifest.results['norm_drift'] = drift


def _write_rwa_trajectory(ctx, trajectory, localized=False):
    amplitudes = trajectory.amplitudes
    columns = [np.abs(amplitudes[:, k]) ** 2 for k in range(amplitudes.shape[1])]
    labels = list(trajectory.labels)
    if localized:
        columns.append(np.abs(amplitudes[:, 0] + amplitudes[:, 1]) ** 2 / 2.0)
        columns.append(np.abs(amplitudes[:, 0] - amplitudes[:, 1]) ** 2 / 2.0)
        labels += LOCALIZED_LABELS
    write_table(ctx.output('rwa_populations.csv'), ['t_au'] + [f'pop_{k + 1}' for k in range(len(columns))],
                np.column_stack([trajectory.times] + columns), comments=[f'states: {"; ".join(labels)}'])


def _spectrogram_settings(ctx):
    gabor = ctx.config.gabor
    omegas = np.linspace(0.0, cm1_to_hartree(gabor['omega_max_cm1']), gabor['n_omega'])
    return ps_to_au(gabor['tau_ps']), omegas, gabor['n_times']


def _write_spectrograms(ctx, field_):
    """Gabor spectrograms of both components; returns the carrier (cm^-1) of the summed power."""
    tau, omegas, n_times = _spectrogram_settings(ctx)
    window_times = np.linspace(field_.times[0], field_.times[-1], n_times)
    total = None
    with ctx.stage('gabor'):
        for name, values in (('x', field_.ex), ('y', field_.ey)):
            spectrogram = gabor_transform(field_.times, values, tau=tau, omegas=omegas,
                                          window_times=window_times)
            write_matrix(ctx.output(f'spectrogram_{name}.csv'), au_to_ps(spectrogram.times),
                         spectrogram.omegas_cm1, spectrogram.power.T, corner='t_ps\\omega_cm1')
            total = spectrogram.power if total is None else total + spectrogram.power
    spectrum = total.sum(axis=1)
    if not np.any(spectrum > 0.0):
        return float('nan')
    return float(hartree_to_cm1(omegas[int(np.argmax(spectrum))]))


def _control_options(ctx):
    o = ctx.config.oct
    return {'penalty': o['alpha'], 'max_iterations': o['max_iterations'],
            'convergence_threshold': o['threshold'], 'patience': o['patience'],
            'monotonic_tolerance': o['monotonic_tolerance'], 'functional': o['functional'],
            'overlap': o['overlap']}


def _write_convergence(ctx, history):
    iterations = np.arange(len(history))
    write_table(ctx.output('convergence.csv'), ['iteration', 'objective'],
                np.column_stack([iterations, history]))


def _optimize(ctx, optimizer, *args, **kwargs):
    with ctx.stage('oct'):
        try:
            return optimizer(*args, **kwargs)
        except MonotonicityError as e:
            if e.history:
                _write_convergence(ctx, e.history)
            raise


def _record_control(ctx, result):
    _write_field(ctx, 'field.csv', result.field)
    _write_convergence(ctx, result.objective_history)
    ctx.manifest.results['iterations'] = result.iterations
    ctx.manifest.results['converged'] = bool(result.converged)


# Scenarios: surface and eigenstates

def run_calibrate(ctx):
    """Fit the surrogate surface; the splitting is re-checked on the scenario grid."""
    variant = ctx.config.variant

    def grid_splitting(surface):
        pairs = solve_eigenstates(ctx, make_plan(ctx, surface))
        plus, minus = find_state(pairs, '0+,0'), find_state(pairs, '0-,0')
        return hartree_to_ev(minus.energy - plus.energy)

    with ctx.stage('calibrate'):
        try:
            surface, report = calibrate(variant, splitting_solver=grid_splitting)
        except CalibrationError as e:
            if e.report is not None:
                ctx.manifest.calibration = e.report.to_dict()
            raise
    record = surface.to_record()
    write_json(ctx.output('calibration.json'), record)
    save_cached_surface(_cache_path(ctx, variant), record)
    ctx.manifest.calibration = report.to_dict()
    ctx.manifest.results['splitting_ev'] = report.splitting_ev
    ctx.manifest.results['tunneling_time_ps'] = report.tunneling_time_ps


def run_eigen(ctx):
    """Eigenvalue table, eigenstate files and the dipole matrix of the computed states."""
    surface = load_surface(ctx)
    plan = make_plan(ctx, surface)
    pairs = solve_eigenstates(ctx, plan)
    results = ctx.manifest.results
    results['n_states'] = len(pairs)
    try:
        plus, minus = find_state(pairs, '0+,0'), find_state(pairs, '0-,0')
    except SchemeError as e:
        logger.warning(f"Tunneling doublet not resolved: {str(e)}")
    else:
        splitting = hartree_to_ev(minus.energy - plus.energy)
        results['splitting_ev'] = splitting
        results['tunneling_time_ps'] = tunneling_time_ps(splitting)
    model = FewLevelModel.from_eigenpairs(pairs, None, plan)
    write_json(ctx.output('dipoles.json'), model.to_record())
    violations = model.selection_violations()
    results['selection_violations'] = len(violations)
    for polarization, a, b, value in violations:
        logger.warning(f"{polarization}-dipole {a} <-> {b} = {value:.2e} breaks the reflection selection rule")


# Scenarios: adiabatic schemes

def _few_level(ctx, labels):
    surface = load_surface(ctx)
    plan = make_plan(ctx, surface)
    pairs = solve_eigenstates(ctx, plan)
    chosen = [find_state(pairs, label) for label in labels]
    model = FewLevelModel.from_eigenpairs(pairs, labels, plan)
    return plan, pairs, chosen, model


def _transfer(ctx, plan, pairs, chosen, model, sequence, initial, target):
    """Run a state-transfer sequence and record its fidelity against ``target``."""
    initial = np.asarray(initial, dtype=np.complex128)
    target = np.asarray(target, dtype=np.complex128)
    _write_field(ctx, 'field.csv', sequence.to_field())
    write_json(ctx.output('pulses.json'), [pulse.to_record() for pulse in sequence.pulses])
    ctx.manifest.results['peak_field_au'] = sequence.peak_amplitude

    if ctx.config.scheme['evaluator'] == 'rwa':
        with ctx.stage('rwa'):
            trajectory = rwa_propagate(model, sequence, initial, record_every=RWA_RECORD_EVERY)
        _write_rwa_trajectory(ctx, trajectory, localized=True)
        fidelity = abs(np.vdot(target, trajectory.final)) ** 2
    else:
        time_grid = sequence.time_grid
        grid_plan = plan.with_time_grid(time_grid)
        psi0 = superpose(initial, [pair.state for pair in chosen])
        left, right = _localized(pairs)
        basis = [pair.state for pair in chosen] + [left, right]
        with ctx.stage('propagate'):
            trajectory = propagate(psi0, sequence.to_field(), grid_plan, stride=ctx.config.time['stride'],
                                   basis=basis)
        _write_trajectory(ctx, trajectory, [pair.label.ket for pair in chosen] + LOCALIZED_LABELS)
        write_wavefunction(ctx.output('final_state.bin'), trajectory.final, time_au=time_grid.t_end)
        coefficients = interaction_amplitudes(trajectory.final, chosen, time_grid.duration)
        fidelity = abs(np.vdot(target, coefficients)) ** 2
    ctx.check('fidelity', fidelity, ctx.config.acceptance['min_fidelity'])


def run_fstirap_localize(ctx):
    """|0+,0> -> (|0+,0> - epsilon |0-,0>)/sqrt(2) by fractional STIRAP."""
    scheme = ctx.config.scheme
    labels = ['0+,0', '0-,0', scheme['intermediate']]
    plan, pairs, chosen, model = _few_level(ctx, labels)
    time_grid = _time_grid(ctx)
    epsilon = scheme['epsilon']
    ratio = epsilon if scheme['final_ratio'] is None else scheme['final_ratio']
    sequence = build_fstirap(scheme['intermediate'], epsilon, time_grid.duration, scheme['rabi_au'],
                             _delay(ctx, time_grid.duration), model, dt=ctx.config.time['dt_au'],
                             final_ratio=scheme['final_ratio'], force=ctx.config.scenario['force'])
    target = np.array([1.0, -ratio, 0.0]) / np.sqrt(1.0 + ratio ** 2)
    _transfer(ctx, plan, pairs, chosen, model, sequence, [1.0, 0.0, 0.0], target)


def run_localized_swap(ctx):
    """(|0+,0> + epsilon |0-,0>)/sqrt(2) -> (|0+,0> - epsilon |0-,0>)/sqrt(2)."""
    scheme = ctx.config.scheme
    labels = ['0+,0', '0-,0', scheme['intermediate']]
    plan, pairs, chosen, model = _few_level(ctx, labels)
    time_grid = _time_grid(ctx)
    epsilon = scheme['epsilon']
    sequence = build_localization_swap(epsilon, time_grid.duration, scheme['rabi_au'],
                                       _delay(ctx, time_grid.duration), model,
                                       intermediate=scheme['intermediate'], dt=ctx.config.time['dt_au'],
                                       force=ctx.config.scenario['force'])
    initial = np.array([1.0, epsilon, 0.0]) * SQRT_HALF
    target = np.array([1.0, -epsilon, 0.0]) * SQRT_HALF
    _transfer(ctx, plan, pairs, chosen, model, sequence, initial, target)


def phase_shift_gate(phi):
    """Gate that leaves (|a> + |b>)/sqrt(2) alone and multiplies (|a> - |b>)/sqrt(2) by exp(i phi)."""
    e = np.exp(1j * phi)
    return 0.5 * np.array([[1.0 + e, 1.0 - e], [1.0 - e, 1.0 + e]])


def _gate_map(ctx, plan, model, chosen, qubit, sequence, start):
    """Achieved map on the qubit subspace and the trajectory of ``start``."""
    index = [model.index(label) for label in qubit]
    if ctx.config.scheme['evaluator'] == 'rwa':
        with ctx.stage('rwa'):
            achieved = rwa_unitary(model, sequence)[np.ix_(index, index)]
            initial = np.eye(len(model.labels))[model.index(start)]
            trajectory = rwa_propagate(model, sequence, initial, record_every=RWA_RECORD_EVERY)
        _write_rwa_trajectory(ctx, trajectory)
        return achieved

    time_grid = sequence.time_grid
    grid_plan = plan.with_time_grid(time_grid)
    field_ = sequence.to_field()
    states = [pair.state for pair in chosen]
    qubit_pairs = [chosen[k] for k in index]
    start_index = model.index(start)
    stride = ctx.config.time['stride']

    def run_one(k):
        basis = states if k == start_index else None
        return propagate(states[k], field_, grid_plan, stride=stride, basis=basis)

    with ctx.stage('propagate'):
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            runs = dict(zip(index + [start_index], pool.map(run_one, index + [start_index])))
    _write_trajectory(ctx, runs[start_index], list(model.labels))
    columns = [interaction_amplitudes(runs[k].final, qubit_pairs, time_grid.duration) for k in index]
    return np.column_stack(columns)


def _record_gate(ctx, gate, achieved):
    rows = [(m, n, achieved[m, n].real, achieved[m, n].imag) for m in range(achieved.shape[0])
            for n in range(achieved.shape[1])]
    write_table(ctx.output('unitary.csv'), ['row', 'column', 're', 'im'], rows)
    ctx.check('gate_fidelity', gate_fidelity(gate, achieved), ctx.config.acceptance['min_fidelity'])


def run_phase_gate_adiabatic(ctx):
    """|0+> -> |0+>, |0-> -> exp(i phi)|0-> by two STIRAP transfers through |2+,0>."""
    scheme = ctx.config.scheme
    labels = ['0+,0', '0-,0', '1+,0', '2+,0']
    qubit = ['0+,0', '0-,0']
    plan, _, chosen, model = _few_level(ctx, labels)
    time_grid = _time_grid(ctx)
    phi = scheme['phase_rad']
    sequence = build_phase_gate(phi, time_grid.duration, scheme['rabi_au'], model, delay=scheme['delay_au'],
                                dt=ctx.config.time['dt_au'], force=ctx.config.scenario['force'])
    _write_field(ctx, 'field.csv', sequence.to_field())
    achieved = _gate_map(ctx, plan, model, chosen, qubit, sequence, '0-,0')
    ctx.manifest.results['achieved_phase_rad'] = float(np.angle(achieved[1, 1] / achieved[0, 0]))
    _record_gate(ctx, np.diag([1.0, np.exp(1j * phi)]), achieved)


def run_cnot_adiabatic(ctx):
    """C-NOT on |1+,0>, |1-,0> through the |2+,0>, |2-,0> doublet."""
    scheme = ctx.config.scheme
    labels = ['1+,0', '1-,0', '2+,0', '2-,0']
    qubit = ['1+,0', '1-,0']
    plan, _, chosen, model = _few_level(ctx, labels)
    time_grid = _time_grid(ctx)
    phi = scheme['phase_rad']
    sequence = build_cnot(time_grid.duration, scheme['rabi_au'], model, delay=scheme['delay_au'], phi=phi,
                          dt=ctx.config.time['dt_au'], force=ctx.config.scenario['force'])
    _write_field(ctx, 'field.csv', sequence.to_field())
    achieved = _gate_map(ctx, plan, model, chosen, qubit, sequence, '1+,0')
    _record_gate(ctx, phase_shift_gate(phi), achieved)


def run_robustness_scan(ctx):
    """Fidelity maps over (rabi, delay) for each configured duration."""
    scheme, scan = ctx.config.scheme, ctx.config.scan
    labels = ['0+,0', '0-,0', scheme['intermediate']]
    plan, _, chosen, model = _few_level(ctx, labels)
    epsilon = scheme['epsilon']
    if scan['scheme'] == 'fstirap':
        initial, target = np.array([1.0, 0.0, 0.0]), np.array([1.0, -epsilon, 0.0]) * SQRT_HALF
    else:
        initial, target = np.array([1.0, epsilon, 0.0]) * SQRT_HALF, np.array([1.0, -epsilon, 0.0]) * SQRT_HALF
    rabi_range = (scan['rabi_min'], scan['rabi_max'])

    summaries, plateaus = {}, []
    for duration_ps in scan['durations_ps']:
        duration = ps_to_au(duration_ps)
        fixed = {'epsilon': epsilon, 'duration': duration, 'dt': ctx.config.time['dt_au'],
                 'force': ctx.config.scenario['force'], 'intermediate': scheme['intermediate']}
        delay_range = (scan['delay_min_fraction'] * duration, scan['delay_max_fraction'] * duration)
        with ctx.stage(f'scan_{duration_ps:g}ps'):
            if scan['distributed']:
                if scheme['evaluator'] != 'rwa':
                    raise SchemeError('distributed scans evaluate in the few-level model; set evaluator = rwa')
                result = distributed_robustness_scan(scan['scheme'], fixed, model, initial, target, rabi_range,
                                                     delay_range, scan['resolution'])
            else:
                builder = functools.partial(SCHEME_BUILDERS[scan['scheme']], model=model, **fixed)
                if scheme['evaluator'] == 'rwa':
                    evaluator = RWAEvaluator(model, initial, target)
                else:
                    psi0 = superpose(initial, [pair.state for pair in chosen])
                    evaluator = GridEvaluator(plan, chosen, psi0, target)
                result = robustness_scan(builder, evaluator, rabi_range, delay_range, scan['resolution'],
                                         threads=ctx.threads, duration=duration)
        write_matrix(ctx.output(f'scan_{duration_ps:g}ps.csv'), result.rabi_axis, result.delay_axis,
                     result.fidelity, corner='rabi_au\\delay_au')
        if not np.isfinite(result.fidelity).any():
            raise SchemeError(f'every scan point failed at {duration_ps:g} ps')
        rabi, delay, best = result.best()
        plateau = result.plateau_fraction(scan['threshold'])
        plateaus.append(plateau)
        summaries[f'{duration_ps:g}ps'] = {'plateau_fraction': plateau, 'best_fidelity': best,
                                          'best_rabi_au': rabi, 'best_delay_au': delay,
                                          'failed_points': int(np.sum(np.isnan(result.fidelity)))}
        logger.info(f"Scan at {duration_ps:g} ps: best F = {best:.4f} at rabi {rabi:.3g}, delay {delay:.3g}; "
                    f"plateau fraction {plateau:.3f}")

    ctx.manifest.results['scans'] = summaries
    first = summaries[f'{scan["durations_ps"][0]:g}ps']
    acceptance = ctx.config.acceptance
    ctx.check('best_fidelity', first['best_fidelity'], acceptance['min_fidelity'])
    ctx.check('plateau_fraction', first['plateau_fraction'], acceptance['min_plateau_fraction'])
    if len(plateaus) > 1:
        ctx.manifest.results['plateau_decreasing'] = bool(all(a > b for a, b in zip(plateaus, plateaus[1:])))


# Scenarios: optimal and local control

def _control_setup(ctx):
    surface = load_surface(ctx)
    plan = make_plan(ctx, surface, time_grid=_time_grid(ctx))
    pairs = solve_eigenstates(ctx, plan)
    return surface, plan, pairs


def _localization_outputs(ctx, plan, pairs, field_, initial, target):
    """Populations, final state, area curve and spectrograms of a localization field."""
    left, right = _localized(pairs)
    plus, minus = find_state(pairs, '0+,0'), find_state(pairs, '0-,0')
    with ctx.stage('propagate'):
        trajectory = propagate(initial, field_, plan, stride=ctx.config.time['stride'],
                               basis=[plus.state, minus.state, left, right])
    _write_trajectory(ctx, trajectory, ['0+,0', '0-,0'] + LOCALIZED_LABELS)
    write_wavefunction(ctx.output('final_state.bin'), trajectory.final, time_au=plan.time_grid.t_end)

    scales = ctx.config.oct['area_scales']
    with ctx.stage('area_curve'):
        yields = area_perturbation_curve(initial, target, field_, plan, scales)
    write_table(ctx.output('area_curve.csv'), ['scale', 'yield'], np.column_stack([scales, yields]))
    ctx.manifest.results['area_curve'] = dict(zip((f'{s:g}' for s in scales), yields.tolist()))
    ctx.manifest.results['carrier_cm1'] = _write_spectrograms(ctx, field_)
    return float(abs(inner_product(target, trajectory.final)) ** 2)


def run_oct_localize(ctx):
    """|0+,0> -> |0L,0> by iterative optimal control."""
    _, plan, pairs = _control_setup(ctx)
    plus = find_state(pairs, '0+,0')
    left, _ = _localized(pairs)
    problem = ControlProblem([plus.state], [left], **_control_options(ctx))
    result = _optimize(ctx, oct_optimize, problem, plan, memory_limit_gb=ctx.memory_limit_gb)
    _record_control(ctx, result)
    final_yield = _localization_outputs(ctx, plan, pairs, result.field, plus.state, left)
    ctx.check('fidelity', final_yield, ctx.config.acceptance['min_fidelity'])


def run_local_control(ctx):
    """|0+,0> -> |0L,0> by local control, optionally refined by optimal control."""
    _, plan, pairs = _control_setup(ctx)
    plus = find_state(pairs, '0+,0')
    left, _ = _localized(pairs)
    o = ctx.config.oct
    problem = ControlProblem([plus.state], [left], **_control_options(ctx))
    config = LocalControlConfig(lambda_x=o['lambda_x'], lambda_y=o['lambda_y'], shaped=o['shaped'])
    with ctx.stage('local_control'):
        local = local_control_field(problem, config, plan, memory_limit_gb=ctx.memory_limit_gb)
    stride = ctx.config.time['stride']
    nodes = plan.time_grid.nodes()
    write_table(ctx.output('performance.csv'), ['t_au', 'performance'],
                np.column_stack([nodes[::stride], local.performance[::stride]]))
    ctx.manifest.results['local_yield'] = local.final_yield

    field_ = local.field
    if o['refine']:
        refined = ControlProblem([plus.state], [left], zero_order_field=local.field, **_control_options(ctx))
        result = _optimize(ctx, oct_optimize, refined, plan, memory_limit_gb=ctx.memory_limit_gb)
        _write_field(ctx, 'local_field.csv', local.field)
        _record_control(ctx, result)
        field_ = result.field
    else:
        _write_field(ctx, 'field.csv', local.field)
    final_yield = _localization_outputs(ctx, plan, pairs, field_, plus.state, left)
    ctx.check('fidelity', final_yield, ctx.config.acceptance['min_fidelity'])


def run_oct_gate(ctx):
    """Multitarget optimal control of a one- or two-qubit gate."""
    o = ctx.config.oct
    _, plan, pairs = _control_setup(ctx)
    name = o['gate']
    encoding = o['encoding'] or ('single' if GATE_DIMENSIONS[name] == 2 else 'two-vibrator')
    labels = list(ENCODINGS[encoding])
    basis = [find_state(pairs, label).state for label in labels]
    gate = gate_matrix(name, phase=ctx.config.scheme['phase_rad'])

    result, fidelity = _optimize(ctx, multitarget_oct, basis, gate, plan, memory_limit_gb=ctx.memory_limit_gb,
                                 **_control_options(ctx))
    _record_control(ctx, result)
    with ctx.stage('propagate'):
        trajectory = propagate(basis[0], result.field, plan, stride=ctx.config.time['stride'], basis=basis)
    _write_trajectory(ctx, trajectory, labels)
    achieved = control_unitary(basis, result.final_states)
    carrier = _write_spectrograms(ctx, result.field)
    ctx.manifest.results['carrier_cm1'] = carrier
    if name == 'cnot':
        gap = hartree_to_cm1(find_state(pairs, '0-,1').energy - find_state(pairs, '0-,0').energy)
        ctx.manifest.results['gap_cm1'] = float(gap)
        ctx.manifest.results['carrier_offset_cm1'] = float(abs(carrier - gap))
    write_table(ctx.output('unitary.csv'), ['row', 'column', 're', 'im'],
                [(m, n, achieved[m, n].real, achieved[m, n].imag)
                 for m in range(len(basis)) for n in range(len(basis))],
                comments=[f'states: {"; ".join(labels)}'])
    ctx.check('gate_fidelity', fidelity, ctx.config.acceptance['min_fidelity'])


def run_oct_bifurcation(ctx):
    """|0,0>_R -> |0L,0> across the bifurcation, starting from harmonic zero-order fields."""
    o = ctx.config.oct
    surface, plan, pairs = _control_setup(ctx)
    scenario = _optimize(ctx, bifurcation_scenario, plan, pairs, surface, amplitude=o['zero_order_amplitude'],
                         stride=ctx.config.time['stride'], memory_limit_gb=ctx.memory_limit_gb,
                         **_control_options(ctx))
    _record_control(ctx, scenario.control)
    trajectory = scenario.trajectory
    _write_trajectory(ctx, trajectory, [], name='trajectory.csv')
    write_wavefunction(ctx.output('final_state.bin'), trajectory.final, time_au=plan.time_grid.t_end)
    ctx.manifest.results['carrier_cm1'] = _write_spectrograms(ctx, scenario.control.field)

    ts1 = next(point for point in surface.stationary_points() if point.name == 'TS1')
    results = ctx.manifest.results
    results.update({
        'mechanism': scenario.mechanism,
        'theta_crossing_au': scenario.theta_crossing,
        'phi_crossing_au': scenario.phi_crossing,
        'omega_theta_cm1': float(hartree_to_cm1(scenario.omega_theta)),
        'omega_phi_cm1': float(hartree_to_cm1(scenario.omega_phi)),
        'max_energy_ev': float(hartree_to_ev(np.max(trajectory.energy))),
        'ts1_energy_ev': ts1.energy_ev,
    })
    logger.info(f"Bifurcation run: {scenario.mechanism} mechanism, yield {scenario.control.objective:.4f}")
    acceptance = ctx.config.acceptance
    ctx.check('fidelity', scenario.control.objective, acceptance['min_fidelity'])
    ctx.check('energy_above_ts1_ev', results['max_energy_ev'] - ts1.energy_ev,
              acceptance['max_energy_above_ts1_ev'], upper=True)
    ctx.expect('mechanism', scenario.mechanism, acceptance['mechanism'])


# Scenarios: analysis

def run_gabor(ctx):
    """Spectrograms of a field CSV (columns t_au, Ex_au, Ey_au)."""
    path = ctx.config.gabor['field_file']
    columns, data, _ = read_table(path)
    if len(columns) < 3 or data.shape[0] < 2:
        raise DomainError(f'{path}: expected columns t_au, Ex_au, Ey_au and at least two rows')
    field_ = PolarizedField(data[:, 0], data[:, 1], data[:, 2])
    ctx.manifest.results['carrier_cm1'] = _write_spectrograms(ctx, field_)


SCENARIOS = {
    'calibrate': run_calibrate,
    'eigen': run_eigen,
    'fstirap-localize': run_fstirap_localize,
    'localized-swap': run_localized_swap,
    'phase-gate-adiabatic': run_phase_gate_adiabatic,
    'cnot-adiabatic': run_cnot_adiabatic,
    'robustness-scan': run_robustness_scan,
    'oct-localize': run_oct_localize,
    'oct-hadamard': run_oct_gate,
    'oct-phase': run_oct_gate,
    'oct-cnot': run_oct_gate,
    'oct-bifurcation': run_oct_bifurcation,
    'local-control': run_local_control,
    'gabor': run_gabor,
}


def _report(ctx):
    if ctx.config.scenario['report']:
        generate_run_report(ctx.manifest, ctx.path(REPORT_NAME))


def run(config, toolkit=None, output_dir=None):
    """Execute ``config`` and return its manifest.

    Errors propagate after the manifest has been written with ``partial`` set;
    the exception gains a ``scenario`` attribute naming the kind.
    """
    toolkit = toolkit or create_toolkit(os.environ.get('LASERCTL_ENV', 'development'))
    settings = toolkit.config
    kind = config.kind.value
    run_dir = output_dir or config.scenario['output_dir'] or os.path.join(settings.get('OUTPUT_DIR', 'runs'), kind)
    os.makedirs(run_dir, exist_ok=True)

    ctx = RunContext(config, settings, run_dir)
    logger.info(f"Running scenario '{kind}' ({config.variant.value} surface) into {ctx.run_dir}")
    config.write(ctx.output(CONFIG_NAME))
    try:
        SCENARIOS[kind](ctx)
    except LaserCtlError as e:
        e.scenario = kind
        ctx.manifest.partial = True
        ctx.manifest.error = f'{type(e).__name__}: {str(e)}'
        logger.error(f"Scenario '{kind}' failed: {str(e)}")
        ctx.finalize()
        _report(ctx)
        raise

    if config.scenario['plots']:
        try:
            emit_plots(ctx.run_dir)
        except DomainError as e:
            logger.warning(f"No plots for '{kind}': {str(e)}")
    ctx.finalize()
    _report(ctx)
    status = 'passed' if ctx.manifest.passed else 'FAILED acceptance'
    logger.info(f"Scenario '{kind}' finished: {status}")
    return ctx.manifest
