import numpy as np
import pytest

from laserctl.adiabatic import (FewLevelModel, GaussianPulse, PulseSequence, RWAEvaluator, build_fstirap,
                                build_localization_swap, build_phase_gate, distributed_robustness_scan,
                                hcp_localize, robustness_scan, rwa_hamiltonian, rwa_propagate, rwa_unitary,
                                stirap_timing)
from laserctl.errors import DomainError, SchemeError
from laserctl.models import Polarization, TimeGrid
from laserctl.units import MAX_RABI_AU

pytestmark = pytest.mark.adiabatic

RABI = 5e-3
DURATION = 6e4


def dark_vector(h):
    """Null vector of the Lambda Hamiltonian: (H[2,1], -H[2,0], 0), normalized."""
    vector = np.array([h[2, 1], -h[2, 0], 0.0])
    return vector / np.linalg.norm(vector)


class TestFewLevelModel:
    """Test the few-level model built from dipole matrices."""

    def test_selection_rules_hold(self, three_level_model):
        """Test x couples equal and y opposite parities only."""
        assert three_level_model.selection_violations() == []

    def test_selection_violation_reported(self, three_level_model):
        """Test an x coupling inside the doublet is flagged."""
        mu_x = three_level_model.mu_x.copy()
        mu_x[0, 1] = mu_x[1, 0] = 0.1
        model = FewLevelModel(three_level_model.labels, three_level_model.energies, mu_x,
                              three_level_model.mu_y, three_level_model.parities)
        assert model.selection_violations() == [('x', '0+,0', '0-,0', 0.1)]

    def test_asymmetric_dipole_rejected(self, three_level_model):
        """Test dipole matrices must be symmetric."""
        mu_x = three_level_model.mu_x.copy()
        mu_x[0, 2] = 0.0
        with pytest.raises(SchemeError):
            FewLevelModel(three_level_model.labels, three_level_model.energies, mu_x, three_level_model.mu_y)

    def test_alpha(self, three_level_model):
        """Test the Stokes coupling ratio."""
        assert three_level_model.alpha('1+,0') == pytest.approx(0.75)

    def test_unknown_level(self, three_level_model):
        """Test looking up a level outside the model."""
        with pytest.raises(SchemeError):
            three_level_model.index('2+,0')

    def test_record_round_trip(self, three_level_model):
        """Test the JSON record restores the model."""
        restored = FewLevelModel.from_record(three_level_model.to_record())
        np.testing.assert_array_equal(restored.mu_y, three_level_model.mu_y)
        assert restored.labels == three_level_model.labels

    def test_from_eigenpairs_obeys_selection_rules(self, pairs, plan):
        """Test grid dipole matrices respect the reflection selection rules."""
        model = FewLevelModel.from_eigenpairs(pairs, None, plan)
        assert len(model.labels) == len(pairs)
        assert model.selection_violations() == []


class TestPulses:
    """Test pulse construction and sequence checks."""

    def test_pulse_outside_window(self):
        """Test a pulse whose support leaves the window is rejected."""
        pulse = GaussianPulse(amplitude=0.01, center=10.0, width=5.0, carrier=0.01)
        with pytest.raises(SchemeError):
            PulseSequence([pulse], TimeGrid(0.0, 100.0, 100))

    def test_negative_amplitude(self):
        """Test signs belong in the phase, not the amplitude."""
        with pytest.raises(SchemeError):
            GaussianPulse(amplitude=-0.01, center=50.0, width=5.0, carrier=0.01)

    def test_stirap_timing_stays_inside(self):
        """Test both pulses keep five widths from the window edges."""
        t_s, t_p, width = stirap_timing(1000.0, 150.0)
        assert t_s - 5 * width == pytest.approx(0.0)
        assert t_p + 5 * width == pytest.approx(1000.0)
        assert t_p - t_s == pytest.approx(150.0)

    def test_fstirap_pulse_layout(self, three_level_model):
        """Test Stokes on 0- <-> intermediate (y) and pump on 0+ <-> intermediate (x)."""
        sequence = build_fstirap('1+,0', 1, DURATION, RABI, 0.15 * DURATION, three_level_model)
        stokes_early, stokes_late, pump = sequence.pulses
        assert stokes_early.polarization is Polarization.Y
        assert stokes_early.transition == ('0-,0', '1+,0')
        assert pump.polarization is Polarization.X
        assert pump.carrier == pytest.approx(0.01)
        assert stokes_early.center < pump.center == stokes_late.center
        assert stokes_late.polarization is Polarization.Y
        assert stokes_late.transition == stokes_early.transition
        assert pump.amplitude * 0.5 == pytest.approx(RABI)

    def test_fstirap_validation(self, three_level_model):
        """Test epsilon and the intensity guard."""
        with pytest.raises(SchemeError):
            build_fstirap('1+,0', 0, DURATION, RABI, 0.15 * DURATION, three_level_model)
        with pytest.raises(SchemeError):
            build_fstirap('1+,0', 1, DURATION, 2 * MAX_RABI_AU, 0.15 * DURATION, three_level_model)
        sequence = build_fstirap('1+,0', 1, DURATION, 2 * MAX_RABI_AU, 0.15 * DURATION, three_level_model,
                                 force=True)
        assert sequence.peak_amplitude > 0.0

    def test_missing_level(self, three_level_model):
        """Test schemes that need levels outside the model."""
        with pytest.raises(SchemeError):
            build_phase_gate(np.pi / 4, DURATION, RABI, three_level_model)


class TestDarkState:
    """Test the f-STIRAP dark state at the end of the sequence."""

    @pytest.mark.parametrize('epsilon', [1, -1])
    def test_final_dark_state_is_target(self, three_level_model, epsilon):
        """Test the dark state at T is (|0+> - epsilon |0->)/sqrt(2)."""
        sequence = build_fstirap('1+,0', epsilon, DURATION, RABI, 0.15 * DURATION, three_level_model)
        h = rwa_hamiltonian(three_level_model, sequence, sequence.time_grid.t_end)
        target = np.array([1.0, -epsilon, 0.0]) / np.sqrt(2.0)
        assert abs(np.vdot(target, dark_vector(h))) ** 2 == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(h @ dark_vector(h), 0.0, atol=1e-15)

    def test_initial_dark_state_is_ground(self, three_level_model):
        """Test the dark state at t0 is |0+> (Stokes first)."""
        sequence = build_fstirap('1+,0', 1, DURATION, RABI, 0.15 * DURATION, three_level_model)
        h = rwa_hamiltonian(three_level_model, sequence, sequence.time_grid.t_start)
        assert abs(dark_vector(h)[0]) ** 2 == pytest.approx(1.0, abs=1e-6)

    def test_final_ratio(self, three_level_model):
        """Test a custom pump/Stokes ratio sets the final superposition."""
        sequence = build_fstirap('1+,0', 1, DURATION, RABI, 0.15 * DURATION, three_level_model, final_ratio=0.5)
        h = rwa_hamiltonian(three_level_model, sequence, sequence.time_grid.t_end)
        target = np.array([1.0, -0.5, 0.0]) / np.sqrt(1.25)
        assert abs(np.vdot(target, dark_vector(h))) ** 2 == pytest.approx(1.0, abs=1e-6)


class TestRWAPropagation:
    """Test rotating-wave propagation of the adiabatic schemes."""

    @pytest.mark.parametrize('epsilon', [1, -1])
    def test_fstirap_creates_localized_state(self, three_level_model, epsilon):
        """Test |0+> ends in (|0+> - epsilon |0->)/sqrt(2) with little intermediate population."""
        sequence = build_fstirap('1+,0', epsilon, DURATION, RABI, 0.15 * DURATION, three_level_model)
        trajectory = rwa_propagate(three_level_model, sequence, [1.0, 0.0, 0.0], record_every=100)
        target = np.array([1.0, -epsilon, 0.0]) / np.sqrt(2.0)
        assert abs(np.vdot(target, trajectory.final)) ** 2 > 0.99
        assert trajectory.populations[-1, 2] < 1e-2
        np.testing.assert_allclose(trajectory.populations.sum(axis=1), 1.0, atol=1e-6)

    def test_localization_swap(self, three_level_model):
        """Test the swap moves the packet from one well to the other."""
        sequence = build_localization_swap(1, DURATION, RABI, 0.15 * DURATION, three_level_model)
        initial = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
        target = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
        assert RWAEvaluator(three_level_model, initial, target)(sequence) > 0.99

    def test_unitary(self, three_level_model):
        """Test the propagated basis forms a unitary."""
        sequence = build_fstirap('1+,0', 1, 2e4, RABI, 3e3, three_level_model)
        u = rwa_unitary(three_level_model, sequence)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(3), atol=1e-6)

    def test_phase_gate_returns_population(self, phase_gate_model):
        """Test |0-> returns to itself and |0+> is untouched."""
        sequence = build_phase_gate(np.pi / 4, 1e5, RABI, phase_gate_model)
        u = rwa_unitary(phase_gate_model, sequence)
        assert u[0, 0] == pytest.approx(1.0)
        assert abs(u[1, 1]) ** 2 > 0.9

    def test_initial_vector_length(self, three_level_model):
        """Test the initial vector must match the model size."""
        sequence = build_fstirap('1+,0', 1, DURATION, RABI, 0.15 * DURATION, three_level_model)
        with pytest.raises(SchemeError):
            rwa_propagate(three_level_model, sequence, [1.0, 0.0])


class TestAnalyticLimits:
    """Test the RWA integrator against closed-form few-level solutions."""

    def test_constant_lambda_couplings(self, three_level_model):
        """Test equal constant pump and Stokes fields give bright-state Rabi cycling at sqrt(2) Omega."""
        omega, duration = 2e-3, 5000.0
        model = three_level_model
        pulses = [GaussianPulse(amplitude=omega / abs(model.dipole(polarization, lower, '1+,0')),
                                center=duration / 2.0, width=1e8, carrier=0.01, polarization=polarization,
                                transition=(lower, '1+,0'))
                  for polarization, lower in (('x', '0+,0'), ('y', '0-,0'))]
        sequence = PulseSequence(pulses, TimeGrid(0.0, duration, 1), check_support=False)
        h = rwa_hamiltonian(model, sequence, duration / 2.0)
        g_p, g_s = h[0, 2], h[1, 2]
        assert abs(g_p) == pytest.approx(omega / 2.0)
        assert abs(g_s) == pytest.approx(omega / 2.0)

        trajectory = rwa_propagate(model, sequence, [1.0, 0.0, 0.0], record_every=50)
        g = np.sqrt(abs(g_p) ** 2 + abs(g_s) ** 2)
        assert 2.0 * g == pytest.approx(np.sqrt(2.0) * omega)
        bright = np.array([g_p, g_s, 0.0]) / g
        overlap = np.conj(bright[0])
        ground = np.array([1.0, 0.0, 0.0])
        excited = np.array([0.0, 0.0, 1.0])
        for t, amplitudes in zip(trajectory.times, trajectory.amplitudes):
            expected = (ground - overlap * bright
                        + overlap * (np.cos(g * t) * bright - 1j * np.sin(g * t) * excited))
            np.testing.assert_allclose(amplitudes, expected, atol=1e-6)

    @pytest.mark.parametrize('area, upper', [(np.pi, 1.0), (np.pi / 2.0, 0.5)])
    def test_two_level_pulse_area(self, area, upper):
        """Test a resonant Gaussian of area A leaves sin^2(A/2) in the upper level."""
        mu = np.array([[0.0, 0.5], [0.5, 0.0]])
        model = FewLevelModel(['0+,0', '1+,0'], [0.0, 0.01], mu, np.zeros((2, 2)), ['+', '+'])
        width = 300.0
        pulse = GaussianPulse(amplitude=area / (0.5 * width * np.sqrt(2.0 * np.pi)), center=6.0 * width,
                              width=width, carrier=0.01, transition=('0+,0', '1+,0'))
        sequence = PulseSequence([pulse], TimeGrid(0.0, 12.0 * width, 1))
        populations = rwa_propagate(model, sequence, [1.0, 0.0]).populations[-1]
        np.testing.assert_allclose(populations, [1.0 - upper, upper], atol=1e-6)


class TestHalfCyclePulse:
    """Test the half-cycle-pulse reference scheme."""

    def test_quarter_period_localizes(self):
        """Test area pi/4 plus a quarter tunneling period gives (|0+> + |0->)/sqrt(2)."""
        splitting = 1e-6
        final = hcp_localize(np.pi / 4, [0.0, splitting], np.pi / (2.0 * splitting))
        left = abs(final[0] + final[1]) ** 2 / 2.0
        assert left == pytest.approx(1.0, abs=1e-9)


class TestRobustnessScan:
    """Test fidelity scans over (rabi, delay)."""

    def test_failed_points_become_nan(self):
        """Test a failing point is NaN and counted out of the plateau."""
        def builder(rabi, delay):
            if rabi > 2.5:
                raise SchemeError('too strong')
            return rabi

        scan = robustness_scan(builder, lambda sequence: 1.0, (1.0, 3.0), (0.0, 1.0), 3, threads=2)
        assert np.isnan(scan.fidelity[2]).all()
        assert np.isfinite(scan.fidelity[:2]).all()
        assert scan.plateau_fraction(0.9) == pytest.approx(6 / 9)
        assert scan.best()[2] == 1.0

    def test_resolution_guard(self):
        """Test a scan needs at least two points per axis."""
        with pytest.raises(DomainError):
            robustness_scan(lambda rabi, delay: None, lambda s: 1.0, (1.0, 2.0), (0.0, 1.0), 1)

    def test_distributed_scan_eager(self, toolkit, three_level_model):
        """Test the Celery fan-out returns the same grid shape (eager mode)."""
        fixed = {'epsilon': 1, 'duration': 2e4, 'dt': 10.0, 'force': False, 'intermediate': '1+,0'}
        initial = np.array([1.0, 0.0, 0.0])
        target = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
        scan = distributed_robustness_scan('fstirap', fixed, three_level_model, initial, target,
                                           (2e-3, 4e-3), (0.1 * 2e4, 0.2 * 2e4), 2)
        assert scan.fidelity.shape == (2, 2)
        assert np.isfinite(scan.fidelity).all()
        assert scan.duration == 2e4

    def test_unknown_scheme(self, three_level_model):
        """Test the distributed scan only knows registered schemes."""
        with pytest.raises(SchemeError):
            distributed_robustness_scan('nope', {}, three_level_model, [1, 0, 0], [1, 0, 0], (1e-3, 2e-3),
                                        (0.0, 1.0), 2)
