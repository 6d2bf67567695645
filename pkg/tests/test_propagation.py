import numpy as np
import pytest
from scipy.linalg import expm

from laserctl.adiabatic import FewLevelModel
from laserctl.eigen import dvr_diagonalize, find_state
from laserctl.errors import DomainError, GridMismatchError
from laserctl.grid import inner_product, normalize, superpose
from laserctl.models import AngularGrid, KineticConvention, Parity, PolarizedField, TimeGrid, WaveFunction
from laserctl.propagation import (KineticSpec, PropagationPlan, apply_h0, extra_potential_v, interaction_amplitudes,
                                  propagate, step_array)
from laserctl.units import au_to_ps, hartree_to_ev, tunneling_time_ps
from tests.conftest import K_THETA, PHI_WELL, THETA_WELL, well_potential

pytestmark = pytest.mark.propagation


def kick(time_grid, amplitude=0.002, omega=0.004):
    return PolarizedField.from_function(
        time_grid, lambda t: (amplitude * np.cos(omega * t), 0.5 * amplitude * np.sin(omega * t)))


class TestKinetic:
    """Test the Wilson kinetic operator."""

    def test_extra_potential_value(self):
        """Test v(pi/2) = -1/(4 I_theta)."""
        kinetic = KineticSpec()
        assert extra_potential_v(np.pi / 2, kinetic) == pytest.approx(-1.0 / (4.0 * kinetic.I_theta))

    def test_extra_potential_singular_at_poles(self):
        """Test the extra potential refuses the poles."""
        with pytest.raises(DomainError):
            extra_potential_v(np.array([0.0, 1.0]), KineticSpec())

    def test_inertia_must_be_positive(self):
        """Test non-positive moments of inertia are rejected."""
        with pytest.raises(DomainError):
            KineticSpec(I_theta=0.0)

    def test_euclidean_plan_rejected(self, grid):
        """Test grid propagation is Wilson only."""
        with pytest.raises(DomainError):
            PropagationPlan(grid, KineticSpec(convention=KineticConvention.EUCLIDEAN), well_potential)

    def test_h0_is_hermitian(self, plan, wavepacket, grid):
        """Test <a|H0 b> = <H0 a|b> on two random states."""
        rng = np.random.default_rng(3)
        a = WaveFunction(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
        b = wavepacket
        left = np.vdot(a.amplitudes, apply_h0(b, plan).amplitudes)
        right = np.vdot(apply_h0(a, plan).amplitudes, b.amplitudes)
        assert left == pytest.approx(right, rel=1e-10, abs=1e-12)


class TestStepGuard:
    """Test the time-step accuracy guard."""

    def test_large_step_rejected(self, plan):
        """Test dt * max|V| >= 0.5 raises."""
        with pytest.raises(DomainError):
            plan.with_time_grid(TimeGrid.from_step(0.0, 100.0, 5.0))

    def test_strong_field_rejected(self, timed_plan, wavepacket):
        """Test a field that breaks the guard is refused before propagation."""
        field_ = PolarizedField.from_function(timed_plan.time_grid, lambda t: (10.0 + 0.0 * t, 0.0 * t))
        with pytest.raises(DomainError):
            propagate(wavepacket, field_, timed_plan)

    def test_kinetic_bound_does_not_limit_the_step(self):
        """Test a step past the kinetic spectral bound is accepted while dt * max|V| is small."""
        dense = AngularGrid(64, 64)
        dense_plan = PropagationPlan(dense, KineticSpec(), well_potential,
                                     time_grid=TimeGrid.from_step(0.0, 20.0, 1.0))
        assert dense_plan.dt * dense_plan.potential_bound < dense_plan.accuracy_guard
        assert dense_plan.dt * (dense_plan.potential_bound + dense_plan.kinetic_bound) >= dense_plan.accuracy_guard
        theta, phi = dense.mesh
        psi = normalize(WaveFunction(dense, np.exp(-((theta - THETA_WELL) / 0.2) ** 2
                                                   - ((phi - PHI_WELL) / 0.35) ** 2)))
        trajectory = propagate(psi, kick(dense_plan.time_grid), dense_plan, stride=5)
        assert np.max(np.abs(trajectory.norm - 1.0)) < 1e-10

    def test_plan_without_time_grid(self, plan, wavepacket):
        """Test propagation needs a time grid."""
        with pytest.raises(GridMismatchError):
            propagate(wavepacket, PolarizedField.zeros(TimeGrid(0.0, 10.0, 10)), plan)

    def test_state_on_other_grid(self, timed_plan):
        """Test the initial state must live on the plan's grid."""
        other = WaveFunction(AngularGrid(16, 16), np.ones((16, 16)) / np.sqrt(16 * 16 * AngularGrid(16, 16).weight))
        with pytest.raises(GridMismatchError):
            propagate(other, PolarizedField.zeros(timed_plan.time_grid), timed_plan)


class TestPropagate:
    """Test split-operator propagation."""

    def test_norm_is_conserved(self, timed_plan, wavepacket):
        """Test the norm stays at one under a field."""
        trajectory = propagate(wavepacket, kick(timed_plan.time_grid), timed_plan, stride=100)
        assert np.max(np.abs(trajectory.norm - 1.0)) < 1e-10
        assert trajectory.times[0] == 0.0
        assert trajectory.times[-1] == pytest.approx(1000.0)

    def test_field_free_energy_is_conserved(self, timed_plan, wavepacket):
        """Test <H0> is constant without a field."""
        trajectory = propagate(wavepacket, PolarizedField.zeros(timed_plan.time_grid), timed_plan, stride=100)
        np.testing.assert_allclose(trajectory.energy, trajectory.energy[0], rtol=0.0, atol=1e-7)

    def test_backward_steps_undo_forward_steps(self, timed_plan, wavepacket):
        """Test stepping back through the same field recovers the initial state."""
        ex, ey = kick(timed_plan.time_grid).midpoint_samples(timed_plan.time_grid)
        a = wavepacket.amplitudes.copy()
        for i in range(200):
            a = step_array(a, ex[i], ey[i], timed_plan)
        for i in reversed(range(200)):
            a = step_array(a, ex[i], ey[i], timed_plan, direction=-1)
        np.testing.assert_allclose(a, wavepacket.amplitudes, atol=1e-10)

    def test_batched_steps_match_single_steps(self, timed_plan, wavepacket):
        """Test a stack of states propagates like each state alone."""
        stack = np.stack([wavepacket.amplitudes, np.conj(wavepacket.amplitudes)])
        batched = step_array(stack, 0.001, -0.002, timed_plan)
        single = step_array(stack[1], 0.001, -0.002, timed_plan)
        np.testing.assert_allclose(batched[1], single, atol=1e-13)

    def test_table_columns(self, timed_plan, pairs):
        """Test the observable table carries one population column per basis state."""
        basis = [pair.state for pair in pairs[:3]]
        trajectory = propagate(pairs[0].state, kick(timed_plan.time_grid), timed_plan, stride=250, basis=basis)
        table = trajectory.table()
        assert table.shape == (5, 5 + 3)
        assert trajectory.populations[0, 0] == pytest.approx(1.0)

    def test_snapshots(self, timed_plan, wavepacket):
        """Test snapshots are taken every snapshot_stride steps."""
        trajectory = propagate(wavepacket, PolarizedField.zeros(timed_plan.time_grid), timed_plan,
                               stride=1000, snapshot_stride=250)
        assert [t for t, _ in trajectory.snapshots] == pytest.approx([250.0, 500.0, 750.0, 1000.0])

    def test_eigenstate_is_stationary(self, timed_plan, pairs):
        """Test interaction-picture amplitudes of a field-free eigenstate stay constant."""
        ground = pairs[0]
        odd = next(pair for pair in pairs if pair.label.parity is Parity.ODD)
        trajectory = propagate(ground.state, PolarizedField.zeros(timed_plan.time_grid), timed_plan, stride=1000)
        amplitudes = interaction_amplitudes(trajectory.final, [ground, odd], timed_plan.time_grid.t_end)
        assert amplitudes[0] == pytest.approx(1.0, abs=1e-5)
        assert abs(amplitudes[1]) < 1e-10


def shallow_well(theta, phi):
    """Harmonic in theta with a low phi barrier, so the doublet tunnels within a few 10^4 a.u."""
    c = np.cos(PHI_WELL)
    return 0.5 * K_THETA * (theta - THETA_WELL) ** 2 + 2e-4 * ((np.cos(phi) - c) / (1.0 - c)) ** 2


@pytest.fixture(scope='module')
def shallow(grid):
    """Plan and lowest even/odd eigenpairs of the shallow double well."""
    plan = PropagationPlan(grid, KineticSpec(), shallow_well)
    pairs = dvr_diagonalize(plan, 4)
    even = next(pair for pair in pairs if pair.label.parity is Parity.EVEN)
    odd = next(pair for pair in pairs if pair.label.parity is Parity.ODD)
    return plan, even, odd


def final_state(psi0, plan, time_grid, field_function):
    timed = plan.with_time_grid(time_grid)
    field_ = PolarizedField.from_function(time_grid, field_function)
    return propagate(psi0, field_, timed, stride=time_grid.n_steps).final


class TestAccuracy:
    """Test the propagator against convergence and few-level references."""

    def test_strang_convergence_is_second_order(self, plan, wavepacket):
        """Test halving dt cuts the end-state error about fourfold."""
        def driven(t):
            return 0.002 * np.cos(0.004 * t), 0.001 * np.sin(0.004 * t)

        reference = final_state(wavepacket, plan, TimeGrid.from_step(0.0, 400.0, 0.25), driven).amplitudes
        errors = [np.linalg.norm(final_state(wavepacket, plan, TimeGrid.from_step(0.0, 400.0, dt), driven).amplitudes
                                 - reference) for dt in (2.0, 1.0)]
        assert errors[1] > 1e-12
        assert 3.5 < errors[0] / errors[1] < 4.5

    def test_tunneling_period(self, shallow):
        """Test the localized doublet combination crosses to the other well after h / (2 dE)."""
        plan, even, odd = shallow
        splitting = odd.energy - even.energy
        period = 2.0 * np.pi / splitting
        assert au_to_ps(period) == pytest.approx(tunneling_time_ps(hartree_to_ev(splitting)), rel=1e-6)

        left = superpose([1.0, 1.0], [even.state, odd.state], normalize_result=True)
        right = superpose([1.0, -1.0], [even.state, odd.state], normalize_result=True)
        half = 0.5 * period
        time_grid = TimeGrid(0.0, half, int(np.ceil(half / 2.0)))
        trajectory = propagate(left, PolarizedField.zeros(time_grid), plan.with_time_grid(time_grid),
                               stride=time_grid.n_steps, basis=[left, right])
        assert trajectory.populations[0, 0] == pytest.approx(1.0, abs=1e-10)
        assert trajectory.populations[-1, 1] == pytest.approx(1.0, abs=1e-3)
        assert np.sign(trajectory.phi_avg[-1]) == -np.sign(trajectory.phi_avg[0])

    def test_two_level_reduction(self, plan, pairs):
        """Test a weak y pulse on the ground doublet follows the 2x2 matrix-exponential solution."""
        duration, amplitude = 4000.0, 1e-4
        time_grid = TimeGrid.from_step(0.0, duration, 1.0)

        def pulse(t):
            return 0.0 * t, amplitude * np.sin(np.pi * t / duration) ** 2

        doublet = [find_state(pairs, '0+,0'), find_state(pairs, '0-,0')]
        model = FewLevelModel.from_eigenpairs(pairs, ['0+,0', '0-,0'], plan)
        final = final_state(doublet[0].state, plan, time_grid, pulse)

        _, ey = pulse(time_grid.midpoints())
        c = np.array([1.0, 0.0], dtype=np.complex128)
        for value in ey:
            c = expm(-1j * time_grid.dt * (np.diag(model.energies) - model.mu_y * value)) @ c
        grid_populations = np.array([abs(inner_product(pair.state, final)) ** 2 for pair in doublet])
        assert abs(c[1]) ** 2 > 0.01
        np.testing.assert_allclose(grid_populations, np.abs(c) ** 2, atol=1e-4)
