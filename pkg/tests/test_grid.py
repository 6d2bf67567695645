import numpy as np
import pytest

from laserctl.errors import DomainError, GridMismatchError, NormalizationError
from laserctl.grid import (expectation, inner_product, normalize, parity_of, parity_project, project_populations,
                           reflect_phi, superpose)
from laserctl.models import AngularGrid, Parity, PolarizedField, TimeGrid, WaveFunction

pytestmark = pytest.mark.unit


class TestAngularGrid:
    """Test grid nodes and weights."""

    def test_theta_nodes_avoid_poles(self):
        """Test that no theta node sits on a pole."""
        grid = AngularGrid(16, 16)
        assert grid.theta[0] == pytest.approx(np.pi / 17)
        assert grid.theta[-1] == pytest.approx(16 * np.pi / 17)
        assert np.all((grid.theta > 0.0) & (grid.theta < np.pi))

    def test_phi_nodes_are_periodic(self):
        """Test that phi starts at -pi and stops one step short of pi."""
        grid = AngularGrid(16, 32)
        assert grid.phi[0] == -np.pi
        assert grid.phi[-1] == pytest.approx(np.pi - 2 * np.pi / 32)
        assert grid.weight == pytest.approx(grid.d_theta * grid.d_phi)

    def test_coarse_grid_rejected(self):
        """Test the minimum grid size."""
        with pytest.raises(DomainError):
            AngularGrid(4, 16)


class TestWaveFunction:
    """Test wavefunction construction and algebra."""

    def test_shape_mismatch(self, grid):
        """Test amplitudes of the wrong shape are rejected."""
        with pytest.raises(GridMismatchError):
            WaveFunction(grid, np.zeros((3, 3)))

    def test_non_finite_rejected(self, grid):
        """Test NaN amplitudes are rejected."""
        amplitudes = np.ones(grid.shape)
        amplitudes[0, 0] = np.nan
        with pytest.raises(DomainError):
            WaveFunction(grid, amplitudes)

    def test_normalize_and_inner_product(self, wavepacket):
        """Test <psi|psi> = 1 after normalization."""
        assert wavepacket.norm() == pytest.approx(1.0)
        assert inner_product(wavepacket, wavepacket) == pytest.approx(1.0)

    def test_normalize_zero(self, grid):
        """Test the zero state cannot be normalized."""
        with pytest.raises(DomainError):
            normalize(WaveFunction(grid, np.zeros(grid.shape)))

    def test_inner_product_grid_mismatch(self, wavepacket):
        """Test states on different grids cannot be combined."""
        other = WaveFunction(AngularGrid(16, 16), np.ones((16, 16)))
        with pytest.raises(GridMismatchError):
            inner_product(wavepacket, other)

    def test_superpose_validation(self, wavepacket):
        """Test superposition argument checks."""
        with pytest.raises(DomainError):
            superpose([], [])
        with pytest.raises(DomainError):
            superpose([1.0, 2.0], [wavepacket])

    def test_expectation_requires_normalized_state(self, wavepacket):
        """Test expectation values of unnormalized states raise."""
        doubled = WaveFunction(wavepacket.grid, 2.0 * wavepacket.amplitudes)
        with pytest.raises(NormalizationError):
            expectation(doubled, lambda t, p: t)

    def test_expectation_of_phi(self, wavepacket):
        """Test the packet sits in the phi < 0 well."""
        assert expectation(wavepacket, lambda t, p: p + 0.0 * t) < 0.0


class TestReflection:
    """Test the phi -> -phi reflection and parity projections."""

    def test_reflection_is_involution(self, wavepacket):
        """Test reflecting twice returns the original state."""
        twice = reflect_phi(reflect_phi(wavepacket))
        np.testing.assert_allclose(twice.amplitudes, wavepacket.amplitudes)

    def test_reflection_maps_phi(self, grid):
        """Test the reflected state is psi(theta, -phi)."""
        theta, phi = grid.mesh
        psi = WaveFunction(grid, np.sin(phi) + np.cos(theta))
        expected = -np.sin(phi) + np.cos(theta)
        np.testing.assert_allclose(reflect_phi(psi).amplitudes.real, expected, atol=1e-12)

    def test_parity_projection(self, wavepacket):
        """Test even and odd projections have definite parity and add up."""
        even = parity_project(wavepacket, 1)
        odd = parity_project(wavepacket, -1)
        assert parity_of(even) is Parity.EVEN
        assert parity_of(odd) is Parity.ODD
        assert parity_of(wavepacket) is Parity.NONE
        np.testing.assert_allclose(even.amplitudes + odd.amplitudes, wavepacket.amplitudes)

    def test_project_populations_leakage(self, wavepacket):
        """Test populations in a parity basis plus leakage sum to the norm."""
        even = normalize(parity_project(wavepacket, 1))
        populations = project_populations(wavepacket, [even])
        assert populations.values[0] + populations.leakage == pytest.approx(1.0)


class TestTimeGridAndField:
    """Test time grids and sampled fields."""

    def test_from_step(self):
        """Test the step count follows from dt."""
        time_grid = TimeGrid.from_step(0.0, 100.0, 0.5)
        assert time_grid.n_steps == 200
        assert time_grid.dt == pytest.approx(0.5)
        assert time_grid.midpoints()[0] == pytest.approx(0.25)

    def test_invalid_time_grid(self):
        """Test empty or inverted time grids are rejected."""
        with pytest.raises(DomainError):
            TimeGrid(0.0, 1.0, 0)
        with pytest.raises(DomainError):
            TimeGrid(1.0, 0.0, 10)

    def test_field_on_wrong_grid(self):
        """Test field samples must match the step midpoints."""
        field_ = PolarizedField.zeros(TimeGrid(0.0, 10.0, 10))
        with pytest.raises(GridMismatchError):
            field_.midpoint_samples(TimeGrid(0.0, 10.0, 20))

    def test_reversed_field(self):
        """Test time reversal mirrors the samples onto the same midpoints."""
        time_grid = TimeGrid(0.0, 10.0, 10)
        field_ = PolarizedField.from_function(time_grid, lambda t: (t, -t))
        reversed_field = field_.reversed()
        np.testing.assert_allclose(reversed_field.times, field_.times)
        np.testing.assert_allclose(reversed_field.ex, field_.ex[::-1])
