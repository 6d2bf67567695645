import pytest

from laserctl.errors import ConfigError
from laserctl.models import ScenarioKind, SurfaceVariant
from laserctl.schemas import build_config, parse_config

pytestmark = pytest.mark.unit

FSTIRAP = """\
[scenario]
kind = fstirap-localize

[scheme]
rabi_au = 1e-4
epsilon = -1
"""


class TestParseConfig:
    """Test scenario files."""

    def test_defaults_are_filled(self, scenario_file):
        """Test kind defaults and schema defaults fill unset keys."""
        config = parse_config(scenario_file(FSTIRAP))
        assert config.kind is ScenarioKind.FSTIRAP_LOCALIZE
        assert config.variant is SurfaceVariant.QCISD
        assert config.scheme['rabi_au'] == 1e-4
        assert config.scheme['epsilon'] == -1
        assert config.time['duration_ps'] == 20.0
        assert config.acceptance['min_fidelity'] == 0.9
        assert config.grid['n_theta'] == 128

    def test_settings_supply_grid_defaults(self, scenario_file, toolkit):
        """Test toolkit settings override schema defaults but not the file."""
        path = scenario_file(FSTIRAP + '\n[grid]\nn_phi = 40\n')
        config = parse_config(path, settings=toolkit.config)
        assert config.grid['n_theta'] == 32
        assert config.grid['n_phi'] == 40
        assert config.time['stride'] == 10

    def test_overrides_take_precedence(self, scenario_file):
        """Test command-line overrides beat the file."""
        config = parse_config(scenario_file(FSTIRAP), overrides={'scheme': {'rabi_au': 3e-4}})
        assert config.scheme['rabi_au'] == 3e-4

    def test_duplicate_key_reports_line(self, scenario_file):
        """Test a repeated key names its line."""
        path = scenario_file(FSTIRAP + 'rabi_au = 2e-4\n')
        with pytest.raises(ConfigError) as excinfo:
            parse_config(path)
        assert excinfo.value.lineno == 7
        assert f'{path}:7' in str(excinfo.value)

    def test_unknown_key_reports_line(self, scenario_file):
        """Test keys outside the section schema are rejected with their line."""
        path = scenario_file(FSTIRAP + 'pump_shape = square\n')
        with pytest.raises(ConfigError) as excinfo:
            parse_config(path)
        assert excinfo.value.lineno == 7
        assert 'pump_shape' in str(excinfo.value)

    def test_unknown_section(self, scenario_file):
        """Test sections outside the schema set."""
        with pytest.raises(ConfigError):
            parse_config(scenario_file(FSTIRAP + '\n[laser]\npower = 1\n'))

    def test_missing_kind(self, scenario_file):
        """Test the scenario kind is required."""
        with pytest.raises(ConfigError):
            parse_config(scenario_file('[scenario]\nvariant = mp2\n'))

    def test_odd_phi_grid(self, scenario_file):
        """Test n_phi must be even."""
        with pytest.raises(ConfigError) as excinfo:
            parse_config(scenario_file(FSTIRAP + '\n[grid]\nn_phi = 33\n'))
        assert excinfo.value.lineno == 9

    def test_intensity_guard(self, scenario_file):
        """Test Rabi frequencies above the guard need force."""
        text = FSTIRAP.replace('1e-4', '0.01')
        with pytest.raises(ConfigError):
            parse_config(scenario_file(text))
        forced = text.replace('[scenario]\n', '[scenario]\nforce = true\n')
        assert parse_config(scenario_file(forced, name='forced.ini')).scenario['force'] is True

    def test_unreadable_file(self, tmp_path):
        """Test a missing scenario file."""
        with pytest.raises(ConfigError):
            parse_config(str(tmp_path / 'missing.ini'))

    def test_relative_calibration_file(self, scenario_file, calibration_file):
        """Test file paths resolve against the scenario directory."""
        config = parse_config(scenario_file(FSTIRAP.replace(
            '[scheme]', 'calibration_file = calibration.json\n\n[scheme]')))
        assert config.scenario['calibration_file'] == calibration_file

    def test_dump_round_trip(self, scenario_file, tmp_path):
        """Test a dumped configuration parses back to the same configuration."""
        config = parse_config(scenario_file(FSTIRAP))
        path = config.write(str(tmp_path / 'resolved.ini'))
        assert parse_config(path) == config


class TestBuildConfig:
    """Test configurations built in code."""

    def test_gabor_needs_field_file(self):
        """Test the gabor scenario requires its input field."""
        with pytest.raises(ConfigError):
            build_config('gabor')

    def test_gate_kinds_carry_gates(self):
        """Test gate scenarios default their gate and encoding."""
        config = build_config('oct-hadamard')
        assert config.oct['gate'] == 'hadamard'
        assert config.oct['encoding'] == 'single'
        assert config.oct['functional'] == 'sm'

    def test_gate_encoding_mismatch(self):
        """Test a two-qubit gate on a one-qubit encoding."""
        with pytest.raises(ConfigError):
            build_config('oct-cnot', oct={'encoding': 'single'})

    def test_scan_ranges(self):
        """Test scan bounds default to [1e-5, 5e-4] a.u. and must be ordered."""
        config = build_config('robustness-scan')
        assert config.scan['rabi_min'] == 1e-5
        assert config.scan['rabi_max'] == 5e-4
        with pytest.raises(ConfigError):
            build_config('robustness-scan', scan={'rabi_min': 1e-3, 'rabi_max': 1e-4})

    def test_robustness_defaults(self):
        """Test the scan defaults to the few-level evaluator through 2+."""
        config = build_config('robustness-scan')
        assert config.scheme['evaluator'] == 'rwa'
        assert config.scheme['intermediate'] == '2+,0'
        assert config.scan['durations_ps'] == [20.0, 4.5]

    def test_bifurcation_acceptance_defaults(self):
        """Test the bifurcation run bounds the energy above TS1 and expects the sequential path."""
        acceptance = build_config('oct-bifurcation').acceptance
        assert acceptance['min_fidelity'] == 0.8
        assert acceptance['max_energy_above_ts1_ev'] == 0.5
        assert acceptance['mechanism'] == 'sequential'
        with pytest.raises(ConfigError):
            build_config('oct-bifurcation', acceptance={'mechanism': 'diagonal'})
