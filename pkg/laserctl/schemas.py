"""Scenario files: INI sections validated by marshmallow schemas.

A scenario file has one section per concern::

    [scenario]
    kind = fstirap-localize

    [scheme]
    rabi_au = 2e-4

Every key is checked against its section schema (unknown keys are rejected),
defaults that depend on the scenario kind are filled in, and the resolved
configuration can be dumped back to the same format.
"""

import configparser
import io
import os
import re
from dataclasses import dataclass, field

import numpy as np
from marshmallow import RAISE, Schema, ValidationError, fields, validate, validates, validates_schema

from laserctl.errors import ConfigError
from laserctl.models import ScenarioKind, SurfaceVariant
from laserctl.units import MAX_RABI_AU

KINDS = [kind.value for kind in ScenarioKind]
VARIANTS = [variant.value for variant in SurfaceVariant]
INTERMEDIATES = ['1+,0', '2+,0']
GATE_NAMES = ['identity', 'hadamard', 'phase', 'cnot']
ENCODING_NAMES = ['single', 'excitation-parity', 'parity-excitation', 'two-vibrator']
GATE_DIMENSIONS = {'identity': 2, 'hadamard': 2, 'phase': 2, 'cnot': 4}
ENCODING_DIMENSIONS = {'single': 2, 'excitation-parity': 4, 'parity-excitation': 4, 'two-vibrator': 4}


class FloatList(fields.Field):
    """Comma separated floats, e.g. ``durations_ps = 20, 4.5``."""

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, (list, tuple)):
            items = value
        else:
            items = [part for part in str(value).split(',') if part.strip()]
        try:
            return [float(item) for item in items]
        except (TypeError, ValueError):
            raise ValidationError('Not a comma separated list of numbers.') from None

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return ', '.join(repr(float(v)) for v in value)


class ScenarioSection(Schema):
    class Meta:
        unknown = RAISE

    kind = fields.String(required=True, validate=validate.OneOf(KINDS))
    variant = fields.String(validate=validate.OneOf(VARIANTS), load_default='qcisd')
    output_dir = fields.String(load_default=None)
    seed = fields.Integer(validate=validate.Range(min=0), load_default=0)
    force = fields.Boolean(load_default=False)
    threads = fields.Integer(validate=validate.Range(min=1), load_default=1)
    calibration_file = fields.String(load_default=None)
    plots = fields.Boolean(load_default=True)
    report = fields.Boolean(load_default=True)


class GridSection(Schema):
    class Meta:
        unknown = RAISE

    n_theta = fields.Integer(validate=validate.Range(min=8, max=1024), load_default=128)
    n_phi = fields.Integer(validate=validate.Range(min=8, max=1024), load_default=128)
    eigen_count = fields.Integer(validate=validate.Range(min=1, max=200), load_default=20)
    solver = fields.String(validate=validate.OneOf(['relax', 'dvr']), load_default='relax')

    @validates('n_phi')
    def validate_n_phi(self, value, **kwargs):
        if value % 2:
            raise ValidationError('n_phi must be even so the phi reflection maps the grid onto itself.')


class TimeSection(Schema):
    class Meta:
        unknown = RAISE

    duration_ps = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False), load_default=None)
    dt_au = fields.Float(validate=validate.Range(min=0.0, max=50.0, min_inclusive=False), load_default=1.0)
    stride = fields.Integer(validate=validate.Range(min=1), load_default=100)


class SchemeSection(Schema):
    class Meta:
        unknown = RAISE

    intermediate = fields.String(validate=validate.OneOf(INTERMEDIATES), load_default='1+,0')
    epsilon = fields.Integer(validate=validate.OneOf([1, -1]), load_default=1)
    rabi_au = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False), load_default=2e-4)
    delay_au = fields.Float(validate=validate.Range(min=0.0), load_default=None)
    delay_fraction = fields.Float(validate=validate.Range(min=0.0, max=0.9), load_default=0.15)
    final_ratio = fields.Float(load_default=None)
    phase_rad = fields.Float(validate=validate.Range(min=-2 * np.pi, max=2 * np.pi), load_default=float(np.pi / 4))
    evaluator = fields.String(validate=validate.OneOf(['rwa', 'grid']), load_default='grid')

    @validates('final_ratio')
    def validate_final_ratio(self, value, **kwargs):
        if value is not None and value == 0.0:
            raise ValidationError('final_ratio must be non-zero.')


class ScanSection(Schema):
    class Meta:
        unknown = RAISE

    scheme = fields.String(validate=validate.OneOf(['fstirap', 'swap']), load_default='fstirap')
    rabi_min = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False), load_default=1e-5)
    rabi_max = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False), load_default=5e-4)
    delay_min_fraction = fields.Float(validate=validate.Range(min=0.0, max=0.9), load_default=0.0)
    delay_max_fraction = fields.Float(validate=validate.Range(min=0.0, max=0.9), load_default=0.5)
    resolution = fields.Integer(validate=validate.Range(min=2, max=256), load_default=16)
    durations_ps = FloatList(load_default=lambda: [20.0, 4.5])
    threshold = fields.Float(validate=validate.Range(min=0.0, max=1.0), load_default=0.8)
    distributed = fields.Boolean(load_default=False)

    @validates_schema
    def validate_ranges(self, data, **kwargs):
        if data['rabi_min'] >= data['rabi_max']:
            raise ValidationError('rabi_min must be below rabi_max.', 'rabi_min')
        if data['delay_min_fraction'] >= data['delay_max_fraction']:
            raise ValidationError('delay_min_fraction must be below delay_max_fraction.', 'delay_min_fraction')
        if any(d <= 0.0 for d in data['durations_ps']):
            raise ValidationError('durations must be positive.', 'durations_ps')


class OctSection(Schema):
    class Meta:
        unknown = RAISE

    alpha = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False), load_default=1.2)
    max_iterations = fields.Integer(validate=validate.Range(min=0), load_default=50)
    threshold = fields.Float(validate=validate.Range(min=0.0, max=1.0), load_default=1e-6)
    patience = fields.Integer(validate=validate.Range(min=1), load_default=3)
    monotonic_tolerance = fields.Float(validate=validate.Range(min=0.0), load_default=1e-10)
    functional = fields.String(validate=validate.OneOf(['ss', 'sm']), load_default='ss')
    overlap = fields.String(validate=validate.OneOf(['instantaneous', 'krotov']), load_default='instantaneous')
    lambda_x = fields.Float(validate=validate.Range(min=0.0), load_default=8.0)
    lambda_y = fields.Float(validate=validate.Range(min=0.0), load_default=1.2)
    shaped = fields.Boolean(load_default=False)
    refine = fields.Boolean(load_default=False)
    zero_order_amplitude = fields.Float(validate=validate.Range(min=0.0), load_default=0.02)
    gate = fields.String(validate=validate.OneOf(GATE_NAMES), load_default=None)
    encoding = fields.String(validate=validate.OneOf(ENCODING_NAMES), load_default=None)
    area_scales = FloatList(load_default=lambda: [0.8, 0.9, 1.0, 1.1, 1.2])

    @validates_schema
    def validate_gate(self, data, **kwargs):
        gate, encoding = data.get('gate'), data.get('encoding')
        if gate and encoding and GATE_DIMENSIONS[gate] != ENCODING_DIMENSIONS[encoding]:
            raise ValidationError(f'gate {gate!r} acts on {GATE_DIMENSIONS[gate]} states but encoding '
                                  f'{encoding!r} has {ENCODING_DIMENSIONS[encoding]}.', 'gate')


class GaborSection(Schema):
    class Meta:
        unknown = RAISE

    field_file = fields.String(load_default=None)
    tau_ps = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False), load_default=0.2)
    n_omega = fields.Integer(validate=validate.Range(min=2, max=8192), load_default=512)
    n_times = fields.Integer(validate=validate.Range(min=2, max=8192), load_default=200)
    omega_max_cm1 = fields.Float(validate=validate.Range(min=0.0, min_inclusive=False), load_default=5000.0)


class AcceptanceSection(Schema):
    class Meta:
        unknown = RAISE

    min_fidelity = fields.Float(validate=validate.Range(min=0.0, max=1.0), load_default=None)
    min_plateau_fraction = fields.Float(validate=validate.Range(min=0.0, max=1.0), load_default=None)
    max_energy_above_ts1_ev = fields.Float(validate=validate.Range(min=0.0), load_default=None)
    mechanism = fields.String(validate=validate.OneOf(['sequential', 'concerted']), load_default=None)


SECTION_SCHEMAS = {
    'scenario': ScenarioSection,
    'grid': GridSection,
    'time': TimeSection,
    'scheme': SchemeSection,
    'scan': ScanSection,
    'oct': OctSection,
    'gabor': GaborSection,
    'acceptance': AcceptanceSection,
}

# Keys whose defaults come from the toolkit settings when present.
SETTING_DEFAULTS = {
    ('grid', 'n_theta'): 'N_THETA',
    ('grid', 'n_phi'): 'N_PHI',
    ('grid', 'eigen_count'): 'EIGEN_COUNT',
    ('time', 'dt_au'): 'DT_AU',
    ('time', 'stride'): 'OBSERVABLE_STRIDE',
    ('scenario', 'threads'): 'THREADS',
}

KIND_DEFAULTS = {
    'fstirap-localize': {'time': {'duration_ps': 20.0}, 'acceptance': {'min_fidelity': 0.9}},
    'localized-swap': {'time': {'duration_ps': 20.0}, 'acceptance': {'min_fidelity': 0.9}},
    'phase-gate-adiabatic': {'time': {'duration_ps': 20.0}, 'scheme': {'intermediate': '2+,0'},
                             'acceptance': {'min_fidelity': 0.9}},
    'cnot-adiabatic': {'time': {'duration_ps': 20.0}, 'scheme': {'phase_rad': float(np.pi)},
                       'acceptance': {'min_fidelity': 0.9}},
    'robustness-scan': {'scheme': {'intermediate': '2+,0', 'evaluator': 'rwa'},
                        'acceptance': {'min_fidelity': 0.9}},
    'oct-localize': {'time': {'duration_ps': 4.5}, 'acceptance': {'min_fidelity': 0.99}},
    'oct-hadamard': {'time': {'duration_ps': 4.5}, 'oct': {'gate': 'hadamard', 'encoding': 'single',
                                                           'functional': 'sm'},
                     'acceptance': {'min_fidelity': 0.95}},
    'oct-phase': {'time': {'duration_ps': 4.5}, 'oct': {'gate': 'phase', 'encoding': 'single',
                                                        'functional': 'sm'},
                  'acceptance': {'min_fidelity': 0.95}},
    'oct-cnot': {'time': {'duration_ps': 4.5}, 'oct': {'gate': 'cnot', 'encoding': 'two-vibrator',
                                                       'functional': 'sm'},
                 'acceptance': {'min_fidelity': 0.9}},
    'oct-bifurcation': {'scenario': {'variant': 'mp2'}, 'grid': {'eigen_count': 60}, 'time': {'duration_ps': 4.5},
                        'oct': {'max_iterations': 300},
                        'acceptance': {'min_fidelity': 0.8, 'max_energy_above_ts1_ev': 0.5,
                                       'mechanism': 'sequential'}},
    'local-control': {'time': {'duration_ps': 4.5}, 'acceptance': {'min_fidelity': 0.85}},
}

TIMED_KINDS = set(KIND_DEFAULTS) - {'robustness-scan'}

_SECTION_RE = re.compile(r'^\s*\[([^\]]+)\]')
_KEY_RE = re.compile(r'^([^\s=:#;\[][^=:]*?)\s*[=:]')


@dataclass
class ScenarioConfig:
    """Fully resolved scenario: one dict per section."""
    scenario: dict
    grid: dict
    time: dict
    scheme: dict
    scan: dict
    oct: dict
    gabor: dict
    acceptance: dict
    source: str = field(default=None, compare=False)

    @property
    def kind(self):
        return ScenarioKind(self.scenario['kind'])

    @property
    def variant(self):
        return SurfaceVariant(self.scenario['variant'])

    def to_dict(self):
        return {name: dict(getattr(self, name)) for name in SECTION_SCHEMAS}

    def dump(self):
        """The resolved configuration in scenario-file format."""
        parser = configparser.ConfigParser(interpolation=None)
        for name, schema_class in SECTION_SCHEMAS.items():
            dumped = schema_class().dump(getattr(self, name))
            parser.add_section(name)
            for key, value in dumped.items():
                if value is None:
                    continue
                parser.set(name, key, _format_value(value))
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    def write(self, path):
        with open(path, 'w') as handle:
            handle.write(self.dump())
        return path


def _format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_numbers(text):
    """(section, key) -> line and section -> line of its header."""
    lines, section = {}, None
    for number, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_RE.match(line)
        if header:
            section = header.group(1).strip()
            lines[(section, None)] = number
            continue
        match = _KEY_RE.match(line)
        if match and section is not None:
            lines.setdefault((section, match.group(1).strip().lower()), number)
    return lines


def _read_sections(text, path):
    parser = configparser.ConfigParser(strict=True, interpolation=None,
                                       inline_comment_prefixes=('#', ';'), default_section='__defaults__')
    try:
        parser.read_string(text, source=path or '<string>')
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f'duplicate key {e.option!r} in section [{e.section}]', lineno=e.lineno, path=path) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f'duplicate section [{e.section}]', lineno=e.lineno, path=path) from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError('key outside of any section', lineno=e.lineno, path=path) from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ConfigError('malformed line', lineno=lineno, path=path) from None
    return {name: dict(parser.items(name, raw=True)) for name in parser.sections()}


def _first_error(messages):
    key = next(iter(messages))
    value = messages[key]
    if isinstance(value, dict):
        return _first_error(value)
    return key, value[0] if isinstance(value, list) else value


def _resolve_path(value, base_dir, section, key, lines, path):
    resolved = value if os.path.isabs(value) else os.path.normpath(os.path.join(base_dir, value))
    if not os.path.exists(resolved):
        raise ConfigError(f'[{section}] {key}: file {value!r} does not exist', lineno=lines.get((section, key)),
                          path=path)
    return os.path.abspath(resolved)


def load_config(sections, lines=None, path=None, settings=None, overrides=None):
    """Validate raw section dicts (strings or values) into a ``ScenarioConfig``."""
    lines = lines or {}
    raw = {name: dict(values) for name, values in sections.items()}
    for name, values in (overrides or {}).items():
        raw.setdefault(name, {}).update({k: v for k, v in values.items() if v is not None})

    for name in raw:
        if name not in SECTION_SCHEMAS:
            raise ConfigError(f'unknown section [{name}]; expected one of {sorted(SECTION_SCHEMAS)}',
                              lineno=lines.get((name, None)), path=path)
    scenario = raw.get('scenario') or {}
    if 'kind' not in scenario:
        raise ConfigError('[scenario] kind is required', lineno=lines.get(('scenario', None)), path=path)
    kind = str(scenario['kind']).strip()
    if kind not in KINDS:
        raise ConfigError(f'unknown scenario kind {kind!r}; choose from {", ".join(KINDS)}',
                          lineno=lines.get(('scenario', 'kind')), path=path)

    resolved = {}
    for name, schema_class in SECTION_SCHEMAS.items():
        given = raw.get(name, {})
        merged = dict(KIND_DEFAULTS.get(kind, {}).get(name, {}))
        for (section, key), setting in SETTING_DEFAULTS.items():
            if section == name and settings and settings.get(setting) is not None:
                merged.setdefault(key, settings[setting])
        merged.update(given)
        try:
            resolved[name] = schema_class().load(merged)
        except ValidationError as e:
            key, message = _first_error(e.messages)
            lineno = lines.get((name, key)) or lines.get((name, None))
            raise ConfigError(f'[{name}] {key}: {message}', lineno=lineno, path=path) from None

    config = ScenarioConfig(**resolved, source=path)
    _check_consistency(config, lines, path)
    return config


def _check_consistency(config, lines, path):
    base_dir = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()
    kind = config.scenario['kind']
    force = config.scenario['force']

    if config.scenario['calibration_file']:
        config.scenario['calibration_file'] = _resolve_path(
            config.scenario['calibration_file'], base_dir, 'scenario', 'calibration_file', lines, path)
    if config.gabor['field_file']:
        config.gabor['field_file'] = _resolve_path(
            config.gabor['field_file'], base_dir, 'gabor', 'field_file', lines, path)
    elif kind == 'gabor':
        raise ConfigError('[gabor] field_file is required for the gabor scenario',
                          lineno=lines.get(('gabor', None)) or lines.get(('scenario', 'kind')), path=path)

    if kind in TIMED_KINDS and config.time['duration_ps'] is None:
        raise ConfigError(f'[time] duration_ps is required for {kind}', lineno=lines.get(('time', None)), path=path)

    for section, key in (('scheme', 'rabi_au'), ('scan', 'rabi_max')):
        value = getattr(config, section)[key]
        if value > MAX_RABI_AU and not force:
            raise ConfigError(f'[{section}] {key} = {value:.3g} a.u. exceeds the intensity guard '
                              f'{MAX_RABI_AU:.3g} a.u. (1e14 W/cm^2); set force = true to override',
                              lineno=lines.get((section, key)), path=path)

    if kind in ('oct-hadamard', 'oct-phase', 'oct-cnot') and not config.oct['gate']:
        raise ConfigError(f'[oct] gate is required for {kind}', lineno=lines.get(('oct', None)), path=path)


def parse_config(path, settings=None, overrides=None):
    """Read, validate and resolve a scenario file.

    ``settings`` (toolkit settings) supply grid and time defaults; ``overrides``
    maps section -> key -> value and takes precedence over the file.
    """
    try:
        with open(path) as handle:
            text = handle.read()
    except OSError as e:
        raise ConfigError(f'cannot read scenario file: {e.strerror}', path=path) from None
    sections = _read_sections(text, path)
    return load_config(sections, _line_numbers(text), path, settings, overrides)


def build_config(kind, settings=None, **sections):
    """Config for ``kind`` built in code (CLI shortcuts and tests)."""
    sections = {name: dict(values) for name, values in sections.items()}
    sections.setdefault('scenario', {})['kind'] = kind
    return load_config(sections, settings=settings)
