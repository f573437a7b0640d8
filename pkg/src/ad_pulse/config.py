"""Scenario files: git-config style INI with unit-suffixed keys.

Every physical quantity carries its unit in the key name (`tau_ini_us`,
`a_x_khz`, `b_field_tesla`); values are converted to SI with angular
frequencies once, when the system and protocol are built.
"""
from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass, field, replace
from io import StringIO
from pathlib import Path
import logging

import numpy as np

from .errors import ConfigError
from .protocols import CELLS, FAMILIES, ProtocolSpec
from .registry import random_registry, registry_entries
from .spin_model import COUPLINGS, GAMMA_C13_KHZ_PER_TESLA, KHZ, NuclearSpec, SpinSystem

logger = logging.getLogger(__name__)

ACTIONS = ('spectrum', 'sweep', 'polarize', 'storage', 'lzcompare')
UNIT_SUFFIXES = ('pi_units', 'tesla', 'khz', 'mhz', 'hz', 'us', 'ns', 'ms', 's', 'rad')
DEFAULT_B_FIELD_TESLA = 0.0403
NUCLEUS_PREFIX = 'nucleus:'

# section -> key -> (kind, default); kind is a type or a tuple of choices
SCHEMA = {
    'scenario': {
        'name': (str, 'scenario'),
        'action': (ACTIONS, 'spectrum'),
        'seed': (int, 0),
        'out_dir': (str, 'out'),
        'threads': (int, 1),
    },
    'system': {
        'omega_L_khz': (float, None),
        'b_field_tesla': (float, None),
        'gamma_khz_per_tesla': (float, GAMMA_C13_KHZ_PER_TESLA),
        'coupling': (COUPLINGS, 'nv'),
        'registry': (str, ''),
        'nuclei': (str, ''),
    },
    'protocol': {
        'protocol': (FAMILIES, 'cpmg'),
        'delta_theta_pi_units': (float, 0.0),
        't_pi_ns': (float, 0.0),
        'harmonic_j': (int, 1),
        'cell': (CELLS, 'symmetric'),
    },
    'sweep': {
        'tau_ini_us': (float, None),
        'tau_fin_us': (float, None),
        'delta_tau_ns': (float, None),
        'n_p': (int, 1),
        'repetitions': (int, 1),
        'reinit': (('none', 'to_ket0', 'to_Xplus', 'to_Xminus'), 'none'),
        't2_budget_ms': (float, None),
        'electron': (str, 'Xplus'),
        'nuclear': (str, 'all_down'),
        'target': (str, ''),
        'target_gamma0': (float, 20.0),
        'n_linewidths': (float, 20.0),
        'window': (('auto', 'minus', 'plus', 'from_zero', 'explicit'), 'auto'),
    },
    'spectrum': {
        'tau_min_us': (float, None),
        'tau_max_us': (float, None),
        'n_points': (int, 2000),
        'window': (('full', 'half'), 'full'),
        'overlap_floor': (float, 0.5),
        'gap_threshold_factor': (float, 0.2),
    },
    'storage': {
        'a_re': (float, 1.0),
        'a_im': (float, 0.0),
        'b_re': (float, 0.0),
        'b_im': (float, 0.0),
        'renormalize': (bool, False),
        'nuclear_init': (('down', 'up'), 'down'),
        'target': (str, ''),
        'target_gamma0': (float, 40.0),
        'half_widths_ns': (str, ''),
        'center_offsets_ns': (str, '0'),
    },
    'lz': {
        'period_reading': (('resonance', 'instantaneous'), 'resonance'),
        'scan_a_x_khz': (str, ''),
    },
}
NUCLEUS_SCHEMA = {
    'a_x_khz': (float, None),
    'a_z_khz': (float, None),
}


@dataclass
class Scenario:
    values: dict
    nuclei: tuple = ()
    source: str | None = None

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.values == other.values and self.nuclei == other.nuclei

    def get(self, section, key):
        return self.values[section][key]

    @property
    def name(self):
        return self.get('scenario', 'name')

    @property
    def action(self):
        return self.get('scenario', 'action')

    @property
    def seed(self):
        return self.get('scenario', 'seed')

    @property
    def out_dir(self):
        return Path(self.get('scenario', 'out_dir'))

    @property
    def threads(self):
        return self.get('scenario', 'threads')

    @property
    def harmonic(self):
        return self.get('protocol', 'harmonic_j')


def _stem(key):
    for suffix in UNIT_SUFFIXES:
        if key.endswith('_' + suffix):
            return key[:-len(suffix) - 1], suffix
    return key, None


def _unknown_key(section, key, schema):
    stem, suffix = _stem(key)
    if suffix is not None:
        for known in schema:
            known_stem, known_suffix = _stem(known)
            if known_stem == stem and known_suffix != suffix:
                return ConfigError(f"{section}.{key}", f"unit mismatch, expected '{known}' ({known_suffix})")
    return ConfigError(f"{section}.{key}", "unknown key")


def _convert(section, key, kind, raw):
    key_path = f"{section}.{key}"
    text = raw.strip()
    if isinstance(kind, tuple):
        if text not in kind:
            raise ConfigError(key_path, f"expected one of {', '.join(kind)}, got '{text}'")
        return text
    if kind is str:
        return text
    if kind is bool:
        lowered = text.lower()
        if lowered not in ('true', 'false', 'yes', 'no', '1', '0'):
            raise ConfigError(key_path, f"expected a boolean, got '{text}'")
        return lowered in ('true', 'yes', '1')
    if kind is float and text.lower() in ('', 'auto', 'none'):
        return None
    try:
        value = kind(text)
    except ValueError:
        raise ConfigError(key_path, f"expected {kind.__name__}, got '{text}'") from None
    if kind is float and not np.isfinite(value):
        raise ConfigError(key_path, f"must be finite, got '{text}'")
    return value


def _read_section(parser, section, schema, strict):
    values = {key: default for key, (_, default) in schema.items()}
    if not parser.has_section(section):
        return values
    for key, raw in parser.items(section):
        if key not in schema:
            error = _unknown_key(section, key, schema)
            if strict:
                raise error
            logger.warning("ignoring %s", error)
            continue
        values[key] = _convert(section, key, schema[key][0], raw)
    return values


def _split_list(text):
    return [item.strip() for item in text.split(',') if item.strip()]


def parse_float_list(text, key_path):
    try:
        return [float(item) for item in _split_list(text)]
    except ValueError:
        raise ConfigError(key_path, f"expected comma-separated numbers, got '{text}'") from None


def _resolve_nuclei(parser, values, strict):
    system = values['system']
    registry = system['registry']
    nuclei = []
    if registry.startswith('random:'):
        try:
            count = int(registry.split(':', 1)[1])
        except ValueError:
            raise ConfigError('system.registry', f"expected random:<N>, got '{registry}'") from None
        nuclei.extend(random_registry(count, values['scenario']['seed']))
    elif registry:
        try:
            nuclei.extend(registry_entries(_split_list(registry)))
        except KeyError as e:
            raise ConfigError('system.registry', e.args[0]) from None

    for section in parser.sections():
        if not section.startswith(NUCLEUS_PREFIX):
            continue
        label = section[len(NUCLEUS_PREFIX):].strip()
        spec = _read_section(parser, section, NUCLEUS_SCHEMA, strict)
        for key, value in spec.items():
            if value is None:
                raise ConfigError(f"{section}.{key}", "missing value")
        nuclei = [n for n in nuclei if n[0] != label]
        nuclei.append((label, spec['a_x_khz'], spec['a_z_khz']))

    selection = _split_list(system['nuclei'])
    if selection:
        by_label = {n[0]: n for n in nuclei}
        missing = [label for label in selection if label not in by_label]
        if missing:
            raise ConfigError('system.nuclei', f"unknown nuclei {', '.join(missing)}")
        nuclei = [by_label[label] for label in selection]
    if not nuclei:
        raise ConfigError('system.registry', "no nuclei configured")
    return tuple(nuclei)


def _check_consistency(values):
    system = values['system']
    if system['omega_L_khz'] is not None and system['b_field_tesla'] is not None:
        raise ConfigError('system.omega_L_khz', "give either omega_L_khz or b_field_tesla, not both")
    if system['omega_L_khz'] is None and system['b_field_tesla'] is None:
        system['b_field_tesla'] = DEFAULT_B_FIELD_TESLA
    if values['scenario']['threads'] < 1:
        raise ConfigError('scenario.threads', "must be >= 1")
    sweep = values['sweep']
    if sweep['window'] == 'explicit':
        for key in ('tau_ini_us', 'tau_fin_us', 'delta_tau_ns'):
            if sweep[key] is None:
                raise ConfigError(f"sweep.{key}", "required when window = explicit")


def read_scenario_text(text, source=None, strict=True):
    parser = ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or '<scenario>')
    except ConfigParserError as e:
        raise ConfigError(source or '<scenario>', str(e).splitlines()[0]) from None

    for section in parser.sections():
        if section not in SCHEMA and not section.startswith(NUCLEUS_PREFIX):
            if strict:
                raise ConfigError(section, "unknown section")
            logger.warning("ignoring unknown section [%s]", section)

    values = {section: _read_section(parser, section, schema, strict) for section, schema in SCHEMA.items()}
    _check_consistency(values)
    nuclei = _resolve_nuclei(parser, values, strict)
    # the nucleus list is explicit from here on
    values['system']['registry'] = ''
    values['system']['nuclei'] = ''
    return Scenario(values, nuclei, source)


def parse_scenario(path, strict=True):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(str(path), f"cannot read scenario: {e.strerror}") from None
    return read_scenario_text(text, str(path), strict)


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_scenario(scenario):
    parser = ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in scenario.values.items():
        parser.add_section(section)
        for key, value in values.items():
            if value is None or value == '':
                continue
            parser.set(section, key, _format(value))
    for label, a_x, a_z in scenario.nuclei:
        section = f"{NUCLEUS_PREFIX}{label}"
        parser.add_section(section)
        parser.set(section, 'a_x_khz', _format(float(a_x)))
        parser.set(section, 'a_z_khz', _format(float(a_z)))
    buffer = StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def write_resolved(scenario, out_dir):
    path = Path(out_dir) / 'resolved.cfg'
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_scenario(scenario), encoding='utf-8')
    return path


def with_overrides(scenario, **overrides):
    """Copy with [scenario] keys replaced; None leaves a key unchanged."""
    values = {section: dict(items) for section, items in scenario.values.items()}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in SCHEMA['scenario']:
            raise ConfigError(f"scenario.{key}", "unknown key")
        values['scenario'][key] = str(value) if key == 'out_dir' else value
    return replace(scenario, values=values)


def build_system(scenario):
    system = scenario.values['system']
    nuclei = [NuclearSpec(label, a_x * KHZ, a_z * KHZ) for label, a_x, a_z in scenario.nuclei]
    try:
        if system['b_field_tesla'] is not None:
            return SpinSystem.from_b_field(system['b_field_tesla'], nuclei, system['coupling'],
                                           system['gamma_khz_per_tesla'])
        return SpinSystem(system['omega_L_khz'] * KHZ, nuclei, coupling=system['coupling'],
                          gamma_khz_per_tesla=system['gamma_khz_per_tesla'])
    except ValueError as e:
        raise ConfigError('system', str(e)) from None


def build_protocol(scenario):
    protocol = scenario.values['protocol']
    try:
        return ProtocolSpec(
            protocol['protocol'],
            delta_theta=protocol['delta_theta_pi_units'] * np.pi,
            t_pi=protocol['t_pi_ns'] * 1e-9,
            cell=protocol['cell'],
        )
    except ValueError as e:
        raise ConfigError('protocol', str(e)) from None


def storage_amplitudes(scenario):
    storage = scenario.values['storage']
    a = complex(storage['a_re'], storage['a_im'])
    b = complex(storage['b_re'], storage['b_im'])
    norm = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
    if storage['renormalize']:
        if norm == 0:
            raise ConfigError('storage.a_re', "amplitudes are both zero")
        if abs(norm - 1.0) > 1e-12:
            logger.info("renormalizing storage amplitudes (|a|^2 + |b|^2 = %.6f)", norm ** 2)
        return a / norm, b / norm
    if abs(norm - 1.0) > 1e-10:
        raise ConfigError('storage.a_re', f"|a|^2 + |b|^2 = {norm ** 2:.6f}, set renormalize = true to rescale")
    return a, b
