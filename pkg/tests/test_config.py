import logging
from pathlib import Path

import numpy as np
import pytest

from ad_pulse.config import (
    DEFAULT_B_FIELD_TESLA, build_protocol, build_system, emit_scenario, parse_float_list, parse_scenario,
    read_scenario_text, storage_amplitudes, with_overrides, write_resolved,
)
from ad_pulse.errors import ConfigError
from ad_pulse.spin_model import KHZ

from .helpers import SMALL_SPECTRUM, SMALL_SWEEP


def scenario_with(extra, base=SMALL_SPECTRUM):
    return read_scenario_text(base + extra)


def config_error(text, strict=True):
    with pytest.raises(ConfigError) as excinfo:
        read_scenario_text(text, strict=strict)
    return excinfo.value


def test_parse_small_spectrum():
    scenario = read_scenario_text(SMALL_SPECTRUM)

    assert scenario.name == 'small_spectrum'
    assert scenario.action == 'spectrum'
    assert scenario.nuclei == (('A', 20.0, 0.0),)
    assert scenario.get('spectrum', 'n_points') == 200
    assert scenario.get('spectrum', 'tau_min_us') == 1.05


def test_defaults_fill_missing_keys():
    scenario = read_scenario_text(SMALL_SWEEP)

    assert scenario.seed == 0
    assert scenario.threads == 1
    assert scenario.get('sweep', 'n_p') == 1
    assert scenario.get('sweep', 'reinit') == 'none'
    assert scenario.get('sweep', 'window') == 'auto'
    assert scenario.get('protocol', 'cell') == 'symmetric'


def test_b_field_defaults_when_no_frequency_given():
    scenario = read_scenario_text("[scenario]\nname = x\n[system]\nregistry = C1\n")

    assert scenario.get('system', 'b_field_tesla') == DEFAULT_B_FIELD_TESLA
    assert scenario.nuclei[0][0] == 'C1'


def test_unit_mismatch_names_the_expected_key():
    error = config_error(SMALL_SWEEP + "tau_ini_ns = 100\n")

    assert error.key_path == 'sweep.tau_ini_ns'
    assert 'unit mismatch' in str(error)
    assert 'tau_ini_us' in str(error)


def test_unknown_key_and_section():
    assert 'unknown key' in str(config_error(SMALL_SWEEP + "colour = blue\n"))
    assert 'unknown section' in str(config_error(SMALL_SWEEP + "[plotting]\ndpi = 300\n"))


def test_lenient_mode_warns_and_ignores(caplog):
    with caplog.at_level(logging.WARNING, logger='ad_pulse.config'):
        scenario = read_scenario_text(SMALL_SWEEP + "colour = blue\n[plotting]\ndpi = 300\n", strict=False)

    assert scenario.name == 'small_sweep'
    assert 'colour' in caplog.text
    assert 'plotting' in caplog.text


def test_bad_values_are_config_errors():
    assert config_error(SMALL_SWEEP + "n_p = two\n").key_path == 'sweep.n_p'
    assert config_error(SMALL_SWEEP + "reinit = sometimes\n").key_path == 'sweep.reinit'
    assert config_error(SMALL_SWEEP + "tau_ini_us = inf\n").key_path == 'sweep.tau_ini_us'
    assert config_error(SMALL_SPECTRUM + "[storage]\nrenormalize = maybe\n").key_path == 'storage.renormalize'


def test_malformed_file_is_a_config_error():
    config_error("this is not a scenario\n")


def test_frequency_and_field_are_exclusive():
    error = config_error(SMALL_SPECTRUM.replace("[system]\n", "[system]\nb_field_tesla = 0.04\n"))

    assert error.key_path == 'system.omega_L_khz'


def test_nuclei_are_required():
    assert config_error("[scenario]\nname = empty\n").key_path == 'system.registry'


def test_registry_expansion_and_selection():
    scenario = read_scenario_text("[system]\nregistry = C1,C2,C3\nnuclei = C3,C1\n")

    assert [n[0] for n in scenario.nuclei] == ['C3', 'C1']
    assert scenario.nuclei[1][1] == 26.6


def test_nucleus_section_overrides_registry_entry():
    scenario = read_scenario_text("[system]\nregistry = C1,C2\n[nucleus:C2]\na_x_khz = 1.5\na_z_khz = 2.5\n")

    assert scenario.nuclei[-1] == ('C2', 1.5, 2.5)
    assert len(scenario.nuclei) == 2


def test_registry_errors():
    assert config_error("[system]\nregistry = C1,C99\n").key_path == 'system.registry'
    assert config_error("[system]\nregistry = random:many\n").key_path == 'system.registry'
    assert config_error("[system]\nregistry = C1\nnuclei = C2\n").key_path == 'system.nuclei'
    assert 'missing' in str(config_error("[system]\nomega_L_khz = 431.5\n[nucleus:A]\na_x_khz = 1\n"))


def test_random_registry_is_seeded():
    text = "[scenario]\nseed = 5\n[system]\nregistry = random:3\n"

    first = read_scenario_text(text)
    second = read_scenario_text(text)
    other = read_scenario_text(text.replace("seed = 5", "seed = 6"))

    assert first.nuclei == second.nuclei
    assert first.nuclei != other.nuclei
    assert [n[0] for n in first.nuclei] == ['R1', 'R2', 'R3']
    assert all(20.0 <= n[1] <= 60.0 for n in first.nuclei)


def test_emitted_scenario_reads_back_equal():
    scenario = read_scenario_text("[scenario]\nname = trip\nseed = 3\n[system]\nregistry = C1,C2\n"
                                  "[storage]\nrenormalize = true\nhalf_widths_ns = 30, 60\n")

    again = read_scenario_text(emit_scenario(scenario))

    assert again == scenario


def test_write_resolved(tmp_path):
    scenario = read_scenario_text(SMALL_SPECTRUM)

    path = write_resolved(scenario, tmp_path / "out")

    assert path.name == 'resolved.cfg'
    assert parse_scenario(path) == scenario


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_scenario(tmp_path / "absent.cfg")


def test_explicit_window_needs_all_endpoints():
    error = config_error(SMALL_SWEEP + "window = explicit\ntau_ini_us = 1.0\ntau_fin_us = 1.3\n")

    assert error.key_path == 'sweep.delta_tau_ns'


def test_threads_must_be_positive():
    assert config_error(SMALL_SWEEP.replace("action = sweep", "action = sweep\nthreads = 0")).key_path == \
        'scenario.threads'


def test_build_system_from_frequency_and_field():
    by_frequency = build_system(read_scenario_text(SMALL_SPECTRUM))
    by_field = build_system(read_scenario_text("[system]\nb_field_tesla = 0.0403\nregistry = C1\n"))

    assert np.isclose(by_frequency.omega_L, 431.5 * KHZ)
    assert np.isclose(by_frequency.nuclei[0].a_x, 20.0 * KHZ)
    assert np.isclose(by_field.omega_L / KHZ, 431.5, rtol=1e-3)
    assert by_field.b_field == 0.0403


def test_build_errors_become_config_errors():
    negative = read_scenario_text("[system]\nomega_L_khz = 431.5\n[nucleus:A]\na_x_khz = -5\na_z_khz = 0\n")
    echo = read_scenario_text(SMALL_SPECTRUM.replace("protocol = cpmg", "protocol = cpmg\ndelta_theta_pi_units = 0.25"))

    with pytest.raises(ConfigError):
        build_system(negative)
    with pytest.raises(ConfigError):
        build_protocol(echo)


def test_build_protocol_converts_units():
    scenario = read_scenario_text(SMALL_SPECTRUM.replace(
        "protocol = cpmg", "protocol = polcpmg\ndelta_theta_pi_units = 0.25\nt_pi_ns = 20"))

    spec = build_protocol(scenario)

    assert spec.family == 'polcpmg'
    assert np.isclose(spec.delta_theta, 0.25 * np.pi)
    assert np.isclose(spec.t_pi, 20e-9)


def test_storage_amplitudes_renormalize():
    scenario = read_scenario_text(SMALL_SPECTRUM + "[storage]\na_re = 0.5773502691896258\n"
                                  "b_re = 1.1547005383792515\nrenormalize = true\n")

    a, b = storage_amplitudes(scenario)

    assert np.isclose(a, 1 / np.sqrt(5))
    assert np.isclose(b, 2 / np.sqrt(5))


def test_storage_amplitudes_must_be_normalized_without_renormalize():
    scenario = read_scenario_text(SMALL_SPECTRUM + "[storage]\na_re = 0.5773502691896258\n"
                                  "b_re = 1.1547005383792515\n")

    with pytest.raises(ConfigError, match="renormalize"):
        storage_amplitudes(scenario)


def test_with_overrides_copies():
    scenario = read_scenario_text(SMALL_SWEEP)

    changed = with_overrides(scenario, seed=7, out_dir=Path("elsewhere"), threads=None)

    assert changed.seed == 7
    assert changed.out_dir == Path("elsewhere")
    assert changed.threads == 1
    assert scenario.seed == 0
    with pytest.raises(ConfigError):
        with_overrides(scenario, colour='blue')


def test_parse_float_list():
    assert parse_float_list("30, 60,100", 'storage.half_widths_ns') == [30.0, 60.0, 100.0]
    assert parse_float_list("", 'storage.half_widths_ns') == []
    with pytest.raises(ConfigError):
        parse_float_list("30, wide", 'storage.half_widths_ns')
