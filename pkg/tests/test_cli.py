import numpy as np
import pandas as pd
import pytest

from ad_pulse import driver
from ad_pulse.config import parse_scenario
from ad_pulse.presets import list_presets, preset_path

from .helpers import SMALL_SPECTRUM, SMALL_SWEEP, ScenarioDir


@pytest.fixture
def scenarios(tmp_path):
    return ScenarioDir(tmp_path)


def test_spectrum_run_writes_every_artifact(scenarios):
    code = scenarios.run('spectrum', SMALL_SPECTRUM)

    assert code == 0
    for name in ('spectrum.csv', 'anticrossings.csv', 'resolved.cfg', 'manifest.json', 'spectrum.svg'):
        assert scenarios.exists('spectrum', name), f"missing {name}"
    crossings = pd.read_csv(scenarios.out_dir('spectrum') / 'anticrossings.csv')
    assert len(crossings) >= 1
    assert scenarios.manifest('spectrum')['summary']['n_anticrossings'] == len(crossings)


def test_resolved_scenario_reads_back(scenarios):
    scenarios.run('spectrum', SMALL_SPECTRUM, extra=['--no-plots'])

    resolved = parse_scenario(scenarios.out_dir('spectrum') / 'resolved.cfg')

    assert resolved.action == 'spectrum'
    assert resolved.nuclei == (('A', 20.0, 0.0),)


def test_manifest_lists_artifact_digests(scenarios):
    scenarios.run('spectrum', SMALL_SPECTRUM, extra=['--no-plots'])

    manifest = scenarios.manifest('spectrum')

    assert set(manifest['artifacts']) == {'resolved.cfg', 'spectrum.csv', 'anticrossings.csv'}
    assert 'compute' in manifest['timings_s']


def test_reruns_are_byte_identical(scenarios):
    scenarios.run('first', SMALL_SPECTRUM, extra=['--no-plots'])
    scenarios.run('second', SMALL_SPECTRUM, extra=['--no-plots'])

    for name in ('spectrum.csv', 'anticrossings.csv', 'resolved.cfg'):
        assert scenarios.read('first', name) == scenarios.read('second', name), f"{name} differs"


def test_sweep_run(scenarios):
    code = scenarios.run('sweep', SMALL_SWEEP)

    assert code == 0
    trajectory = pd.read_csv(scenarios.out_dir('sweep') / 'trajectory.csv')
    summary = scenarios.manifest('sweep')['summary']
    assert list(trajectory.columns[:8]) == ['step', 'rep', 'tau_s', 't_cum_s', 'L', 'P', 'Mz', 'purity']
    assert len(trajectory) == summary['n_steps']
    assert np.isclose(trajectory['P'].iloc[-1], summary['P_final'])
    assert -1.0 <= summary['P_final'] <= 1.0
    assert scenarios.exists('sweep', 'repetitions.csv')
    assert scenarios.exists('sweep', 'trajectory.svg')


def test_action_subcommand_overrides_the_scenario(scenarios):
    path = scenarios.write('override', SMALL_SWEEP)

    code = scenarios.run_cli(['spectrum', '--scenario', str(path), '--out', str(scenarios.out_dir('override')),
                              '--no-plots'])

    assert code == 0
    assert scenarios.exists('override', 'spectrum.csv')
    assert not scenarios.exists('override', 'trajectory.csv')


def test_config_error_exits_with_two(scenarios, capsys):
    code = scenarios.run('bad', SMALL_SWEEP + "tau_ini_ns = 100\n")

    assert code == 2
    assert 'unit mismatch' in capsys.readouterr().out


def test_lenient_flag_accepts_unknown_keys(scenarios):
    code = scenarios.run('lenient', SMALL_SPECTRUM + "colour = blue\n", extra=['--lenient', '--no-plots'])

    assert code == 0


def test_missing_scenario_file(scenarios, capsys):
    code = scenarios.run_cli(['run', '--scenario', str(scenarios.root / 'absent.cfg')])

    assert code == 2
    assert 'Error:' in capsys.readouterr().out


def test_no_command_prints_help(scenarios, capsys):
    assert scenarios.run_cli([]) == 1
    assert 'usage' in capsys.readouterr().out.lower()


def test_presets_are_listed(scenarios, capsys):
    code = scenarios.run_cli(['presets'])
    out = capsys.readouterr().out.split()

    assert code == 0
    assert out == list_presets()
    assert {'fig1_whole_bath_flip', 'fig2b_cluster_repeats', 'fig3_storage', 'lz_scaling'} <= set(out)


def test_unknown_preset(scenarios, capsys):
    assert scenarios.run_cli(['presets', 'fig9']) == 2
    assert 'unknown preset' in capsys.readouterr().out


def test_plot_subcommand_renders_a_written_csv(scenarios):
    scenarios.run('spectrum', SMALL_SPECTRUM, extra=['--no-plots'])
    csv = scenarios.out_dir('spectrum') / 'spectrum.csv'
    svg = scenarios.out_dir('spectrum') / 'custom.svg'

    assert not scenarios.exists('spectrum', 'spectrum.svg')
    assert scenarios.run_cli(['plot', str(csv), '--kind', 'spectrum', '--svg', str(svg)]) == 0
    assert svg.is_file()


def test_preset_driver_usage(monkeypatch, capsys):
    monkeypatch.setattr(driver, 'argv', ['adpulse-preset'])

    with pytest.raises(SystemExit) as excinfo:
        driver.main()

    assert excinfo.value.code == 1
    assert 'fig1_whole_bath_flip' in capsys.readouterr().out


def test_preset_driver_unknown_preset(monkeypatch, capsys):
    monkeypatch.setattr(driver, 'argv', ['adpulse-preset', 'fig9'])

    with pytest.raises(SystemExit) as excinfo:
        driver.main()

    assert excinfo.value.code == 2


def run_preset(scenarios, name):
    out = scenarios.out_dir(name)
    code = scenarios.run_cli(['presets', name, '--out', str(out), '--no-plots'])
    assert code == 0, f"preset {name} exited with {code}"
    return scenarios.manifest(name)['summary']


def test_lz_scaling_preset_total_time_goes_as_inverse_coupling(scenarios):
    run_preset(scenarios, 'lz_scaling')
    table = pd.read_csv(scenarios.out_dir('lz_scaling') / 'lz_scaling.csv')

    products = table['t_total_s'] * table['a_x_khz']
    spread = (products.max() - products.min()) / products.mean()

    assert spread < 0.05, f"t_tot * A_x spread {spread:.3f}"
    assert np.allclose(table['gamma0'], 5.0, rtol=1e-2)


@pytest.mark.slow
def test_whole_bath_flip_preset(scenarios):
    summary = run_preset(scenarios, 'fig1_whole_bath_flip')

    assert summary['P_initial'] < -0.99
    assert summary['P_final'] >= 0.98, f"final P {summary['P_final']:.4f}"
    assert summary['L_final'] <= -0.9, f"final L {summary['L_final']:.4f}"


@pytest.mark.slow
def test_cluster_repeats_preset_saturates(scenarios):
    summary = run_preset(scenarios, 'fig2b_cluster_repeats')
    series = np.abs(summary['P_series'])
    gains = np.diff(np.concatenate([[0.0], series]))

    assert np.all(gains >= -1e-3), f"polarization fell: {series}"
    assert series.max() >= 0.995, f"best P {series.max():.4f}"
    assert np.all(gains[:3] <= 2.2 / 5), f"early gains {gains[:3]}"


@pytest.mark.slow
def test_cluster_repeats_on_the_upper_split_resonance(scenarios):
    text = preset_path('fig2b_cluster_repeats').read_text().replace('window = minus', 'window = plus')

    assert scenarios.run('fig2b_plus', text, extra=['--no-plots']) == 0
    series = np.abs(scenarios.manifest('fig2b_plus')['summary']['P_series'])

    assert series[-1] >= 0.92, f"P after {len(series)} sweeps: {series}"


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=(
    "from a maximally mixed register one sweep moves each spin by at most one flip and later sweeps start "
    "closer to saturation, so the first gains shrink: about 0.39, 0.33 and 0.20 in the one-flip picture"
))
def test_cluster_repeats_first_gains_are_equal(scenarios):
    summary = run_preset(scenarios, 'fig2b_cluster_repeats')
    gains = np.diff(np.concatenate([[0.0], np.abs(summary['P_series'])]))[:3]

    assert (gains.max() - gains.min()) / gains.mean() <= 0.2, f"first gains {gains}"


@pytest.mark.slow
def test_single_spin_lz_comparison_preset(scenarios):
    summary = run_preset(scenarios, 'fig2a_single_spin_polcpmg')
    table = pd.read_csv(scenarios.out_dir('fig2a_single_spin_polcpmg') / 'lzcompare.csv')

    assert np.isclose(summary['gamma0'], 3.0, rtol=1e-2)
    assert set(summary['max_abs_dev_by_reading']) == {'resonance', 'instantaneous'}
    assert np.isclose(np.max(np.abs(table['deviation'])), summary['max_abs_dev'])
    assert abs(table['P_lz'].iloc[0]) < 1e-12
    assert abs(table['P_sim'].iloc[-1]) > abs(table['P_sim'].iloc[0])


@pytest.mark.slow
def test_storage_preset(scenarios):
    summary = run_preset(scenarios, 'fig3_storage')
    rows = pd.read_csv(scenarios.out_dir('fig3_storage') / 'fidelity.csv')

    assert summary['target'] == 'C1'
    assert summary['swap'] == 'flip-flop'
    assert len(rows) == 4
    assert set(rows['status']) <= {'ok', 'unbracketed'}
