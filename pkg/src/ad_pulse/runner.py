from dataclasses import replace
from pathlib import Path
from time import perf_counter
import logging

import numpy as np

from .config import (
    build_protocol, build_system, emit_scenario, parse_float_list, storage_amplitudes, write_resolved,
)
from .errors import AdPulseError, ConfigError, EXIT_OK
from .floquet import (
    extremal_gap, locate_anticrossings, scan_spectrum, spectrum_table, split_resonances, split_zone,
)
from .lz_model import (
    compare_readings, fit_comparison, gamma0, linewidth, lz_params, lz_polarization, schedule_for_gamma,
    step_for_gamma,
)
from .output import try_plot, write_csv, write_manifest
from .protocols import protocol_constants, resonance_tau
from .spin_model import KHZ
from .storage import crossing_pair_map, read_out, run_storage, storage_scan
from .sweep import SweepSchedule, make_initial_state, run_repeated_polarization, run_sweep, total_time

logger = logging.getLogger(__name__)

SPECTRUM_MARGIN = 0.1
FROM_ZERO_TAU = 10e-9


def _target_indices(scenario, system, section='sweep'):
    label = scenario.get(section, 'target')
    if label:
        try:
            return [system.index_of(label)]
        except KeyError as e:
            raise ConfigError(f"{section}.target", e.args[0]) from None
    return list(range(system.n_nuc))


def _nuclear_setting(text):
    if ',' in text:
        return [item.strip() for item in text.split(',')]
    return text


def _split_side(scenario, spec):
    """0 for tau-, 1 for tau+, None when the window does not pick a PolCPMG side."""
    window = scenario.get('sweep', 'window')
    if spec.family != 'polcpmg' or window not in ('auto', 'minus', 'plus', 'from_zero'):
        return None
    return 1 if window == 'plus' else 0


def resonance_centres(scenario, system, spec, indices):
    """Resonance tau per selected nucleus for the configured window."""
    j = scenario.harmonic
    side = _split_side(scenario, spec)
    if side is not None:
        return [split_resonances(system, spec, n, j)[side] for n in indices]
    return [resonance_tau(spec, system, n, j) for n in indices]


def _clip_to_zones(scenario, system, spec, indices, centres, tau_ini, tau_fin):
    """Keep a PolCPMG window between the midpoints to the neighbouring split resonances.

    An end point inside the next resonance's linewidth leaves the register in a
    mixture of M_z manifolds, which caps the reachable polarization.
    """
    side = _split_side(scenario, spec)
    if side is None:
        return tau_ini, tau_fin
    zones = [split_zone(system, spec, n, scenario.harmonic, side) for n in indices]
    low, high = max(z[0] for z in zones), min(z[1] for z in zones)
    sweep = scenario.values['sweep']
    if sweep['tau_ini_us'] is None and sweep['window'] != 'from_zero' and tau_ini < low:
        logger.info("window start %.4e s moved to zone edge %.4e s", tau_ini, low)
        tau_ini = low
    if sweep['tau_fin_us'] is None and tau_fin > high:
        logger.info("window end %.4e s moved to zone edge %.4e s", tau_fin, high)
        tau_fin = high
    if not tau_ini < min(centres) <= max(centres) < tau_fin:
        logger.warning("split-resonance zones do not bracket every centre: [%.4e, %.4e] s vs centres %s",
                       tau_ini, tau_fin, ', '.join(f"{c:.4e}" for c in centres))
    return tau_ini, tau_fin


def resolve_schedule(scenario, system, spec):
    """Sweep schedule plus the resonance information it was built from."""
    sweep = scenario.values['sweep']
    j = scenario.harmonic
    indices = _target_indices(scenario, system)
    explicit = all(sweep[k] is not None for k in ('tau_ini_us', 'tau_fin_us', 'delta_tau_ns'))
    t2_budget = sweep['t2_budget_ms'] * 1e-3 if sweep['t2_budget_ms'] is not None else None
    if sweep['window'] == 'explicit' or explicit:
        schedule = SweepSchedule(sweep['tau_ini_us'] * 1e-6, sweep['tau_fin_us'] * 1e-6,
                                 sweep['delta_tau_ns'] * 1e-9, sweep['n_p'], sweep['repetitions'],
                                 sweep['reinit'], t2_budget)
        return schedule, {'centres': [], 'indices': indices}

    constants = protocol_constants(spec)
    centres = resonance_centres(scenario, system, spec, indices)
    widths, steps = [], []
    for n, centre in zip(indices, centres):
        a_x = system.nuclei[n].a_x
        T_r = constants['T_r_factor'] * centre
        widths.append(linewidth(a_x, centre, T_r, constants['beta'], j))
        steps.append(step_for_gamma(a_x, centre, T_r, constants['beta'], sweep['target_gamma0'], sweep['n_p']))
    half = sweep['n_linewidths'] * max(widths)
    delta_tau = sweep['delta_tau_ns'] * 1e-9 if sweep['delta_tau_ns'] is not None else min(steps)
    if sweep['tau_ini_us'] is not None:
        tau_ini = sweep['tau_ini_us'] * 1e-6
    elif sweep['window'] == 'from_zero':
        tau_ini = FROM_ZERO_TAU
    else:
        tau_ini = min(centres) - half
    tau_fin = sweep['tau_fin_us'] * 1e-6 if sweep['tau_fin_us'] is not None else max(centres) + half
    tau_ini, tau_fin = _clip_to_zones(scenario, system, spec, indices, centres, tau_ini, tau_fin)
    n_steps = max(int(np.ceil((tau_fin - tau_ini) / delta_tau)), 1)
    schedule = SweepSchedule(tau_ini, tau_ini + n_steps * delta_tau, delta_tau, sweep['n_p'],
                             sweep['repetitions'], sweep['reinit'], t2_budget)
    return schedule, {'centres': centres, 'indices': indices, 'linewidth': max(widths)}


def _spectrum_grid(scenario, system, spec):
    values = scenario.values['spectrum']
    if values['tau_min_us'] is not None and values['tau_max_us'] is not None:
        return np.linspace(values['tau_min_us'] * 1e-6, values['tau_max_us'] * 1e-6, values['n_points'])
    centres = [resonance_tau(spec, system, n, scenario.harmonic) for n in range(system.n_nuc)]
    low = values['tau_min_us'] * 1e-6 if values['tau_min_us'] is not None else (1 - SPECTRUM_MARGIN) * min(centres)
    high = values['tau_max_us'] * 1e-6 if values['tau_max_us'] is not None else (1 + SPECTRUM_MARGIN) * max(centres)
    return np.linspace(low, high, values['n_points'])


def run_spectrum(scenario, system, spec, out_dir):
    values = scenario.values['spectrum']
    spectrum = scan_spectrum(system, spec, _spectrum_grid(scenario, system, spec),
                             overlap_floor=values['overlap_floor'], n_jobs=scenario.threads)
    crossings = locate_anticrossings(spectrum, threshold_factor=values['gap_threshold_factor'],
                                     j=scenario.harmonic)
    table = write_csv(spectrum_table(spectrum, values['window']), out_dir / 'spectrum.csv', 'spectrum')
    rows = [{
        'tau_center_s': c['tau_center'],
        'gap_rad': c['gap'],
        'branches': ';'.join(f"{a}-{b}" for a, b in c['branches']),
        'labels': ';'.join(f"{la}/{lb}" for la, lb in c['labels']),
    } for c in crossings]
    crossing_table = write_csv(rows, out_dir / 'anticrossings.csv', 'anticrossings')
    gaps = extremal_gap(spectrum, system.n_nuc)
    summary = {
        'n_branches': len(spectrum.labels),
        'n_anticrossings': len(crossings),
        'ambiguous_points': len(spectrum.ambiguities),
        'extremal_gap_plus': gaps[1],
        'extremal_gap_minus': gaps[-1],
    }
    return [table, crossing_table], [(table, 'spectrum')], summary


def _initial_state(scenario, system):
    sweep = scenario.values['sweep']
    return make_initial_state(system, sweep['electron'], _nuclear_setting(sweep['nuclear']))


def _trajectory_tables(trajectory, out_dir):
    table = write_csv(trajectory.to_frame(), out_dir / 'trajectory.csv', 'trajectory')
    reps = write_csv([{k: s[k] for k in ('rep', 'P', 'L', 'Mz', 'purity')} for s in trajectory.summaries],
                     out_dir / 'repetitions.csv', 'repetitions')
    return table, reps


def run_sweep_action(scenario, system, spec, out_dir):
    schedule, _ = resolve_schedule(scenario, system, spec)
    trajectory = run_sweep(_initial_state(scenario, system), system, spec, schedule, n_jobs=scenario.threads)
    table, reps = _trajectory_tables(trajectory, out_dir)
    final = trajectory.summaries[-1]
    summary = {
        'n_steps': schedule.n_steps,
        'delta_tau_s': schedule.delta_tau,
        't_total_s': trajectory.t_total,
        't2_margin_s': trajectory.t2_margin,
        'P_initial': trajectory.initial['P'],
        'P_final': final['P'],
        'L_final': final['L'],
    }
    return [table, reps], [(table, 'trajectory')], summary


def run_polarize(scenario, system, spec, out_dir):
    schedule, _ = resolve_schedule(scenario, system, spec)
    result = run_repeated_polarization(_initial_state(scenario, system), system, spec, schedule,
                                       n_jobs=scenario.threads)
    table, reps = _trajectory_tables(result['trajectory'], out_dir)
    summary = {
        'n_steps': schedule.n_steps,
        'repetitions': schedule.repetitions,
        'P_series': [float(p) for p in result['polarization']],
        'P_final': float(result['polarization'][-1]),
        'saturated_at': result['saturated_at'],
    }
    return [table, reps], [(table, 'trajectory')], summary


def run_storage_action(scenario, system, spec, out_dir):
    storage = scenario.values['storage']
    a, b = storage_amplitudes(scenario)
    target = _target_indices(scenario, system, 'storage')[0]
    pair = crossing_pair_map(system, spec, target, scenario.harmonic, storage['target_gamma0'],
                             scenario.get('sweep', 'n_linewidths'))
    sweep = scenario.values['sweep']
    schedule = None
    if sweep['window'] == 'explicit':
        schedule, _ = resolve_schedule(scenario, system, spec)
    result = run_storage(a, b, storage['nuclear_init'], system, schedule, spec, target, scenario.harmonic,
                         pair=pair)
    recovered = read_out(result, system, spec, schedule)
    half_widths = [v * 1e-9 for v in parse_float_list(storage['half_widths_ns'], 'storage.half_widths_ns')]
    offsets = [v * 1e-9 for v in parse_float_list(storage['center_offsets_ns'], 'storage.center_offsets_ns')]
    rows = storage_scan(a, b, storage['nuclear_init'], system, spec, target, scenario.harmonic,
                        half_widths, offsets or [0.0], n_jobs=scenario.threads, pair=pair)
    fidelity = write_csv(rows, out_dir / 'fidelity.csv', 'fidelity')
    table, _ = _trajectory_tables(result.trajectory, out_dir)
    summary = {
        'target': system.nuclei[target].label,
        'tau_center_s': pair['tau_center'],
        'tau_pair_s': list(pair['tau_pair']),
        'swap': pair['swap'],
        'unresolved': pair['unresolved'],
        'fidelity': result.fidelity,
        'strict_fidelity': result.strict_fidelity,
        'electron_branch': result.electron_branch,
        'larmor_phase_rad': result.larmor_phase,
        'wait_s': result.wait,
        'readout_fidelity': recovered['fidelity'],
    }
    return [fidelity, table], [(fidelity, 'fidelity'), (table, 'trajectory')], summary


def _lz_scaling(scenario, system, spec, target, out_dir):
    sweep = scenario.values['sweep']
    constants = protocol_constants(spec)
    j = scenario.harmonic
    rows = []
    for a_x_khz in parse_float_list(scenario.get('lz', 'scan_a_x_khz'), 'lz.scan_a_x_khz'):
        nucleus = replace(system.nuclei[target], a_x=a_x_khz * KHZ)
        single = system.with_nuclei([nucleus])
        tau_r = resonance_centres(scenario, single, spec, [0])[0]
        schedule = schedule_for_gamma(nucleus.a_x, tau_r, constants['T_r_factor'] * tau_r, constants['beta'],
                                      sweep['target_gamma0'], sweep['n_linewidths'], j, sweep['n_p'])
        trajectory = run_sweep(_initial_state(scenario, single), single, spec, schedule, n_jobs=scenario.threads)
        params = lz_params(single, spec, 0, schedule, j, tau_r, scenario.get('lz', 'period_reading'))
        p_final = trajectory.summaries[-1]['P']
        rows.append({
            'a_x_khz': a_x_khz,
            'delta_tau_s': schedule.delta_tau,
            'gamma0': gamma0(params),
            'n_steps': schedule.n_steps,
            't_total_s': total_time(schedule, spec.period_factor),
            'P_final': p_final,
            'P_lz_final': float(lz_polarization(schedule.taus[-1], params, -1 if p_final < 0 else 1)),
        })
    return write_csv(rows, out_dir / 'lz_scaling.csv', 'lz_scaling'), rows


def run_lzcompare(scenario, system, spec, out_dir):
    j = scenario.harmonic
    target = _target_indices(scenario, system)[0]
    if scenario.get('lz', 'scan_a_x_khz'):
        table, rows = _lz_scaling(scenario, system, spec, target, out_dir)
        summary = {'t_total_s': {r['a_x_khz']: r['t_total_s'] for r in rows}}
        return [table], [], summary

    single = system.subsystem([target])
    schedule, info = resolve_schedule(scenario, single, spec)
    trajectory = run_sweep(_initial_state(scenario, single), single, spec, schedule, n_jobs=scenario.threads)
    tau_r = (info['centres'] or resonance_centres(scenario, single, spec, [0]))[0]
    params = lz_params(single, spec, 0, schedule, j, tau_r, scenario.get('lz', 'period_reading'))
    comparison = fit_comparison(trajectory, params)
    table = write_csv(comparison['rows'], out_dir / 'lzcompare.csv', 'lzcompare')
    readings = compare_readings(trajectory, params)
    summary = {
        'gamma0': gamma0(params),
        'max_abs_dev': comparison['max_abs_dev'],
        'rms_dev': comparison['rms_dev'],
        'max_abs_dev_by_reading': {k: v['max_abs_dev'] for k, v in readings.items()},
        'P_final': trajectory.summaries[-1]['P'],
    }
    return [table], [(table, 'trajectory')], summary


ACTION_RUNNERS = {
    'spectrum': run_spectrum,
    'sweep': run_sweep_action,
    'polarize': run_polarize,
    'storage': run_storage_action,
    'lzcompare': run_lzcompare,
}


def run_scenario(scenario, plots=True):
    started = perf_counter()
    out_dir = Path(scenario.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = write_resolved(scenario, out_dir)
    logger.info("scenario %s: %s -> %s", scenario.name, scenario.action, out_dir)
    try:
        system = build_system(scenario)
        spec = build_protocol(scenario)
        artifacts, plot_jobs, summary = ACTION_RUNNERS[scenario.action](scenario, system, spec, out_dir)
    except AdPulseError as e:
        e.add_note(f"while running scenario '{scenario.name}' ({scenario.action})")
        raise
    computed = perf_counter() - started

    if plots:
        for csv_path, kind in plot_jobs:
            svg = try_plot(csv_path, kind)
            if svg is not None:
                artifacts.append(svg)
    timings = {'compute': computed, 'total': perf_counter() - started}
    manifest = write_manifest(out_dir, emit_scenario(scenario), [resolved] + artifacts, timings, summary)
    logger.info("scenario %s finished in %.2f s", scenario.name, timings['total'])
    return {
        'exit_code': EXIT_OK,
        'artifacts': [resolved] + artifacts + [manifest],
        'summary': summary,
    }
