"""State storage: sweeping PulsePol through a nuclear resonance maps the
electron amplitudes (a, b) onto one nucleus.

Which exchange the resonance drives depends on the harmonic, so the crossing
is classified by propagating the four electron/nuclear basis states through
the sweep:

    flip-flip  |1 down> <-> |0 up>     stored (down: a, up: b); electron in |0> for a down start
    flip-flop  |0 down> <-> |1 up>     stored (down: b, up: a); electron in |0> for an up start

The other start leaves the electron in |1>, which is reset to |0>.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from joblib import Parallel, delayed

from .errors import ScheduleError, ValidationError
from .floquet import fold_phase, locate_anticrossings, mean_larmor, scan_spectrum
from .lz_model import DEFAULT_LINEWIDTHS, linewidth, step_for_gamma
from .propagator import free_unitary_blocks
from .protocols import ProtocolSpec, check_harmonic, protocol_constants
from .spin_model import larmor_frequencies
from .sweep import (
    QuantumState, SweepSchedule, electron_reduced, make_initial_state, normalized_pair,
    reinit_electron, reversed_schedule, run_sweep,
)

logger = logging.getLogger(__name__)

DEFAULT_TARGET_GAMMA0 = 40.0
BASIS_LABELS = ('0u', '0d', '1u', '1d')
SWAPS = {
    'flip-flip': ('1d', '0u'),
    'flip-flop': ('0d', '1u'),
}


@dataclass
class StorageResult:
    final_state: QuantumState
    fidelity: float
    electron_branch: str
    larmor_phase: float
    strict_fidelity: float = 0.0
    wait: float = 0.0
    stored_state: QuantumState | None = None
    nuclear_state: np.ndarray | None = None
    target_amplitudes: np.ndarray | None = None
    pair: dict = field(default_factory=dict)
    trajectory: object = None


def _resolve_target(system, target):
    if isinstance(target, str):
        return system.index_of(target)
    if not 0 <= target < system.n_nuc:
        raise ValidationError(f"target nucleus index {target} out of range")
    return target


def _require_pulsepol(spec):
    if spec.family != 'pulsepol':
        raise ValidationError(f"storage runs on PulsePol, got {spec.family}")


def _basis_ket(label):
    ket = np.zeros(4, dtype=complex)
    ket[BASIS_LABELS.index(label)] = 1.0
    return ket


def classify_swap(transfer):
    for name, (left, right) in SWAPS.items():
        if transfer[left][0] == right and transfer[right][0] == left:
            return name
    return None


def crossing_pair_map(system, spec, nucleus, j=3, target_gamma0=DEFAULT_TARGET_GAMMA0,
                      n_linewidths=DEFAULT_LINEWIDTHS, n_points=800):
    """Locate the target spin's storage resonance and classify its exchange.

    The returned tau_pair is the sweep bracket around the located centre.
    """
    _require_pulsepol(spec)
    check_harmonic(j)
    nucleus = _resolve_target(system, nucleus)
    isolated = system.subsystem([nucleus])
    guess = j * np.pi / (2.0 * mean_larmor(isolated, 0))
    grid = np.linspace(0.9 * guess, 1.1 * guess, n_points)
    crossings = locate_anticrossings(scan_spectrum(isolated, spec, grid), j=j)
    if not crossings:
        raise ScheduleError(f"no storage resonance found near tau={guess:.6e} s")
    centre = min(crossings, key=lambda c: abs(c['tau_center'] - guess))['tau_center']

    constants = protocol_constants(spec)
    a_x = isolated.nuclei[0].a_x
    T_r = constants['T_r_factor'] * centre
    width = linewidth(a_x, centre, T_r, constants['beta'], j)
    half = n_linewidths * width
    delta_tau = step_for_gamma(a_x, centre, T_r, constants['beta'], target_gamma0)
    n_steps = max(int(np.ceil(2.0 * half / delta_tau)), 1)
    schedule = SweepSchedule(centre - half, centre - half + n_steps * delta_tau, delta_tau)

    transfer = {}
    for label in BASIS_LABELS:
        ket = _basis_ket(label)
        state = QuantumState(np.outer(ket, ket.conj()), 1)
        final = run_sweep(state, isolated, spec, schedule).final_state
        populations = np.real(np.diag(final.rho))
        best = int(np.argmax(populations))
        transfer[label] = (BASIS_LABELS[best], float(populations[best]))
    swap = classify_swap(transfer)
    if swap is None:
        logger.warning("storage resonance at tau=%.6e s is not a clean exchange: %s", centre, transfer)

    unresolved = []
    for n, other in enumerate(system.nuclei):
        if n == nucleus:
            continue
        other_system = system.subsystem([n])
        other_centre = j * np.pi / (2.0 * mean_larmor(other_system, 0))
        other_width = linewidth(other.a_x, other_centre, constants['T_r_factor'] * other_centre,
                                constants['beta'], j) if other.a_x > 0 else 0.0
        if abs(other_centre - centre) < half + n_linewidths * other_width:
            unresolved.append(other.label)
    if unresolved:
        logger.warning("crossings of %s overlap the storage window of %s",
                       ', '.join(unresolved), system.nuclei[nucleus].label)
    return {
        'tau_center': centre,
        'tau_pair': (float(schedule.tau_ini), float(schedule.taus[-1])),
        'linewidth': width,
        'schedule': schedule,
        'transfer': transfer,
        'swap': swap,
        'unresolved': unresolved,
    }


def stored_amplitudes(a, b, swap):
    """Target nuclear ket in (up, down) order."""
    if swap == 'flip-flop':
        return np.array([a, b], dtype=complex)
    return np.array([b, a], dtype=complex)


def electron_branch(swap, nuclear_init):
    ends_in_ket0 = (swap == 'flip-flop') == (nuclear_init == 'up')
    return 'ket0' if ends_in_ket0 else 'ket1_reinit_needed'


def reduced_density(state, sites):
    """Density matrix of the given sites (0 = electron, 1 + n = nucleus n), others traced out."""
    n_sites = 1 + state.n_nuc
    keep = list(sites)
    rest = [s for s in range(n_sites) if s not in keep]
    order = keep + rest + [n_sites + s for s in keep] + [n_sites + s for s in rest]
    tensor = np.transpose(state.rho.reshape((2,) * (2 * n_sites)), order)
    k, r = 2 ** len(keep), 2 ** len(rest)
    return np.einsum('ajbj->ab', tensor.reshape(k, r, k, r))


def target_reduced(state, nucleus):
    """2x2 density matrix of one nucleus."""
    return reduced_density(state, [1 + nucleus])


def joint_reduced(state, nucleus):
    """4x4 density matrix of the electron and one nucleus, electron first."""
    return reduced_density(state, [0, 1 + nucleus])


def stored_fidelity(state, nucleus, target_ket, fidelity=None):
    """Fidelity with electron |0> (x) target_ket; an electron left outside |0> counts as error."""
    fidelity = fidelity or modulus_fidelity
    return fidelity(np.kron(np.array([1.0, 0.0]), target_ket), joint_reduced(state, nucleus))


def modulus_fidelity(target, rho):
    """Fidelity with phases between basis states disregarded."""
    moduli = np.abs(target)
    return float(np.sqrt(np.clip(moduli @ np.abs(rho) @ moduli, 0.0, 1.0)))


def strict_fidelity(target, rho):
    return float(np.sqrt(np.clip(np.real(target.conj() @ rho @ target), 0.0, 1.0)))


def larmor_z_correction(state, system, wait):
    if wait < 0:
        raise ValidationError(f"wait must be >= 0, got {wait}")
    if wait == 0:
        return state
    u = free_unitary_blocks(system, wait)
    return QuantumState(u @ state.rho @ u.conj().T, state.n_nuc, state.site_order)


def larmor_wait_for_phase(system, nucleus, relative_phase, electron=0):
    """Wait that adds `relative_phase` to rho[up, down] of a nucleus, electron in the given branch."""
    omega = larmor_frequencies(system)[electron, nucleus]
    return float(np.mod(-relative_phase, 2.0 * np.pi) / omega)


def run_storage(a, b, nuclear_init, system, schedule=None, spec=None, target=0, j=3,
                target_gamma0=DEFAULT_TARGET_GAMMA0, n_linewidths=DEFAULT_LINEWIDTHS, pair=None,
                correct_phase=True):
    spec = spec or ProtocolSpec('pulsepol')
    _require_pulsepol(spec)
    amplitudes = normalized_pair(a, b)
    if nuclear_init not in ('down', 'up'):
        raise ValidationError(f"nuclear_init must be 'down' or 'up', got '{nuclear_init}'")
    nucleus = _resolve_target(system, target)
    if pair is None:
        pair = crossing_pair_map(system, spec, nucleus, j, target_gamma0, n_linewidths)
    schedule = schedule or pair['schedule']
    low, high = sorted((schedule.taus[0], schedule.taus[-1]))
    if not (low <= pair['tau_center'] - pair['linewidth'] and high >= pair['tau_center'] + pair['linewidth']):
        raise ScheduleError(
            f"sweep {low:.6e}..{high:.6e} s does not bracket the crossing at "
            f"{pair['tau_center']:.6e} s (+-{pair['linewidth']:.3e} s)"
        )
    swap = pair['swap']
    if swap is None:
        raise ScheduleError(
            f"crossing at {pair['tau_center']:.6e} s is not a clean exchange: {pair.get('transfer')}"
        )

    nuclear = ['down'] * system.n_nuc
    nuclear[nucleus] = nuclear_init
    state = make_initial_state(system, tuple(amplitudes), nuclear)
    trajectory = run_sweep(state, system, spec, schedule)
    stored = trajectory.final_state
    branch = electron_branch(swap, nuclear_init)
    if branch == 'ket1_reinit_needed':
        stored = reinit_electron(stored, 'to_ket0')

    target_ket = stored_amplitudes(amplitudes[0], amplitudes[1], swap)
    rho_n = target_reduced(stored, nucleus)
    phase_error = float(fold_phase(np.angle(rho_n[0, 1]) - np.angle(target_ket[0] * np.conj(target_ket[1]))))
    wait = larmor_wait_for_phase(system, nucleus, -phase_error) if correct_phase else 0.0
    corrected = larmor_z_correction(stored, system, wait)
    result = StorageResult(
        final_state=corrected,
        fidelity=stored_fidelity(stored, nucleus, target_ket),
        electron_branch=branch,
        larmor_phase=phase_error,
        strict_fidelity=stored_fidelity(corrected, nucleus, target_ket, strict_fidelity),
        wait=wait,
        stored_state=stored,
        nuclear_state=rho_n,
        target_amplitudes=target_ket,
        pair=pair,
        trajectory=trajectory,
    )
    logger.info("stored (%.4f, %.4f) on %s: fidelity=%.4f strict=%.4f branch=%s",
                abs(amplitudes[0]), abs(amplitudes[1]), system.nuclei[nucleus].label,
                result.fidelity, result.strict_fidelity, branch)
    return result


def read_out(result, system, spec=None, schedule=None):
    """Mirrored sweep on the stored state; returns recovered electron amplitudes and fidelity."""
    spec = spec or ProtocolSpec('pulsepol')
    swap = result.pair.get('swap')
    if swap is None:
        raise ScheduleError("stored result carries no classified exchange to mirror")
    schedule = reversed_schedule(schedule or result.pair['schedule'])
    trajectory = run_sweep(result.stored_state, system, spec, schedule)
    rho_e = electron_reduced(trajectory.final_state)
    amplitudes = result.target_amplitudes if swap == 'flip-flop' else result.target_amplitudes[::-1]
    return {
        'rho_electron': rho_e,
        'amplitudes': np.sqrt(np.clip(np.real(np.diag(rho_e)), 0.0, 1.0)),
        'fidelity': modulus_fidelity(amplitudes, rho_e),
        'trajectory': trajectory,
    }


def _window_row(a, b, nuclear_init, system, spec, nucleus, j, pair, half_width, offset):
    centre = pair['tau_center'] + offset
    delta_tau = pair['schedule'].delta_tau
    n_steps = max(int(np.ceil(2.0 * half_width / delta_tau)), 1)
    row = {
        'half_width_ns': half_width * 1e9,
        'center_offset_ns': offset * 1e9,
        'tau_ini_s': centre - half_width,
        'tau_fin_s': centre - half_width + n_steps * delta_tau,
    }
    try:
        schedule = SweepSchedule(row['tau_ini_s'], row['tau_fin_s'], delta_tau)
        result = run_storage(a, b, nuclear_init, system, schedule, spec, nucleus, j, pair=pair)
    except ScheduleError:
        row.update(fidelity=np.nan, strict_fidelity=np.nan, electron_branch='', status='unbracketed')
        return row
    row.update(fidelity=result.fidelity, strict_fidelity=result.strict_fidelity,
               electron_branch=result.electron_branch, status='ok')
    return row


def storage_scan(a, b, nuclear_init, system, spec=None, target=0, j=3, half_widths=(), center_offsets=(0.0,),
                 n_jobs=1, pair=None):
    """Fidelity over a grid of sweep windows (half width x centre offset, seconds)."""
    spec = spec or ProtocolSpec('pulsepol')
    nucleus = _resolve_target(system, target)
    pair = pair or crossing_pair_map(system, spec, nucleus, j)
    if pair['swap'] is None:
        raise ScheduleError(f"crossing at {pair['tau_center']:.6e} s is not a clean exchange")
    if not len(half_widths):
        half_widths = [pair['linewidth'] * k for k in (2, 5, 10, 15)]
    jobs = [(hw, off) for hw in half_widths for off in center_offsets]
    return Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_window_row)(a, b, nuclear_init, system, spec, nucleus, j, pair, hw, off) for hw, off in jobs
    )
