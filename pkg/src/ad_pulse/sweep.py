"""The Ad-Pulse sweep: a linear tau grid, N_p periods per step, optional repetitions.

    tau_k = tau_ini + (k - 1) * delta_tau,   k = 1..N_s
    t_k   = sum_{l <= k} F * tau_l * N_p       (F = 2 for CPMG-family, 4 for PulsePol)
"""
from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import eigvalsh

from .errors import StateInvariantError, ValidationError
from .propagator import propagator_at

logger = logging.getLogger(__name__)

TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-9
NORM_TOL = 1e-10
SATURATION_TOL = 1e-3
SATURATION_WINDOW = 3
REINIT_TARGETS = ('none', 'to_ket0', 'to_Xplus', 'to_Xminus')

ELECTRON_KETS = {
    'ket0': np.array([1.0, 0.0], dtype=complex),
    'ket1': np.array([0.0, 1.0], dtype=complex),
    'Xplus': np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0),
    'Xminus': np.array([1.0, -1.0], dtype=complex) / np.sqrt(2.0),
}
NUCLEAR_KETS = {
    'up': np.array([1.0, 0.0], dtype=complex),
    'down': np.array([0.0, 1.0], dtype=complex),
}


@dataclass
class QuantumState:
    rho: np.ndarray
    n_nuc: int
    site_order: tuple = ()

    def __post_init__(self):
        if not self.site_order:
            self.site_order = ('electron',) + tuple(f"nucleus{n + 1}" for n in range(self.n_nuc))
        if self.rho.shape != (2 ** (1 + self.n_nuc),) * 2:
            raise ValidationError(f"rho has shape {self.rho.shape}, expected dimension 2^{1 + self.n_nuc}")

    @property
    def dim(self):
        return self.rho.shape[0]

    def invariant_problem(self):
        """Description of the first broken density-matrix invariant, or None."""
        rho = self.rho
        hermiticity = np.max(np.abs(rho - rho.conj().T))
        if hermiticity > TRACE_TOL:
            return f"not Hermitian (max |rho - rho^dag| = {hermiticity:.3e})"
        trace_error = abs(np.trace(rho) - 1.0)
        if trace_error > TRACE_TOL:
            return f"trace deviates from 1 by {trace_error:.3e}"
        lowest = eigvalsh(rho, subset_by_index=[0, 0])[0]
        if lowest < -POSITIVITY_TOL:
            return f"negative eigenvalue {lowest:.3e}"
        return None


def normalized_pair(a, b):
    ket = np.array([a, b], dtype=complex)
    if abs(np.vdot(ket, ket).real - 1.0) > NORM_TOL:
        raise ValidationError(f"amplitudes must satisfy |a|^2 + |b|^2 = 1, got {np.vdot(ket, ket).real:.12f}")
    return ket


def electron_ket(electron):
    if isinstance(electron, str):
        if electron not in ELECTRON_KETS:
            raise ValidationError(f"unknown electron state '{electron}'")
        return ELECTRON_KETS[electron]
    return normalized_pair(*electron)


def _nuclear_factor(spec):
    if isinstance(spec, str):
        if spec == 'mixed':
            return np.eye(2, dtype=complex) / 2.0
        if spec not in NUCLEAR_KETS:
            raise ValidationError(f"unknown nuclear state '{spec}'")
        ket = NUCLEAR_KETS[spec]
    else:
        ket = normalized_pair(*spec)
    return np.outer(ket, ket.conj())


def nuclear_density(n_nuc, nuclear):
    if isinstance(nuclear, str):
        per_spin = {'all_down': 'down', 'all_up': 'up', 'maximally_mixed': 'mixed'}
        if nuclear not in per_spin:
            raise ValidationError(f"unknown nuclear state '{nuclear}'")
        factors = [per_spin[nuclear]] * n_nuc
    else:
        factors = list(nuclear)
        if len(factors) != n_nuc:
            raise ValidationError(f"expected {n_nuc} nuclear factors, got {len(factors)}")
    rho = np.ones((1, 1), dtype=complex)
    for spec in factors:
        rho = np.kron(rho, _nuclear_factor(spec))
    return rho


def make_initial_state(system, electron='Xplus', nuclear='all_down'):
    ket = electron_ket(electron)
    rho = np.kron(np.outer(ket, ket.conj()), nuclear_density(system.n_nuc, nuclear))
    return QuantumState(rho, system.n_nuc)


def electron_reduced(state):
    d = state.dim // 2
    return np.einsum('ajbj->ab', state.rho.reshape(2, d, 2, d))


def nuclear_reduced(state):
    d = state.dim // 2
    return np.einsum('ajak->jk', state.rho.reshape(2, d, 2, d))


def reinit_electron(state, target):
    """Partial trace over the electron, then a fresh pure electron state."""
    ket = electron_ket(target.removeprefix('to_'))
    rho = np.kron(np.outer(ket, ket.conj()), nuclear_reduced(state))
    return QuantumState(rho, state.n_nuc, state.site_order)


def _site_iz(n_sites):
    """I_z eigenvalues (+-1/2) of every site for every basis index, shape (n_sites, 2^n_sites)."""
    idx = np.arange(2 ** n_sites)
    bits = (idx[None, :] >> (n_sites - 1 - np.arange(n_sites))[:, None]) & 1
    return 0.5 - bits


def observables(state, system=None):
    n_nuc = state.n_nuc
    populations = np.real(np.diag(state.rho))
    iz = _site_iz(1 + n_nuc)[1:] @ populations
    rho_e = electron_reduced(state)
    mz = float(iz.sum())
    return {
        'L': float(2.0 * np.real(rho_e[0, 1])),
        'P': float(2.0 * mz / n_nuc),
        'Mz': mz,
        'Iz': [float(v) for v in iz],
        'purity': float(np.sum(np.abs(state.rho) ** 2)),
    }


@dataclass(frozen=True)
class SweepSchedule:
    tau_ini: float
    tau_fin: float
    delta_tau: float
    n_p: int = 1
    repetitions: int = 1
    reinit: str = 'none'
    t2_budget: float | None = None

    def __post_init__(self):
        if self.tau_ini <= 0 or self.tau_fin <= 0:
            raise ValidationError(f"sweep endpoints must be positive, got {self.tau_ini}, {self.tau_fin}")
        if self.delta_tau == 0:
            raise ValidationError("delta_tau must be nonzero")
        span = self.tau_fin - self.tau_ini
        if span != 0 and np.sign(span) != np.sign(self.delta_tau):
            raise ValidationError(
                f"sweep direction mismatch: tau_fin - tau_ini = {span:.3e} s, delta_tau = {self.delta_tau:.3e} s"
            )
        if self.n_p < 1:
            raise ValidationError(f"n_p must be >= 1, got {self.n_p}")
        if self.repetitions < 1:
            raise ValidationError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.reinit not in REINIT_TARGETS:
            raise ValidationError(f"unknown reinit '{self.reinit}' (expected one of {', '.join(REINIT_TARGETS)})")

    @property
    def n_steps(self):
        return int(round((self.tau_fin - self.tau_ini) / self.delta_tau)) + 1

    @property
    def taus(self):
        return self.tau_ini + self.delta_tau * np.arange(self.n_steps)


def cumulative_times(schedule, period_factor):
    return np.cumsum(period_factor * schedule.n_p * schedule.taus)


def closed_form_times(schedule, period_factor):
    k = np.arange(1, schedule.n_steps + 1)
    return period_factor * schedule.n_p * (k * schedule.tau_ini + schedule.delta_tau * k * (k - 1) / 2.0)


def total_time(schedule, period_factor):
    return float(cumulative_times(schedule, period_factor)[-1]) * schedule.repetitions


def reversed_schedule(schedule):
    last = float(schedule.taus[-1])
    return SweepSchedule(last, schedule.tau_ini, -schedule.delta_tau, schedule.n_p, 1, 'none',
                         schedule.t2_budget)


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    final_state: QuantumState | None = None
    t_total: float = 0.0
    t2_margin: float | None = None
    labels: tuple = ()

    def column(self, name):
        return np.array([r[name] for r in self.records])

    def to_frame(self):
        rows = []
        for r in self.records:
            row = {key: r[key] for key in ('step', 'rep', 'tau_s', 't_cum_s', 'L', 'P', 'Mz')}
            for label, value in zip(self.labels, r['Iz']):
                row[f"Iz_{label}"] = value
            row['purity'] = r['purity']
            rows.append(row)
        return pd.DataFrame(rows)


def _step_unitary(system, spec, tau, n_p):
    return np.linalg.matrix_power(propagator_at(system, spec, tau).matrix, n_p)


def step_unitaries(system, spec, schedule, n_jobs=1):
    """U(tau_k)^N_p for every step; independent, so they may be built in parallel."""
    if n_jobs == 1:
        return [_step_unitary(system, spec, tau, schedule.n_p) for tau in schedule.taus]
    return Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_step_unitary)(system, spec, tau, schedule.n_p) for tau in schedule.taus
    )


def run_sweep(state, system, spec, schedule, n_jobs=1, check_every=1):
    if state.n_nuc != system.n_nuc:
        raise ValidationError(f"state has {state.n_nuc} nuclei, system has {system.n_nuc}")
    problem = state.invariant_problem()
    if problem:
        raise StateInvariantError(0, 0, problem)
    taus = schedule.taus
    if np.any(taus <= 0):
        raise ValidationError("sweep grid reaches tau <= 0")

    times = cumulative_times(schedule, spec.period_factor)
    sweep_time = float(times[-1])
    trajectory = Trajectory(initial=observables(state), labels=tuple(n.label for n in system.nuclei))
    trajectory.t_total = sweep_time * schedule.repetitions
    if schedule.t2_budget is not None:
        trajectory.t2_margin = schedule.t2_budget - trajectory.t_total
        if trajectory.t2_margin < 0:
            logger.warning("total sweep time %.3e s exceeds the T2 budget %.3e s",
                           trajectory.t_total, schedule.t2_budget)

    unitaries = step_unitaries(system, spec, schedule, n_jobs)
    rho = state.rho
    for rep in range(schedule.repetitions):
        if rep > 0 and schedule.reinit != 'none':
            rho = reinit_electron(QuantumState(rho, state.n_nuc), schedule.reinit).rho
        for k, (tau, u) in enumerate(zip(taus, unitaries), start=1):
            rho = u @ rho @ u.conj().T
            current = QuantumState(rho, state.n_nuc, state.site_order)
            if k % check_every == 0 or k == len(taus):
                problem = current.invariant_problem()
                if problem:
                    raise StateInvariantError(k, rep + 1, problem)
            record = observables(current)
            record.update(step=k, rep=rep + 1, tau_s=float(tau), t_cum_s=rep * sweep_time + float(times[k - 1]))
            trajectory.records.append(record)
            logger.debug("rep %d step %d tau=%.6e P=%.6f", rep + 1, k, tau, record['P'])
        summary = observables(QuantumState(rho, state.n_nuc))
        summary['rep'] = rep + 1
        trajectory.summaries.append(summary)
        logger.info("repetition %d/%d: P=%.6f L=%.6f", rep + 1, schedule.repetitions,
                    summary['P'], summary['L'])
    trajectory.final_state = QuantumState(rho, state.n_nuc, state.site_order)
    return trajectory


def saturation_index(series, tol=SATURATION_TOL, window=SATURATION_WINDOW):
    """First repetition (1-based) from which `window` consecutive changes stay below tol."""
    steps = np.abs(np.diff(series))
    for r in range(window, len(steps) + 1):
        if np.all(steps[r - window:r] < tol):
            return r - window + 1
    return None


def run_repeated_polarization(state, system, spec, schedule, n_jobs=1, tol=SATURATION_TOL):
    if schedule.repetitions < 2:
        raise ValidationError("repeated polarization needs repetitions >= 2")
    if schedule.reinit == 'none':
        raise ValidationError("repeated polarization needs an electron reinitialization between sweeps")
    trajectory = run_sweep(state, system, spec, schedule, n_jobs=n_jobs)
    series = np.array([s['P'] for s in trajectory.summaries])
    return {
        'polarization': series,
        'saturated_at': saturation_index(series, tol),
        'trajectory': trajectory,
    }
