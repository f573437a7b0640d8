"""Closed-form Landau-Zener description of a swept resonance.

    Gamma_0   = 2 A_x^2 tau_r^2 T_r / (beta^2 delta_tau_eff),  delta_tau_eff = delta_tau / N_p
    Phi_tau   = 4 pi (tau - tau_r) / tau * sqrt(T / delta_tau_eff)
    F         = (arctan Phi_tau - arctan Phi_tau_ini) / pi
    Gamma_LZ  = Gamma_0 * F
    P         = sign * (1 - exp(-Gamma_LZ))        (P in [-1, 1])
"""
from dataclasses import dataclass
import logging

import numpy as np

from .errors import ValidationError
from .protocols import check_harmonic, protocol_constants, resonance_tau
from .sweep import SweepSchedule

logger = logging.getLogger(__name__)

PERIOD_READINGS = ('resonance', 'instantaneous')
ADDITIVE_REGIME_GAMMA0 = 1.0
DEFAULT_LINEWIDTHS = 20.0


@dataclass(frozen=True)
class LZParams:
    a_x: float
    tau_r: float
    T_r: float
    beta: float
    delta_tau: float
    tau_ini: float
    n_p: int = 1
    period_reading: str = 'resonance'

    def __post_init__(self):
        if self.a_x < 0:
            raise ValidationError(f"LZ parameter a_x must be >= 0, got {self.a_x}")
        for name in ('tau_r', 'T_r', 'beta', 'delta_tau', 'tau_ini'):
            if not getattr(self, name) > 0:
                raise ValidationError(f"LZ parameter {name} must be positive, got {getattr(self, name)}")
        if self.n_p < 1:
            raise ValidationError(f"n_p must be >= 1, got {self.n_p}")
        if self.period_reading not in PERIOD_READINGS:
            raise ValidationError(f"unknown period reading '{self.period_reading}'")

    @property
    def effective_step(self):
        return self.delta_tau / self.n_p

    @property
    def direction(self):
        return 1.0 if self.tau_ini <= self.tau_r else -1.0

    def period_at(self, tau):
        if self.period_reading == 'instantaneous':
            return self.T_r / self.tau_r * tau
        return self.T_r


def lz_params(system, spec, nucleus, schedule, j=1, tau_r=None, period_reading='resonance'):
    """LZParams for one nucleus of a system swept by the given schedule."""
    constants = protocol_constants(spec)
    if tau_r is None:
        tau_r = resonance_tau(spec, system, nucleus, j)
    return LZParams(
        a_x=system.nuclei[nucleus].a_x,
        tau_r=tau_r,
        T_r=constants['T_r_factor'] * tau_r,
        beta=constants['beta'],
        delta_tau=abs(schedule.delta_tau),
        tau_ini=schedule.tau_ini,
        n_p=schedule.n_p,
        period_reading=period_reading,
    )


def phi(tau, params):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValidationError("tau must be positive")
    root = np.sqrt(params.period_at(tau) / params.effective_step)
    return 4.0 * np.pi * (tau - params.tau_r) / tau * root


def gamma0(params):
    return 2.0 * params.a_x ** 2 * params.tau_r ** 2 * params.T_r / (params.beta ** 2 * params.effective_step)


def sweep_fraction(tau, params):
    f = (np.arctan(phi(tau, params)) - np.arctan(phi(params.tau_ini, params))) / np.pi
    return params.direction * f


def gamma_lz(tau, params):
    return gamma0(params) * sweep_fraction(tau, params)


def lz_polarization(tau, params, sign=1):
    if sign not in (1, -1):
        raise ValidationError(f"sign must be +1 or -1, got {sign}")
    return sign * (1.0 - np.exp(-gamma_lz(tau, params)))


def additive_multi_spin(params_list, tau, signs=None):
    """Sum of single-spin LZ predictions as a register polarization in [-1, 1].

    Only meaningful while every Gamma_0 stays small; outside that regime the
    result is still returned, flagged and logged.
    """
    if signs is None:
        signs = [1] * len(params_list)
    per_spin = [lz_polarization(tau, p, s) for p, s in zip(params_list, signs)]
    total = np.clip(np.sum(per_spin, axis=0) / max(len(params_list), 1), -1.0, 1.0)
    gammas = [gamma0(p) for p in params_list]
    in_regime = all(g <= ADDITIVE_REGIME_GAMMA0 for g in gammas)
    if not in_regime:
        logger.warning("additive LZ estimate used outside its regime (max Gamma_0 = %.3g)", max(gammas))
    return {'P': total, 'per_spin': per_spin, 'in_regime': in_regime}


def fit_comparison(trajectory, params, sign=None, rep=1):
    """Pointwise P_sim vs P_lz over one repetition of a single-spin trajectory."""
    records = [r for r in trajectory.records if r['rep'] == rep]
    taus = np.array([r['tau_s'] for r in records])
    p_sim = np.array([r['P'] for r in records])
    if sign is None:
        sign = -1 if p_sim.size and p_sim[-1] < 0 else 1
    p_lz = lz_polarization(taus, params, sign)
    deviation = p_sim - p_lz
    return {
        'max_abs_dev': float(np.max(np.abs(deviation))) if deviation.size else 0.0,
        'rms_dev': float(np.sqrt(np.mean(deviation ** 2))) if deviation.size else 0.0,
        'rows': [
            {'tau_s': float(t), 'P_sim': float(s), 'P_lz': float(l), 'deviation': float(d)}
            for t, s, l, d in zip(taus, p_sim, p_lz, deviation)
        ],
    }


def compare_readings(trajectory, params, sign=None):
    results = {}
    for reading in PERIOD_READINGS:
        variant = LZParams(params.a_x, params.tau_r, params.T_r, params.beta, params.delta_tau,
                           params.tau_ini, params.n_p, reading)
        results[reading] = fit_comparison(trajectory, variant, sign)
    return results


def linewidth(a_x, tau_r, T_r, beta, j=1):
    """Width in tau of an anticrossing: the detuning at which it equals the gap."""
    check_harmonic(j)
    return a_x * tau_r * T_r / (2.0 * np.pi * beta * j)


def step_for_gamma(a_x, tau_r, T_r, beta, target_gamma0, n_p=1):
    if not target_gamma0 > 0:
        raise ValidationError(f"target Gamma_0 must be positive, got {target_gamma0}")
    return 2.0 * a_x ** 2 * tau_r ** 2 * T_r * n_p / (beta ** 2 * target_gamma0)


def schedule_for_gamma(a_x, tau_r, T_r, beta, target_gamma0, n_linewidths=DEFAULT_LINEWIDTHS, j=1,
                       n_p=1, repetitions=1, reinit='none', t2_budget=None):
    """Forward sweep centred on tau_r, +-n_linewidths wide, stepping for the target Gamma_0."""
    half_width = n_linewidths * linewidth(a_x, tau_r, T_r, beta, j)
    delta_tau = step_for_gamma(a_x, tau_r, T_r, beta, target_gamma0, n_p)
    n_steps = max(int(np.ceil(2.0 * half_width / delta_tau)), 1)
    tau_ini = tau_r - half_width
    if tau_ini <= 0:
        raise ValidationError(f"window of {n_linewidths} linewidths reaches tau <= 0")
    return SweepSchedule(tau_ini, tau_ini + n_steps * delta_tau, delta_tau, n_p, repetitions, reinit,
                         t2_budget)
