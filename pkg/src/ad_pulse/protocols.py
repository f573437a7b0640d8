"""CPMG, PolCPMG and PulsePol as one-period pulse sequences.

CPMG/PolCPMG period (T = 2 tau), symmetric cell:
    free tau/2 | theta_x | free tau | theta_x | free tau/2,   theta = pi + delta_theta

PulsePol period (T = 4 tau) is B1 B2 B1 B2 with
    B1 = (pi/2)_y | free tau/2 | pi_x | free tau/2 | (pi/2)_y
    B2 = (pi/2)_x | free tau/2 | pi_y | free tau/2 | (pi/2)_x
"""
from dataclasses import dataclass
import numpy as np

from .errors import ValidationError

FAMILIES = ('cpmg', 'polcpmg', 'pulsepol')
CELLS = ('symmetric', 'asymmetric')
PULSEPOL_BETA = 6.0 * np.pi / (2.0 + np.sqrt(2.0))


@dataclass(frozen=True)
class PulseSegment:
    kind: str
    duration: float
    axis: str | None = None
    angle: float | None = None

    def __post_init__(self):
        if self.duration < 0:
            raise ValidationError(f"segment duration must be >= 0, got {self.duration}")
        if self.kind == 'free' and (self.axis is not None or self.angle is not None):
            raise ValidationError("free segments carry no axis or angle")
        if self.kind == 'pulse' and self.axis not in ('x', 'y'):
            raise ValidationError(f"pulse axis must be 'x' or 'y', got {self.axis}")
        if self.kind not in ('free', 'pulse'):
            raise ValidationError(f"unknown segment kind '{self.kind}'")

    @property
    def is_pulse(self):
        return self.kind == 'pulse'


@dataclass(frozen=True)
class ProtocolSpec:
    family: str
    delta_theta: float = 0.0
    t_pi: float = 0.0
    cell: str = 'symmetric'

    def __post_init__(self):
        object.__setattr__(self, 'family', self.family.lower())
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown protocol '{self.family}' (expected one of {', '.join(FAMILIES)})")
        if abs(self.delta_theta) >= np.pi / 2:
            raise ValidationError(f"|delta_theta| must be < pi/2, got {self.delta_theta}")
        if self.family == 'cpmg' and self.delta_theta != 0:
            raise ValidationError("CPMG requires delta_theta = 0 (use polcpmg for over-rotation)")
        if self.t_pi < 0:
            raise ValidationError(f"t_pi must be >= 0, got {self.t_pi}")
        if self.cell not in CELLS:
            raise ValidationError(f"unknown CPMG cell '{self.cell}'")

    @property
    def ideal(self):
        return self.t_pi == 0

    @property
    def period_factor(self):
        return 4 if self.family == 'pulsepol' else 2


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple
    period: float
    tau: float

    def __post_init__(self):
        total = sum(s.duration for s in self.segments)
        if not np.isclose(total, self.period, rtol=1e-12, atol=1e-18):
            raise ValidationError(f"segment durations sum to {total}, period is {self.period}")

    @property
    def pulses(self):
        return [s for s in self.segments if s.is_pulse]


def _free(duration):
    return PulseSegment('free', duration)


def _pulse(axis, angle):
    return PulseSegment('pulse', 0.0, axis, angle)


def _cpmg_cell(spec, tau):
    theta = np.pi + spec.delta_theta
    if spec.cell == 'asymmetric':
        return [_free(tau), _pulse('x', theta), _free(tau), _pulse('x', theta)]
    return [_free(tau / 2), _pulse('x', theta), _free(tau), _pulse('x', theta), _free(tau / 2)]


def _pulsepol_cell(tau):
    b1 = [_pulse('y', np.pi / 2), _free(tau / 2), _pulse('x', np.pi), _free(tau / 2), _pulse('y', np.pi / 2)]
    b2 = [_pulse('x', np.pi / 2), _free(tau / 2), _pulse('y', np.pi), _free(tau / 2), _pulse('x', np.pi / 2)]
    return b1 + b2 + b1 + b2


def _pulse_groups(segments):
    groups = []
    start = None
    for i, segment in enumerate(segments):
        if segment.is_pulse and start is None:
            start = i
        elif not segment.is_pulse and start is not None:
            groups.append((start, i))
            start = None
    if start is not None:
        groups.append((start, len(segments)))
    return groups


def _finite_pulses(segments, t_pi):
    """Give each pulse duration t_pi, centred on its nominal instant.

    Pulse groups at the period boundaries are aligned to the boundary, so the
    period is unchanged.
    """
    free = [s.duration if not s.is_pulse else 0.0 for s in segments]
    for start, stop in _pulse_groups(segments):
        group_time = (stop - start) * t_pi
        before = start - 1 if start > 0 else None
        after = stop if stop < len(segments) else None
        if before is not None and after is not None:
            free[before] -= group_time / 2
            free[after] -= group_time / 2
        elif after is not None:
            free[after] -= group_time
        elif before is not None:
            free[before] -= group_time
    if min(free) < -1e-18:
        raise ValidationError(f"pulse overlap: t_pi={t_pi:.3e} s leaves negative free evolution")
    finite = []
    for segment, duration in zip(segments, free):
        if segment.is_pulse:
            finite.append(PulseSegment('pulse', t_pi, segment.axis, segment.angle))
        else:
            finite.append(_free(max(duration, 0.0)))
    return finite


def build_sequence(spec, tau):
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    if spec.family == 'pulsepol':
        segments = _pulsepol_cell(tau)
    else:
        segments = _cpmg_cell(spec, tau)
    period = spec.period_factor * tau
    if not spec.ideal:
        n_pulses = sum(1 for s in segments if s.is_pulse)
        if n_pulses * spec.t_pi >= period:
            raise ValidationError(
                f"pulse overlap: {n_pulses} pulses of {spec.t_pi:.3e} s exceed period {period:.3e} s"
            )
        segments = _finite_pulses(segments, spec.t_pi)
    return PulseSequence(tuple(segments), period, tau)


def nominal_angle_sum(spec, sequence):
    """Sum of pulse angles with the PolCPMG over-rotation removed."""
    total = 0.0
    for pulse in sequence.pulses:
        angle = pulse.angle
        if spec.family == 'polcpmg':
            angle -= spec.delta_theta
        total += angle
    return total


def check_harmonic(j):
    if j < 1 or j % 2 != 1:
        raise ValidationError(f"harmonic j must be a positive odd integer, got {j}")


def resonance_tau(spec, system, nucleus, j=1):
    check_harmonic(j)
    if spec.family == 'pulsepol':
        return j * np.pi / (2.0 * system.omega_L)
    a_z = system.nuclei[nucleus].a_z
    return j * np.pi / (system.omega_L + a_z / 2.0)


def protocol_constants(spec):
    if spec.family == 'pulsepol':
        return {'beta': PULSEPOL_BETA, 'T_r_factor': 4.0}
    return {'beta': np.pi + spec.delta_theta, 'T_r_factor': 2.0}
