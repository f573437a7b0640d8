from dataclasses import dataclass, replace
from functools import reduce
import logging

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import block_diag, eigh

from .errors import InvariantViolation, ValidationError
from .protocols import build_sequence
from .spin_model import (
    ID2, SINGLE_SITE, assert_hermitian, branch_fields, build_spin_operators,
    drive_hamiltonian, free_hamiltonian,
)

logger = logging.getLogger(__name__)

UNITARITY_TOL = 1e-10
PAULI = {axis: 2.0 * op for axis, op in SINGLE_SITE.items()}


@dataclass(frozen=True)
class Propagator:
    matrix: np.ndarray
    tau: float
    period: float
    protocol: object = None

    @property
    def dim(self):
        return self.matrix.shape[0]


def unitarity_error(u):
    return np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))


def assert_unitary(u, context=''):
    error = unitarity_error(u)
    if error > UNITARITY_TOL:
        raise InvariantViolation(f"unitarity lost{context}: max |U^dag U - 1| = {error:.3e}")
    return u


def dense_exponential(h, duration):
    """exp(-i H t) through the Hermitian eigendecomposition."""
    assert_hermitian(h)
    w, v = eigh(h)
    return (v * np.exp(-1j * w * duration)) @ v.conj().T


def rotation_2x2(vector, duration):
    """exp(-i t b.sigma/2) for a spin-1/2 precessing about b."""
    norm = np.linalg.norm(vector)
    if norm == 0.0 or duration == 0.0:
        return ID2.copy()
    n = vector / norm
    angle = norm * duration / 2.0
    n_sigma = n[0] * PAULI['x'] + n[1] * PAULI['y'] + n[2] * PAULI['z']
    return np.cos(angle) * ID2 - 1j * np.sin(angle) * n_sigma


def free_unitary_blocks(system, duration):
    """Free evolution using the S_z block structure: one 2x2 rotation per nucleus and branch."""
    fields = branch_fields(system)
    blocks = []
    for e in range(2):
        rotations = [rotation_2x2(fields[e, n], duration) for n in range(system.n_nuc)]
        blocks.append(reduce(np.kron, rotations))
    return block_diag(*blocks)


def ideal_pulse_unitary(system, axis, angle):
    electron = np.cos(angle / 2.0) * ID2 - 1j * np.sin(angle / 2.0) * PAULI[axis]
    return np.kron(electron, np.eye(2 ** system.n_nuc, dtype=complex))


def segment_unitary(system, segment, fast=True, ops=None):
    if segment.is_pulse:
        if segment.duration == 0.0:
            return ideal_pulse_unitary(system, segment.axis, segment.angle)
        ops = ops or build_spin_operators(system)
        omega = segment.angle / segment.duration
        h = free_hamiltonian(system, ops) + drive_hamiltonian(system, omega, segment.axis, ops)
        return dense_exponential(h, segment.duration)
    if segment.duration == 0.0:
        return np.eye(system.dim, dtype=complex)
    if fast:
        return free_unitary_blocks(system, segment.duration)
    ops = ops or build_spin_operators(system)
    return dense_exponential(free_hamiltonian(system, ops), segment.duration)


def one_period_propagator(system, sequence, protocol=None, fast=True):
    needs_dense = not fast or any(s.is_pulse and s.duration > 0 for s in sequence.segments)
    ops = build_spin_operators(system) if needs_dense else None
    u = np.eye(system.dim, dtype=complex)
    for segment in sequence.segments:
        u = segment_unitary(system, segment, fast=fast, ops=ops) @ u
    assert_unitary(u, f" at tau={sequence.tau:.6e} s")
    return Propagator(u, sequence.tau, sequence.period, protocol)


def propagator_at(system, spec, tau, fast=True):
    return one_period_propagator(system, build_sequence(spec, tau), spec, fast=fast)


def propagators_on_grid(system, spec, taus, n_jobs=1):
    """Independent propagators for every tau; order of results follows the grid."""
    if n_jobs == 1:
        return [propagator_at(system, spec, tau) for tau in taus]
    logger.debug("computing %d propagators on %d threads", len(taus), n_jobs)
    return Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(propagator_at)(system, spec, tau) for tau in taus
    )


def propagate_state(state, propagator, n_periods):
    if n_periods < 0:
        raise ValidationError(f"n_periods must be >= 0, got {n_periods}")
    if state.rho.shape[0] != propagator.dim:
        raise ValidationError(
            f"dimension mismatch: state {state.rho.shape[0]} vs propagator {propagator.dim}"
        )
    if n_periods == 0:
        return state
    # matrix_power squares repeatedly
    u_n = np.linalg.matrix_power(propagator.matrix, n_periods)
    return replace(state, rho=u_n @ state.rho @ u_n.conj().T)
