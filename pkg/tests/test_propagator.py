import numpy as np
import pytest

from ad_pulse.errors import ValidationError
from ad_pulse.propagator import (
    free_unitary_blocks, one_period_propagator, propagate_state, propagator_at, propagators_on_grid, segment_unitary,
    unitarity_error,
)
from ad_pulse.protocols import ProtocolSpec, PulseSegment, PulseSequence, build_sequence, resonance_tau
from ad_pulse.registry import random_registry
from ad_pulse.spin_model import SpinSystem, build_spin_operators
from ad_pulse.sweep import make_initial_state, observables

from .helpers import cpmg, polcpmg, pulsepol, single_spin


def test_free_precession_without_coupling():
    system = single_spin(a_x_khz=0.0, a_z_khz=0.0)

    u = free_unitary_blocks(system, 1e-6)
    phase = np.angle(u[1, 1] / u[0, 0])

    assert np.isclose(phase, 2 * np.pi * 0.4315, atol=1e-9), f"relative phase {phase}"
    assert np.isclose(phase, 2.711, atol=1e-3)


@pytest.mark.parametrize('spec', [cpmg(), polcpmg(), pulsepol()], ids=['cpmg', 'polcpmg', 'pulsepol'])
def test_one_period_propagator_is_unitary(spec):
    system = SpinSystem.from_khz(431.5, random_registry(3, seed=11))

    propagator = propagator_at(system, spec, 0.83e-6)

    assert unitarity_error(propagator.matrix) < 1e-10
    assert propagator.dim == 16


@pytest.mark.parametrize('coupling', ['nv', 'symmetric'])
def test_block_path_matches_dense_exponential(coupling):
    system = SpinSystem.from_khz(431.5, random_registry(3, seed=5), coupling=coupling)
    sequence = build_sequence(polcpmg(), 1.1e-6)

    fast = one_period_propagator(system, sequence, fast=True).matrix
    dense = one_period_propagator(system, sequence, fast=False).matrix

    assert np.max(np.abs(fast - dense)) < 1e-10


def test_ideal_cpmg_is_block_diagonal_in_the_electron():
    system = SpinSystem.from_khz(431.5, random_registry(2, seed=2))

    u = propagator_at(system, cpmg(), 0.97e-6).matrix
    d = system.dim // 2

    assert np.max(np.abs(u[:d, d:])) < 1e-12
    assert np.max(np.abs(u[d:, :d])) < 1e-12


def test_segment_order_matters():
    system = SpinSystem.from_khz(431.5, random_registry(2, seed=7))
    rng = np.random.default_rng(7)
    segments = []
    for _ in range(4):
        segments.append(PulseSegment('free', float(rng.uniform(0.1e-6, 0.6e-6))))
        segments.append(PulseSegment('pulse', 0.0, str(rng.choice(['x', 'y'])), float(rng.uniform(0.3, 2.8))))
    period = sum(s.duration for s in segments)
    forward = PulseSequence(tuple(segments), period, period / 2)
    backward = PulseSequence(tuple(reversed(segments)), period, period / 2)

    u_forward = one_period_propagator(system, forward).matrix
    u_backward = one_period_propagator(system, backward).matrix
    u_first = segment_unitary(system, segments[0])
    u_second = segment_unitary(system, segments[1])
    head = segments[0].duration
    two = one_period_propagator(system, PulseSequence(tuple(segments[:2]), head, head)).matrix

    # leftmost factor is the latest segment
    assert np.allclose(two, u_second @ u_first, atol=1e-12)
    assert np.max(np.abs(u_forward - u_backward)) > 1e-2


def test_short_finite_pulses_approach_the_ideal_limit():
    system = single_spin()

    ideal = propagator_at(system, ProtocolSpec('cpmg'), 1e-6).matrix
    finite = propagator_at(system, ProtocolSpec('cpmg', t_pi=1e-9), 1e-6).matrix

    assert unitarity_error(finite) < 1e-10
    assert np.max(np.abs(finite - ideal)) < 1e-2


def test_grid_propagators_follow_grid_order():
    system = single_spin()
    taus = np.linspace(0.9e-6, 1.1e-6, 6)

    serial = propagators_on_grid(system, cpmg(), taus)
    threaded = propagators_on_grid(system, cpmg(), taus, n_jobs=2)

    assert [p.tau for p in threaded] == list(taus)
    for a, b in zip(serial, threaded):
        assert np.allclose(a.matrix, b.matrix, atol=1e-14)


def test_propagate_state_uses_matrix_powers():
    system = single_spin()
    state = make_initial_state(system, 'Xplus', 'all_down')
    propagator = propagator_at(system, cpmg(), 1e-6)

    assert propagate_state(state, propagator, 0) is state

    u3 = propagator.matrix @ propagator.matrix @ propagator.matrix
    evolved = propagate_state(state, propagator, 3)

    assert np.allclose(evolved.rho, u3 @ state.rho @ u3.conj().T, atol=1e-12)
    assert abs(np.trace(evolved.rho) - 1.0) < 1e-10


def test_propagate_state_rejects_bad_input():
    system = single_spin()
    state = make_initial_state(system)
    other = propagator_at(SpinSystem.from_khz(431.5, random_registry(2, seed=1)), cpmg(), 1e-6)

    with pytest.raises(ValidationError, match="dimension mismatch"):
        propagate_state(state, other, 1)
    with pytest.raises(ValidationError):
        propagate_state(state, propagator_at(system, cpmg(), 1e-6), -1)


def test_cpmg_keeps_coherence_off_resonance():
    system = single_spin()
    tau = resonance_tau(cpmg(), system, 0) / 2
    state = make_initial_state(system, 'Xplus', 'all_down')

    evolved = propagate_state(state, propagator_at(system, cpmg(), tau), 32)

    assert observables(evolved)['L'] >= 0.95


def test_cpmg_coherence_dips_on_resonance():
    system = single_spin()
    propagator = propagator_at(system, cpmg(), resonance_tau(cpmg(), system, 0))
    state = make_initial_state(system, 'Xplus', 'all_down')

    coherence = [observables(propagate_state(state, propagator, n))['L'] for n in range(1, 120)]

    assert min(coherence) < 0, f"lowest coherence {min(coherence):.3f}"


def test_uncoupled_cpmg_conserves_every_nuclear_polarization():
    system = SpinSystem.from_khz(431.5, [('A', 0.0, 20.0), ('B', 0.0, -35.0)])
    iz = build_spin_operators(system).iz

    u = propagator_at(system, cpmg(), 1.07e-6).matrix

    for op in iz:
        assert np.max(np.abs(u @ op - op @ u)) < 1e-10


def test_pulsepol_third_harmonic_transfers_polarization():
    system = single_spin(a_x_khz=26.6)
    propagator = propagator_at(system, pulsepol(), resonance_tau(pulsepol(), system, 0, 3))
    state = make_initial_state(system, 'ket0', 'all_down')

    highest = -1.0
    for _ in range(2000):
        state = propagate_state(state, propagator, 1)
        highest = max(highest, observables(state)['Iz'][0])

    assert highest > 0.45, f"highest <I_z> {highest:.3f}"
