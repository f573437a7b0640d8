"""Central electron spin coupled to a register of spin-1/2 nuclei.

Tensor order is fixed: site 0 is the electron, sites 1..N are the nuclei in
the order of ``SpinSystem.nuclei``. Electron |0> is the S_z = +1/2 basis
state (index 0) and |1> is S_z = -1/2; nuclear |up> is index 0.

Two electron coupling conventions are supported for the hyperfine term
``C_e (A_x I_x + A_z I_z)``:

* ``nv``: C_e = diag(0, 1). Electron |0> (m_s = 0) is uncoupled and |1>
  carries the full hyperfine vector, so the two branch precession
  frequencies are omega_L and omega_L + A_z and the CPMG resonance falls at
  j*pi / (omega_L + A_z/2).
* ``symmetric``: C_e = S_z with eigenvalues +-1/2, the literal form of the
  Hamiltonian written with a spin-1/2 electron.
"""
from dataclasses import dataclass, field
from functools import reduce
import numpy as np

from .errors import InvariantViolation, ValidationError

KHZ = 2.0 * np.pi * 1e3
GAMMA_C13_KHZ_PER_TESLA = 10708.4
MAX_NUCLEI = 12
HERMITIAN_TOL = 1e-12
COUPLINGS = ('nv', 'symmetric')

SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)
ID2 = np.eye(2, dtype=complex)
SINGLE_SITE = {'x': SX, 'y': SY, 'z': SZ}


@dataclass(frozen=True)
class NuclearSpec:
    label: str
    a_x: float
    a_z: float

    def __post_init__(self):
        if self.a_x < 0:
            raise ValidationError(f"nucleus {self.label}: a_x must be >= 0, got {self.a_x}")


@dataclass(frozen=True)
class SpinSystem:
    omega_L: float
    nuclei: tuple
    b_field: float | None = None
    coupling: str = 'nv'
    gamma_khz_per_tesla: float = GAMMA_C13_KHZ_PER_TESLA

    def __post_init__(self):
        object.__setattr__(self, 'nuclei', tuple(self.nuclei))
        if not 1 <= len(self.nuclei) <= MAX_NUCLEI:
            raise ValidationError(
                f"dimension overflow: 1 <= N_nuc <= {MAX_NUCLEI} required, got {len(self.nuclei)}"
            )
        if self.omega_L <= 0:
            raise ValidationError(f"omega_L must be positive, got {self.omega_L}")
        if self.coupling not in COUPLINGS:
            raise ValidationError(f"unknown coupling convention '{self.coupling}'")
        labels = [n.label for n in self.nuclei]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"nucleus labels must be unique, got {labels}")
        if self.b_field is not None:
            expected = self.gamma_khz_per_tesla * KHZ * self.b_field
            if not np.isclose(self.omega_L, expected, rtol=1e-12):
                raise ValidationError(
                    f"omega_L={self.omega_L} inconsistent with b_field={self.b_field} T"
                )

    @classmethod
    def from_b_field(cls, b_field, nuclei, coupling='nv', gamma_khz_per_tesla=GAMMA_C13_KHZ_PER_TESLA):
        omega_L = gamma_khz_per_tesla * KHZ * b_field
        return cls(omega_L, nuclei, b_field=b_field, coupling=coupling,
                   gamma_khz_per_tesla=gamma_khz_per_tesla)

    @classmethod
    def from_khz(cls, omega_L_khz, couplings_khz, coupling='nv'):
        """Build from (label, a_x_khz, a_z_khz) triples, all frequencies /2π in kHz."""
        nuclei = [NuclearSpec(label, a_x * KHZ, a_z * KHZ) for label, a_x, a_z in couplings_khz]
        return cls(omega_L_khz * KHZ, nuclei, coupling=coupling)

    @property
    def n_nuc(self):
        return len(self.nuclei)

    @property
    def dim(self):
        return 2 ** (1 + self.n_nuc)

    def index_of(self, label):
        for n, nucleus in enumerate(self.nuclei):
            if nucleus.label == label:
                return n
        raise KeyError(f"no nucleus labelled '{label}'")

    def subsystem(self, indices):
        return SpinSystem(self.omega_L, [self.nuclei[i] for i in indices], b_field=self.b_field,
                          coupling=self.coupling, gamma_khz_per_tesla=self.gamma_khz_per_tesla)

    def with_nuclei(self, nuclei):
        return SpinSystem(self.omega_L, nuclei, b_field=self.b_field, coupling=self.coupling,
                          gamma_khz_per_tesla=self.gamma_khz_per_tesla)


@dataclass
class SpinOperators:
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    ix: list = field(default_factory=list)
    iy: list = field(default_factory=list)
    iz: list = field(default_factory=list)

    def electron(self, axis):
        return {'x': self.sx, 'y': self.sy, 'z': self.sz}[axis]

    def total_mz(self):
        return sum(self.iz)


def embed(op, site, n_sites):
    factors = [op if s == site else ID2 for s in range(n_sites)]
    return reduce(np.kron, factors)


def electron_coupling_values(coupling):
    """Diagonal of C_e for electron basis (|0>, |1>)."""
    if coupling == 'nv':
        return np.array([0.0, 1.0])
    return np.array([0.5, -0.5])


def build_spin_operators(system):
    n_sites = 1 + system.n_nuc
    ops = SpinOperators(
        sx=embed(SX, 0, n_sites),
        sy=embed(SY, 0, n_sites),
        sz=embed(SZ, 0, n_sites),
    )
    for site in range(1, n_sites):
        ops.ix.append(embed(SX, site, n_sites))
        ops.iy.append(embed(SY, site, n_sites))
        ops.iz.append(embed(SZ, site, n_sites))
    return ops


def assert_hermitian(h, tol=HERMITIAN_TOL):
    deviation = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if deviation > tol:
        raise InvariantViolation(f"Hamiltonian not Hermitian: max |H - H^dag| = {deviation:.3e}")
    return h


def free_hamiltonian(system, ops=None):
    ops = ops or build_spin_operators(system)
    n_sites = 1 + system.n_nuc
    c_e = embed(np.diag(electron_coupling_values(system.coupling)).astype(complex), 0, n_sites)
    h = np.zeros((system.dim, system.dim), dtype=complex)
    for n, nucleus in enumerate(system.nuclei):
        h += system.omega_L * ops.iz[n]
        h += c_e @ (nucleus.a_x * ops.ix[n] + nucleus.a_z * ops.iz[n])
    return assert_hermitian(h)


def drive_hamiltonian(system, omega, axis, ops=None):
    if omega < 0:
        raise ValidationError(f"drive strength must be >= 0, got {omega}")
    if axis not in ('x', 'y'):
        raise ValidationError(f"drive axis must be 'x' or 'y', got '{axis}'")
    ops = ops or build_spin_operators(system)
    return omega * ops.electron(axis)


def branch_fields(system):
    """Nuclear precession vectors, shape (2, N_nuc, 3), per electron basis state."""
    c = electron_coupling_values(system.coupling)
    fields = np.zeros((2, system.n_nuc, 3))
    for e in range(2):
        for n, nucleus in enumerate(system.nuclei):
            fields[e, n] = (c[e] * nucleus.a_x, 0.0, system.omega_L + c[e] * nucleus.a_z)
    return fields


def larmor_frequencies(system):
    return np.linalg.norm(branch_fields(system), axis=2)
