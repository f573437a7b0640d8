import json

import numpy as np
import pytest

from ad_pulse.cli import main
from ad_pulse.protocols import ProtocolSpec
from ad_pulse.registry import registry_entries
from ad_pulse.spin_model import KHZ, NuclearSpec, SpinSystem

OMEGA_L_KHZ = 431.5


def single_spin(a_x_khz=26.6, a_z_khz=0.0, coupling='nv', label='C1'):
    return SpinSystem.from_khz(OMEGA_L_KHZ, [(label, a_x_khz, a_z_khz)], coupling=coupling)


def cluster(labels=('C1', 'C2', 'C3'), coupling='nv'):
    return SpinSystem.from_b_field(0.0403, registry_entries_as_specs(labels), coupling=coupling)


def registry_entries_as_specs(labels):
    return [NuclearSpec(label, a_x * KHZ, a_z * KHZ) for label, a_x, a_z in registry_entries(labels)]


def cpmg():
    return ProtocolSpec('cpmg')


def polcpmg(delta_theta_pi=0.25):
    return ProtocolSpec('polcpmg', delta_theta=delta_theta_pi * np.pi)


def pulsepol():
    return ProtocolSpec('pulsepol')


def pure_density(ket):
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def basis_ket(dim, index):
    ket = np.zeros(dim, dtype=complex)
    ket[index] = 1.0
    return ket


class ScenarioDir:
    """A scratch directory holding scenario files and the outputs of CLI runs."""

    def __init__(self, tmp_path):
        self.root = tmp_path / "scenarios"
        self.root.mkdir()

    def write(self, name, text):
        path = self.root / f"{name}.cfg"
        path.write_text(text)
        return path

    def out_dir(self, name):
        return self.root / "out" / name

    def run_cli(self, argv):
        with pytest.raises(SystemExit) as excinfo:
            main(argv)
        return excinfo.value.code

    def run(self, name, text, action='run', extra=()):
        path = self.write(name, text)
        argv = [action, '--scenario', str(path), '--out', str(self.out_dir(name)), *extra]
        return self.run_cli(argv)

    def read(self, name, filename):
        return (self.out_dir(name) / filename).read_text()

    def manifest(self, name):
        return json.loads(self.read(name, 'manifest.json'))

    def exists(self, name, filename):
        return (self.out_dir(name) / filename).is_file()


SMALL_SPECTRUM = """
[scenario]
name = small_spectrum
action = spectrum

[system]
omega_L_khz = 431.5

[nucleus:A]
a_x_khz = 20.0
a_z_khz = 0.0

[protocol]
protocol = cpmg

[spectrum]
tau_min_us = 1.05
tau_max_us = 1.27
n_points = 200
"""

SMALL_SWEEP = """
[scenario]
name = small_sweep
action = sweep

[system]
omega_L_khz = 431.5

[nucleus:A]
a_x_khz = 40.0
a_z_khz = 0.0

[protocol]
protocol = cpmg

[sweep]
target_gamma0 = 5.0
n_linewidths = 4
electron = Xplus
nuclear = all_down
"""
