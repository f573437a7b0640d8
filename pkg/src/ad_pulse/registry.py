"""Bundled nuclear-spin couplings.

Values are A/2π in kHz. Only C1's transverse coupling (26.6 kHz) is quoted
experimentally; the other transverse couplings are placeholders drawn
from the quoted 20-60 kHz range, and every parallel coupling is a
placeholder chosen to keep the CPMG resonances of the cluster distinct.
"""
import numpy as np

# label: (a_x_khz, a_z_khz, provenance)
EXAMPLE_REGISTRY = {
    'C1': (26.6, -20.7, 'a_x measured, a_z placeholder'),
    'C2': (43.0, 20.6, 'placeholder'),
    'C3': (32.0, -14.8, 'placeholder'),
    'C4': (35.0, 8.0, 'placeholder'),
    'C5': (55.0, -48.0, 'placeholder'),
    'C6': (38.0, 35.0, 'placeholder'),
    'C7': (48.0, 58.0, 'placeholder'),
}

RANDOM_A_X_RANGE_KHZ = (20.0, 60.0)
RANDOM_A_Z_RANGE_KHZ = (-60.0, 60.0)


def registry_entries(labels):
    entries = []
    for label in labels:
        if label not in EXAMPLE_REGISTRY:
            raise KeyError(f"unknown registry spin '{label}' (known: {', '.join(EXAMPLE_REGISTRY)})")
        a_x_khz, a_z_khz, _ = EXAMPLE_REGISTRY[label]
        entries.append((label, a_x_khz, a_z_khz))
    return entries


def random_registry(n_nuc, seed):
    rng = np.random.default_rng(seed)
    a_x = rng.uniform(*RANDOM_A_X_RANGE_KHZ, size=n_nuc)
    a_z = rng.uniform(*RANDOM_A_Z_RANGE_KHZ, size=n_nuc)
    return [(f"R{n + 1}", float(a_x[n]), float(a_z[n])) for n in range(n_nuc)]
