from .floquet import floquet_decompose, locate_anticrossings, scan_spectrum
from .lz_model import LZParams, gamma_lz, lz_polarization
from .propagator import one_period_propagator, propagate_state
from .protocols import ProtocolSpec, build_sequence
from .spin_model import NuclearSpec, SpinSystem
from .storage import run_storage
from .sweep import SweepSchedule, make_initial_state, observables, run_sweep
