"""Floquet eigenphases of the one-period propagator and branch tracking across a tau scan.

Eigenphases follow U|Phi> = exp(-i E)|Phi>, i.e. E = -arg(lambda), folded to
(-pi, pi]. Branches are continued by eigenvector overlap, never by phase
proximity, because true crossings exist alongside avoided ones.
"""
from dataclasses import dataclass, field
from fractions import Fraction
import logging

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import LinAlgError, eigh, schur, svd
from scipy.optimize import linear_sum_assignment, minimize_scalar
from scipy.signal import find_peaks

from .errors import EigenSolverError, ValidationError
from .propagator import propagator_at
from .protocols import check_harmonic
from .spin_model import build_spin_operators, larmor_frequencies

logger = logging.getLogger(__name__)

MODULUS_TOL = 1e-10
DEGENERACY_TOL = 1e-9
GAP_FLOOR = 1e-6
DEFAULT_OVERLAP_FLOOR = 0.5
DEFAULT_THRESHOLD_FACTOR = 0.2
WINDOWS = {'full': 2.0 * np.pi, 'half': np.pi}


@dataclass
class FloquetPoint:
    tau: float
    eigenphases: np.ndarray
    eigenvectors: np.ndarray
    labels: list = field(default_factory=list)


@dataclass
class FloquetSpectrum:
    points: list
    branch_map: list
    labels: list
    overlaps: np.ndarray
    ambiguities: list = field(default_factory=list)
    candidate_labels: dict = field(default_factory=dict)
    system: object = None
    protocol: object = None

    @property
    def taus(self):
        return np.array([p.tau for p in self.points])

    @property
    def phases(self):
        return np.array([p.eigenphases for p in self.points])


def fold_phase(phase, window='full'):
    width = WINDOWS[window]
    phase = np.asarray(phase, dtype=float)
    return phase - width * np.ceil((phase - width / 2.0) / width)


def fold_eigenphases(point, window='full'):
    return fold_phase(point.eigenphases, window)


def circular_distance(a, b):
    return np.abs(fold_phase(np.asarray(a) - np.asarray(b)))


def fix_gauge(vectors):
    """Make the largest-magnitude component of every column real and positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    return vectors * (np.conj(pivots) / np.abs(pivots))


def floquet_decompose(propagator):
    try:
        t, z = schur(propagator.matrix, output='complex')
    except (LinAlgError, ValueError) as e:
        raise EigenSolverError(propagator.tau, str(e)) from e
    eigenvalues = np.diag(t)
    modulus_error = np.max(np.abs(np.abs(eigenvalues) - 1.0))
    if modulus_error > MODULUS_TOL:
        raise EigenSolverError(propagator.tau, f"|lambda| deviates from 1 by {modulus_error:.3e}")
    phases = fold_phase(-np.angle(eigenvalues))
    order = np.argsort(phases, kind='stable')
    return FloquetPoint(propagator.tau, phases[order], fix_gauge(z[:, order]))


def degenerate_groups(phases, tol=DEGENERACY_TOL):
    """Groups of indices whose eigenphases coincide (circularly) within tol."""
    order = np.argsort(phases, kind='stable')
    groups = [[order[0]]]
    for i in order[1:]:
        if circular_distance(phases[i], phases[groups[-1][-1]]) <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    if len(groups) > 1 and circular_distance(phases[groups[0][0]], phases[groups[-1][-1]]) <= tol:
        groups[0] = groups.pop() + groups[0]
    return groups


def align_degenerate(vectors, phases, reference):
    """Rotate within each degenerate eigenspace onto the reference vectors it overlaps most."""
    vectors = vectors.copy()
    for group in degenerate_groups(phases):
        if len(group) < 2:
            continue
        projections = vectors[:, group].conj().T @ reference
        chosen = np.argsort(-np.linalg.norm(projections, axis=0), kind='stable')[:len(group)]
        u, _, vh = svd(projections[:, chosen])
        vectors[:, group] = vectors[:, group] @ (u @ vh)
    return fix_gauge(vectors)


def _tag_observable(system):
    ops = build_spin_operators(system)
    site_weights = sum((n + 1) * 1e-6 * iz for n, iz in enumerate(ops.iz))
    return ops, ops.sx + 1e-3 * ops.total_mz() + site_weights


def format_mz(mz):
    value = Fraction(round(2 * mz), 2)
    if value == 0:
        return '0'
    return f"{value.numerator:+d}/{value.denominator}" if value.denominator != 1 else f"{value.numerator:+d}"


def asymptotic_tags(point, system):
    """Electron X+/X- and nuclear M_z tags; degenerate eigenspaces are resolved along S_x then M_z."""
    ops, observable = _tag_observable(system)
    vectors = point.eigenvectors.copy()
    for group in degenerate_groups(point.eigenphases):
        if len(group) < 2:
            continue
        block = vectors[:, group]
        _, rotation = eigh(block.conj().T @ observable @ block)
        vectors[:, group] = block @ rotation
    vectors = fix_gauge(vectors)
    labels, mz_values = [], []
    mz_op = ops.total_mz()
    for col in range(vectors.shape[1]):
        v = vectors[:, col]
        sx = 2.0 * np.real(v.conj() @ ops.sx @ v)
        sz = 2.0 * np.real(v.conj() @ ops.sz @ v)
        mz = np.real(v.conj() @ mz_op @ v)
        if abs(sx) >= 0.5:
            electron = 'X+' if sx > 0 else 'X-'
        else:
            electron = '0' if sz > 0 else '1'
        labels.append(f"{electron}|Mz={format_mz(mz)}")
        mz_values.append(round(2 * mz) / 2)
    point.eigenvectors = vectors
    return labels, np.array(mz_values)


def greedy_assignment(overlap):
    n = overlap.shape[0]
    perm = np.full(n, -1)
    used_rows, used_cols = set(), set()
    for flat in np.argsort(-overlap, axis=None, kind='stable'):
        row, col = divmod(int(flat), n)
        if row in used_rows or col in used_cols:
            continue
        perm[row] = col
        used_rows.add(row)
        used_cols.add(col)
        if len(used_rows) == n:
            break
    return perm


def match_branches(previous, current, overlap_floor=DEFAULT_OVERLAP_FLOOR, strategy='greedy'):
    """Permutation p with branch b at the new point = raw column p[b]."""
    overlap = np.abs(previous.conj().T @ current)
    if strategy == 'optimal':
        _, perm = linear_sum_assignment(-overlap)
    else:
        perm = greedy_assignment(overlap)
        if overlap[np.arange(len(perm)), perm].min() < overlap_floor:
            _, perm = linear_sum_assignment(-overlap)
    return perm, overlap


def _decompose_at(system, spec, tau):
    return floquet_decompose(propagator_at(system, spec, tau))


def _check_grid(tau_grid):
    taus = np.asarray(tau_grid, dtype=float)
    if taus.ndim != 1 or len(taus) < 2:
        raise ValidationError("tau grid needs at least two points")
    steps = np.diff(taus)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValidationError("tau grid must be strictly monotone")
    if np.any(taus <= 0):
        raise ValidationError("tau grid values must be positive")
    return taus


def scan_spectrum(system, spec, tau_grid, overlap_floor=DEFAULT_OVERLAP_FLOOR, n_jobs=1, strategy='greedy'):
    taus = _check_grid(tau_grid)
    if n_jobs == 1:
        raw = [_decompose_at(system, spec, tau) for tau in taus]
    else:
        raw = Parallel(n_jobs=n_jobs, prefer='threads')(
            delayed(_decompose_at)(system, spec, tau) for tau in taus
        )

    # tracking runs after every point exists, in grid order
    labels, _ = asymptotic_tags(raw[0], system)
    points = [FloquetPoint(raw[0].tau, raw[0].eigenphases, raw[0].eigenvectors, labels)]
    branch_map, min_overlaps, ambiguities, candidates = [], [], [], {}
    for k in range(1, len(raw)):
        previous = points[-1].eigenvectors
        current = align_degenerate(raw[k].eigenvectors, raw[k].eigenphases, previous)
        perm, overlap = match_branches(previous, current, overlap_floor, strategy)
        branch_map.append(perm)
        assigned = overlap[np.arange(len(perm)), perm]
        min_overlaps.append(assigned)
        for b in np.flatnonzero(assigned < overlap_floor):
            ranked = np.argsort(-overlap[:, perm[b]], kind='stable')
            rival = ranked[1] if ranked[0] == b else ranked[0]
            ambiguities.append((k, int(b)))
            candidates[(k, int(b))] = (labels[b], labels[rival])
        points.append(FloquetPoint(raw[k].tau, raw[k].eigenphases[perm], current[:, perm], labels))
    if ambiguities:
        logger.warning("branch tracking: %d low-overlap assignments flagged", len(ambiguities))
    return FloquetSpectrum(points, branch_map, labels, np.array(min_overlaps), ambiguities,
                           candidates, system, spec)


def _nearest_spacing(phases):
    spacings = []
    for row in phases:
        d = circular_distance(row[:, None], row[None, :])
        d[d <= GAP_FLOOR] = np.inf
        spacings.append(d.min(axis=1))
    spacings = np.concatenate(spacings)
    finite = spacings[np.isfinite(spacings)]
    return float(np.median(finite)) if finite.size else 0.0


def _clusters(phases, tol=GAP_FLOOR):
    return [float(np.angle(np.mean(np.exp(1j * phases[g])))) for g in degenerate_groups(phases, tol)]


def _local_gap(system, spec, tau, centre):
    phases = _decompose_at(system, spec, tau).eigenphases
    clusters = np.array(_clusters(phases))
    if len(clusters) < 2:
        return 0.0
    nearest = clusters[np.argsort(circular_distance(clusters, centre), kind='stable')[:2]]
    return float(circular_distance(nearest[0], nearest[1]))


def _refine(spectrum, k, a, b):
    taus = spectrum.taus
    phases = spectrum.phases
    centres = np.angle(np.exp(1j * phases[:, a]) + np.exp(1j * phases[:, b]))
    lo, hi = (k - 1, k + 1)

    def centre_at(tau):
        if taus[hi] == taus[lo]:
            return centres[k]
        w = (tau - taus[lo]) / (taus[hi] - taus[lo])
        return np.angle((1 - w) * np.exp(1j * centres[lo]) + w * np.exp(1j * centres[hi]))

    def gap(tau):
        return _local_gap(spectrum.system, spectrum.protocol, tau, centre_at(tau))

    bounds = tuple(sorted((taus[lo], taus[hi])))
    try:
        result = minimize_scalar(gap, bracket=(taus[lo], taus[k], taus[hi]), method='golden')
        if not bounds[0] <= result.x <= bounds[1]:
            raise ValueError("golden search left the bracket")
    except ValueError:
        result = minimize_scalar(gap, bounds=bounds, method='bounded',
                                 options={'xatol': 1e-6 * (bounds[1] - bounds[0])})
    return float(result.x), float(result.fun)


def coupling_gap_bound(system, j=1):
    """Upper estimate of any single-nucleus gap: 4 j A_x / omega_bar over the register."""
    if system is None:
        return 0.0
    return max(4.0 * j * n.a_x / mean_larmor(system, i) for i, n in enumerate(system.nuclei))


def locate_anticrossings(spectrum, threshold=None, threshold_factor=DEFAULT_THRESHOLD_FACTOR,
                         floor=GAP_FLOOR, refine=True, j=1):
    """Avoided crossings as {tau_center, gap, branches, labels}, sorted by tau.

    A dip in the distance between two tracked branches is a candidate when it
    lies between floor and threshold and is more prominent than it is deep.
    The default threshold is the larger of a spacing heuristic and
    coupling_gap_bound, so strongly coupled nuclei are not missed.
    """
    phases = spectrum.phases
    taus = spectrum.taus
    if threshold is None:
        threshold = max(threshold_factor * _nearest_spacing(phases), coupling_gap_bound(spectrum.system, j))
    step = np.min(np.abs(np.diff(taus)))
    found = []
    n_branches = phases.shape[1]
    for a in range(n_branches):
        for b in range(a + 1, n_branches):
            gaps = circular_distance(phases[:, a], phases[:, b])
            dips, props = find_peaks(-gaps, prominence=0)
            for k, prominence in zip(dips, props['prominences']):
                if gaps[k] <= floor or gaps[k] >= threshold or prominence <= gaps[k]:
                    continue
                tau_c, gap_c = _refine(spectrum, k, a, b) if refine else (taus[k], gaps[k])
                if gap_c < floor:
                    continue
                found.append({
                    'tau_center': tau_c,
                    'gap': gap_c,
                    'branches': [(a, b)],
                    'labels': [(spectrum.labels[a], spectrum.labels[b])],
                })
    found.sort(key=lambda item: item['tau_center'])
    merged = []
    for item in found:
        last = merged[-1] if merged else None
        if (last is not None and abs(item['tau_center'] - last['tau_center']) < step
                and abs(item['gap'] - last['gap']) <= 1e-6 * max(item['gap'], last['gap']) + 1e-9):
            last['branches'].extend(item['branches'])
            last['labels'].extend(item['labels'])
        else:
            merged.append(item)
    return merged


def mean_larmor(system, nucleus):
    return float(np.mean(larmor_frequencies(system)[:, nucleus]))


def split_resonances(system, spec, nucleus, j=1, n_points=1500):
    """PolCPMG tau-/tau+ pair for one isolated nucleus, located on its eigenphase spectrum.

    Starting guesses are (j*pi -+ delta_theta) / omega_bar where omega_bar is
    the branch-averaged nuclear precession frequency.
    """
    isolated = system.subsystem([nucleus])
    omega_bar = mean_larmor(isolated, 0)
    shift = abs(spec.delta_theta)
    guesses = ((j * np.pi - shift) / omega_bar, (j * np.pi + shift) / omega_bar)
    pad = 0.1 * j * np.pi / omega_bar
    grid = np.linspace(guesses[0] - pad, guesses[1] + pad, n_points)
    crossings = locate_anticrossings(scan_spectrum(isolated, spec, grid), j=j)
    if not crossings:
        raise ValidationError(f"no anticrossing found for nucleus {system.nuclei[nucleus].label}")
    centres = np.array([c['tau_center'] for c in crossings])
    tau_minus = float(centres[np.argmin(np.abs(centres - guesses[0]))])
    tau_plus = float(centres[np.argmin(np.abs(centres - guesses[1]))])
    return tau_minus, tau_plus


def split_zone(system, spec, nucleus, j=1, side=0):
    """tau interval around one PolCPMG resonance bounded by the midpoints to its neighbours.

    The neighbours of tau- are the tau+ of harmonic j-1 and the tau+ of harmonic j,
    so the minus zone is [(j - 1/2) pi, j pi] / omega_bar and the plus zone is
    [j pi, (j + 1/2) pi] / omega_bar.
    """
    check_harmonic(j)
    omega_bar = mean_larmor(system.subsystem([nucleus]), 0)
    if side == 0:
        return (j - 0.5) * np.pi / omega_bar, j * np.pi / omega_bar
    return j * np.pi / omega_bar, (j + 0.5) * np.pi / omega_bar


OPPOSITE_TAGS = {'X+': 'X-', 'X-': 'X+', '0': '1', '1': '0'}


def _label_electron(label):
    return label.split('|')[0]


def _tracked_distance(spectrum, k, a, b, tau):
    """Distance between the continuations of tracked branches a and b at an off-grid tau."""
    point = _decompose_at(spectrum.system, spectrum.protocol, tau)
    reference = spectrum.points[k].eigenvectors
    vectors = align_degenerate(point.eigenvectors, point.eigenphases, reference)
    overlap = np.abs(vectors.conj().T @ reference[:, [a, b]])
    rows, cols = linear_sum_assignment(-overlap)
    chosen = rows[np.argsort(cols)]
    return float(circular_distance(point.eigenphases[chosen[0]], point.eigenphases[chosen[1]]))


def _pair_minimum(spectrum, a, b, refine=True):
    taus = spectrum.taus
    d = circular_distance(spectrum.phases[:, a], spectrum.phases[:, b])
    candidates = set(find_peaks(-d)[0].tolist()) | {int(np.argmin(d))}
    best = float(d.min())
    if not refine or spectrum.system is None:
        return best
    for k in candidates:
        lo, hi = max(k - 1, 0), min(k + 1, len(taus) - 1)
        bounds = tuple(sorted((taus[lo], taus[hi])))
        result = minimize_scalar(lambda tau: _tracked_distance(spectrum, k, a, b, tau), bounds=bounds,
                                 method='bounded', options={'xatol': 1e-7 * (bounds[1] - bounds[0])})
        best = min(best, float(result.fun))
    return best


def extremal_gap(spectrum, n_nuc, refine=True):
    """Smallest gap between the M_z = +-N/2 branches and the adjacent M_z manifolds.

    Only pairs with opposite electron tags are compared: the ideal-CPMG
    spectrum is doubly degenerate and a same-tag pair (X+|M> with X+|M-1>)
    lives in different symmetry sectors, so it crosses exactly. Every local
    minimum of a pair's grid distance is refined off-grid with a bounded
    scalar search, so a true crossing reports ~0 rather than the grid step.
    """
    mz = np.array([_label_mz(label) for label in spectrum.labels])
    tags = [_label_electron(label) for label in spectrum.labels]
    result = {}
    for sign in (+1, -1):
        extremal = np.flatnonzero(mz == sign * n_nuc / 2)
        adjacent = np.flatnonzero(mz == sign * (n_nuc / 2 - 1))
        pairs = [(int(a), int(b)) for a in extremal for b in adjacent if OPPOSITE_TAGS[tags[a]] == tags[b]]
        if not pairs:
            result[sign] = np.inf
            continue
        result[sign] = min(_pair_minimum(spectrum, a, b, refine) for a, b in pairs)
        logger.debug("extremal gap M_z=%+d*N/2: %.3e rad over %d pairs", sign, result[sign], len(pairs))
    return result


def _label_mz(label):
    return float(Fraction(label.split('Mz=')[1]))


def spectrum_table(spectrum, window='full'):
    rows = []
    phases = spectrum.phases
    flagged = spectrum.candidate_labels
    for k, point in enumerate(spectrum.points):
        folded = fold_phase(point.eigenphases, window)
        distances = circular_distance(phases[k][:, None], phases[k][None, :])
        np.fill_diagonal(distances, np.inf)
        for b, phase in enumerate(folded):
            label = spectrum.labels[b]
            if (k, b) in flagged:
                label = '|'.join(dict.fromkeys(flagged[(k, b)]))
            rows.append({
                'tau_s': point.tau,
                'branch_id': b,
                'eigenphase_rad': float(phase),
                'label': label,
                'gap_to_nearest': float(distances[b].min()) if len(folded) > 1 else 0.0,
            })
    return rows
