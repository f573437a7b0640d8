"""CSV tables, SVG plots and the run manifest.

CSVs come first: plots are rendered from the written CSV, so a plotting
failure can never change table contents.
"""
from hashlib import sha256
from pathlib import Path
import json
import logging
import platform

import matplotlib
matplotlib.use('Agg')
from matplotlib import pyplot as plt
import pandas as pd

from .errors import ValidationError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12g'
PLOT_KINDS = ('spectrum', 'trajectory', 'fidelity')

# required columns per table
SCHEMAS = {
    'spectrum': ['tau_s', 'branch_id', 'eigenphase_rad', 'label', 'gap_to_nearest'],
    'anticrossings': ['tau_center_s', 'gap_rad', 'branches', 'labels'],
    'trajectory': ['step', 'rep', 'tau_s', 't_cum_s', 'L', 'P', 'Mz', 'purity'],
    'repetitions': ['rep', 'P', 'L', 'Mz', 'purity'],
    'lzcompare': ['tau_s', 'P_sim', 'P_lz', 'deviation'],
    'lz_scaling': ['a_x_khz', 'delta_tau_s', 'gamma0', 'n_steps', 't_total_s', 'P_final', 'P_lz_final'],
    'fidelity': ['half_width_ns', 'center_offset_ns', 'tau_ini_s', 'tau_fin_s', 'fidelity',
                 'strict_fidelity', 'electron_branch', 'status'],
}


def write_csv(rows, path, schema):
    """Write rows (dicts or a DataFrame) with the schema's columns first, in order."""
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    columns = SCHEMAS[schema]
    if frame.empty and not len(frame.columns):
        frame = pd.DataFrame(columns=columns)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValidationError(f"{schema} table is missing columns {', '.join(missing)}")
    extra = [c for c in frame.columns if c not in columns]
    frame = frame[columns + extra]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def read_table(path):
    try:
        return pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return pd.DataFrame()


def _require(frame, columns, kind):
    if frame.empty and not len(frame.columns):
        return
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValidationError(f"{kind} plot needs columns {', '.join(missing)}")


def _plot_spectrum(ax, frame):
    _require(frame, ['tau_s', 'branch_id', 'eigenphase_rad'], 'spectrum')
    ax.set_xlabel('tau (us)')
    ax.set_ylabel('eigenphase (rad)')
    if frame.empty:
        return
    for branch, group in frame.groupby('branch_id', sort=True):
        ax.plot(group['tau_s'] * 1e6, group['eigenphase_rad'], linewidth=0.8, gid=f"branch-{branch}")


def _plot_trajectory(ax, frame):
    ax.set_xlabel('tau (us)')
    ax.set_ylabel('polarization')
    if frame.empty:
        return
    if 'P_sim' in frame.columns:
        ax.plot(frame['tau_s'] * 1e6, frame['P_sim'], label='P_sim', gid='P_sim')
    else:
        _require(frame, ['tau_s', 'P', 'rep'], 'trajectory')
        for rep, group in frame.groupby('rep', sort=True):
            ax.plot(group['tau_s'] * 1e6, group['P'], label=f"P (rep {rep})", gid=f"P-rep-{rep}")
        if 'L' in frame.columns and frame['rep'].nunique() == 1:
            ax.plot(frame['tau_s'] * 1e6, frame['L'], linestyle='--', label='L', gid='L')
    if 'P_lz' in frame.columns:
        ax.plot(frame['tau_s'] * 1e6, frame['P_lz'], color='red', label='P_lz', gid='P_lz')
    ax.legend(loc='best', fontsize='small')


def _plot_fidelity(ax, frame):
    _require(frame, ['half_width_ns', 'center_offset_ns', 'fidelity'], 'fidelity')
    ax.set_xlabel('sweep half width (ns)')
    ax.set_ylabel('fidelity')
    if frame.empty:
        return
    for offset, group in frame.groupby('center_offset_ns', sort=True):
        ax.plot(group['half_width_ns'], group['fidelity'], marker='o', label=f"offset {offset:g} ns",
                gid=f"offset-{offset:g}")
    ax.legend(loc='best', fontsize='small')


PLOTTERS = {
    'spectrum': _plot_spectrum,
    'trajectory': _plot_trajectory,
    'fidelity': _plot_fidelity,
}


def emit_plot(csv_path, kind, svg_path=None):
    if kind not in PLOTTERS:
        raise ValidationError(f"unknown plot kind '{kind}' (expected one of {', '.join(PLOT_KINDS)})")
    csv_path = Path(csv_path)
    svg_path = Path(svg_path) if svg_path else csv_path.with_suffix('.svg')
    frame = read_table(csv_path)
    plt.rcParams['svg.hashsalt'] = 'ad-pulse'
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        PLOTTERS[kind](ax, frame)
        fig.tight_layout()
        fig.savefig(svg_path, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    logger.info("wrote %s", svg_path)
    return svg_path


def try_plot(csv_path, kind):
    """Plot, logging instead of raising; CSVs are already on disk."""
    try:
        return emit_plot(csv_path, kind)
    except Exception as e:
        logger.warning("plot of %s failed: %s", csv_path, e)
        return None


def _versions():
    from importlib.metadata import PackageNotFoundError, version

    versions = {'python': platform.python_version()}
    for package in ('ad-pulse', 'numpy', 'scipy', 'pandas', 'matplotlib', 'joblib'):
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = None
    return versions


def file_digest(path):
    return sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, scenario_text, artifacts, timings, extra=None):
    out_dir = Path(out_dir)
    manifest = {
        'inputs_sha256': sha256(scenario_text.encode('utf-8')).hexdigest(),
        'versions': _versions(),
        'timings_s': timings,
        'artifacts': {Path(a).name: file_digest(a) for a in artifacts},
    }
    if extra:
        manifest['summary'] = extra
    path = out_dir / 'manifest.json'
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + '\n', encoding='utf-8')
    logger.info("wrote %s", path)
    return path
