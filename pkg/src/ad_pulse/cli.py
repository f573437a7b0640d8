from argparse import ArgumentParser
from pathlib import Path
from sys import exit
import logging

from .config import ACTIONS, parse_scenario, with_overrides
from .errors import AdPulseError, EXIT_FAILURE, EXIT_OK
from .output import PLOT_KINDS, emit_plot
from .presets import list_presets, preset_path
from .runner import run_scenario

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def configure_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)


def run_from_path(path, action=None, out=None, seed=None, threads=None, strict=True, plots=True):
    scenario = parse_scenario(path, strict=strict)
    scenario = with_overrides(scenario, action=action, out_dir=out, seed=seed, threads=threads)
    result = run_scenario(scenario, plots=plots)

    print(f"Scenario '{scenario.name}' ({scenario.action}) finished")
    for key, value in result['summary'].items():
        print(f"  {key}: {value}")
    print(f"Artifacts in {scenario.out_dir}")
    return result['exit_code']


def _add_scenario_arguments(subparser, required=True):
    subparser.add_argument('--scenario', required=required, help='Scenario INI file')
    subparser.add_argument('--out', help='Output directory (overrides scenario.out_dir)')
    subparser.add_argument('--seed', type=int, help='Seed for random registries (overrides scenario.seed)')
    subparser.add_argument('--threads', type=int, help='Worker threads for tau-grid work')
    subparser.add_argument('--no-plots', action='store_true', help='Write CSVs only')
    subparser.add_argument('--lenient', action='store_true', help='Warn about unknown keys instead of failing')


def build_parser():
    parser = ArgumentParser(
        description='Adiabatic pulse-sequence sweeps of electron-nuclear spin registers',
        prog='adpulse'
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    for action in ACTIONS:
        _add_scenario_arguments(subparsers.add_parser(action, help=f"Run the scenario as '{action}'"))

    run_parser = subparsers.add_parser('run', help='Run the scenario with its own action')
    _add_scenario_arguments(run_parser)

    presets_parser = subparsers.add_parser('presets', help='List bundled presets or run one')
    presets_parser.add_argument('name', nargs='?', help='Preset to run')
    presets_parser.add_argument('--out', help='Output directory')
    presets_parser.add_argument('--threads', type=int, help='Worker threads for tau-grid work')
    presets_parser.add_argument('--no-plots', action='store_true', help='Write CSVs only')

    plot_parser = subparsers.add_parser('plot', help='Render an SVG from a written CSV')
    plot_parser.add_argument('csv', help='CSV file written by a scenario run')
    plot_parser.add_argument('--kind', choices=PLOT_KINDS, required=True, help='Plot layout')
    plot_parser.add_argument('--svg', help='SVG output path (default: next to the CSV)')
    return parser


def dispatch(args, parser):
    if args.command in ACTIONS or args.command == 'run':
        action = None if args.command == 'run' else args.command
        return run_from_path(args.scenario, action, args.out, args.seed, args.threads,
                             strict=not args.lenient, plots=not args.no_plots)
    if args.command == 'presets':
        if not args.name:
            for name in list_presets():
                print(name)
            return EXIT_OK
        return run_from_path(preset_path(args.name), out=args.out, threads=args.threads,
                             plots=not args.no_plots)
    if args.command == 'plot':
        svg = emit_plot(args.csv, args.kind, args.svg)
        print(f"Wrote {svg}")
        return EXIT_OK
    parser.print_help()
    return EXIT_FAILURE


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        code = dispatch(args, parser)
    except AdPulseError as e:
        print(f"Error: {e}")
        for note in getattr(e, '__notes__', []):
            print(f"  {note}")
        code = e.exit_code
    exit(code)


if __name__ == '__main__':
    main()
