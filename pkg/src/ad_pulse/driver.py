from sys import argv, exit

from .cli import configure_logging, run_from_path
from .errors import AdPulseError
from .presets import list_presets, preset_path


def main():
    if len(argv) not in (2, 3):
        print("Usage: adpulse-preset <preset> [out_dir]")
        print(f"Presets: {', '.join(list_presets())}")
        exit(1)

    name = argv[1]
    out_dir = argv[2] if len(argv) == 3 else None

    configure_logging()
    try:
        exit_code = run_from_path(preset_path(name), out=out_dir)
    except AdPulseError as e:
        print(f"Error: {e}")
        exit_code = e.exit_code
    exit(exit_code)


if __name__ == '__main__':
    main()
