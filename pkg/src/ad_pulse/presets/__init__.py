from importlib.resources import files

from ..errors import ConfigError


def list_presets():
    return sorted(p.name.removesuffix('.cfg') for p in files(__name__).iterdir() if p.name.endswith('.cfg'))


def preset_path(name):
    path = files(__name__) / f"{name}.cfg"
    if not path.is_file():
        raise ConfigError(name, f"unknown preset (available: {', '.join(list_presets())})")
    return path
