"""Bundled demonstration targets, test suites and run configs."""

from importlib import resources
from pathlib import Path

__all__ = ["target_path"]


def target_path(name: str) -> Path:
    """Filesystem path of a bundled target/suite/config file."""
    path = Path(str(resources.files(__package__).joinpath(name)))
    if not path.is_file():
        raise FileNotFoundError(f"no bundled target file named {name!r}")
    return path
