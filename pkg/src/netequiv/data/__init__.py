"""Bundled fixtures: cases, participation table, pipeline config."""

from importlib import resources
from pathlib import Path

__all__ = ["data_path"]


def data_path(name: str) -> Path:
    """Filesystem path of a bundled fixture file."""
    p = resources.files(__package__) / name
    with resources.as_file(p) as real:
        if not real.exists():
            raise FileNotFoundError(f"no bundled fixture named {name!r}")
        return Path(real)
