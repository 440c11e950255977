"""Shared utilities for the simulator."""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any

import yaml


def load_config(config_path: str | Path) -> dict[str, Any]:
    """Load a scenario or settings file.

    YAML is the default format; files ending in ``.toml`` are parsed as TOML.

    Args:
        config_path: Path to the configuration file

    Returns:
        Configuration dictionary

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the file does not parse to a mapping
    """
    path = Path(config_path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        data: Any = tomllib.loads(text)
    else:
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping, got {type(data).__name__}")
    return data


def dump_config(data: dict[str, Any], path: str | Path) -> None:
    """Write a configuration mapping as YAML with stable key order."""
    Path(path).write_text(
        yaml.safe_dump(data, sort_keys=True, default_flow_style=False),
        encoding="utf-8",
    )


def ensure_dir(path: str | Path) -> Path:
    """Create a directory (and parents) if needed and return it."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
