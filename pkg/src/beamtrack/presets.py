"""Resolve scenario names to packaged preset files or user paths."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .config import ConfigError, ScenarioConfig, load_config_file

PRESET_NAMES = ("fig3", "fig4", "fig5a", "fig5b",
                "fig6-pmd", "fig6-pmnd", "fig7-pmd", "fig7-pmnd")


def resolve_config(name_or_path: str) -> ScenarioConfig:
    """Load a scenario by preset name or by filesystem path.

    Preset names win over same-named files in the working directory so that
    `--config fig5a` means the shipped scenario everywhere.
    """
    if name_or_path in PRESET_NAMES:
        ref = resources.files("beamtrack") / "presets" / f"{name_or_path}.json"
        with resources.as_file(ref) as path:
            return load_config_file(path)
    path = Path(name_or_path)
    if path.is_file():
        return load_config_file(path)
    raise ConfigError(
        f"{name_or_path!r} is neither a preset ({', '.join(PRESET_NAMES)}) nor a file"
    )
