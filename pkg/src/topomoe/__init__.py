"""Topology-routed mixture-of-experts graph learning for traffic signal control."""

from importlib import resources

__version__ = "0.1.0"

BUNDLED_SCENARIOS = ("cross", "tjunction", "grid2x2", "grid2x2_tjunction")


def scenario_path(name: str):
    """Filesystem path of a bundled scenario (name without extension)."""
    if name not in BUNDLED_SCENARIOS:
        raise KeyError(f"no bundled scenario named {name!r}; have {BUNDLED_SCENARIOS}")
    return resources.files("topomoe") / "scenarios" / f"{name}.json"
