"""Bundled example topologies and their standard demand presets."""

from __future__ import annotations

from importlib import resources

from ..network import Network, load_topology

FIXTURE_NAMES = ("butterfly", "service", "cdn")

# Demand per destination in rate units, and the fraction of a frame that
# may change between rounds, for the standard experiments.
PRESET_B = {"butterfly": 3.6, "service": 5.0, "cdn": 6.0}
PRESET_EPS_FRACTION = 0.01
PRESET_ROUNDS = 100


def fixture_text(name: str) -> str:
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")
    ref = resources.files("cachecast.fixtures").joinpath(f"{name}.topo")
    return ref.read_text(encoding="utf-8")


def load_fixture(name: str) -> Network:
    return load_topology(fixture_text(name))
