"""Scenario configuration, experiment runner, manifests and the ``fpklab`` command."""

from .runner import ReplayReport, RunManifest, emit_plotdata, replay, run
from .scenario import Scenario, bundled_names, load_scenario, parse_scenario

__all__ = ["ReplayReport", "RunManifest", "Scenario", "bundled_names", "emit_plotdata", "load_scenario", "parse_scenario", "replay", "run"]
