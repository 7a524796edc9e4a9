"""Deterministic discrete-event simulator and CLI driving the full protocol
lifecycle: synthetic populations, aggregated queries with audit records,
local fine-tuning, candidate announcement, windowed feedback, consensus
resolution and notarization."""

from .config import ScenarioConfig, load_config
from .events import EventQueue, SimEvent
from .report import RunReport, emit_report, replay
from .scenario import SimTuning, run_scenario
from .topology import Topology, build_topology

__all__ = [
    "EventQueue",
    "RunReport",
    "ScenarioConfig",
    "SimEvent",
    "SimTuning",
    "Topology",
    "build_topology",
    "emit_report",
    "load_config",
    "replay",
    "run_scenario",
]
