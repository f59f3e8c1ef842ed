"""Queue-congestion side-channel attack simulator for off-path TCP sessions."""

from .attacker import AttackEngine, Classification, Query, ScanReport, SpikeVerdict, Target
from .harness import Pipeline, run_experiment, sweep
from .scenario import ScenarioConfig, build_scenario, load_scenario
from .seqspace import (
    ack_acceptable_conntrack,
    ack_acceptable_rfc793,
    amplification_factor,
    blind_attempt_count,
    in_window,
    reflection_delay,
    seq_diff,
)
from .stackmodel import HostModel, RstPolicy, TcpFlags, TcpSegment

__version__ = "0.1.0"

__all__ = [
    "AttackEngine",
    "Classification",
    "HostModel",
    "Pipeline",
    "Query",
    "RstPolicy",
    "ScanReport",
    "ScenarioConfig",
    "SpikeVerdict",
    "Target",
    "TcpFlags",
    "TcpSegment",
    "ack_acceptable_conntrack",
    "ack_acceptable_rfc793",
    "amplification_factor",
    "blind_attempt_count",
    "build_scenario",
    "in_window",
    "load_scenario",
    "reflection_delay",
    "run_experiment",
    "seq_diff",
    "sweep",
]
