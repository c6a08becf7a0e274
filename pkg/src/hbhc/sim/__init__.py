"""Swarm simulator."""

from hbhc.sim.delivery import DualPath, Gossip, Precompute, Pull, Push
from hbhc.sim.engine import (
    VERIFIER,
    ExclusionEvent,
    PartitionEvent,
    RevocationEvent,
    SimClock,
    SimConfig,
    Simulation,
    run,
)
from hbhc.sim.swarm import ROOT_ID, HierarchySpec, Swarm, build_swarm
from hbhc.sim.trace import SimTrace, TraceRecord

__all__ = [
    "DualPath", "Gossip", "Precompute", "Pull", "Push",
    "VERIFIER", "ExclusionEvent", "PartitionEvent", "RevocationEvent",
    "SimClock", "SimConfig", "Simulation", "run",
    "ROOT_ID", "HierarchySpec", "Swarm", "build_swarm",
    "SimTrace", "TraceRecord",
]
