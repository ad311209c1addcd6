"""Dynamical flow networks under local routing, with speed-limit control.

Simulates per-link density dynamics with irreversible jam failures, checks
external-inflow feasibility by max-flow / min-cut, and synthesizes variable
speed limits (via a capacity-allocation linear program) that keep a feasible
inflow transferring under congestion-responsive local routing.
"""

__version__ = "0.1.0"

from .allocation import (
    AllocationPolytope,
    CapacityAllocation,
    InfeasibleInflow,
    allocate,
    build_polytope,
    polytope_membership,
    speed_limits_from_allocation,
)
from .dynamics import (
    FailureEvent,
    NetworkState,
    Scenario,
    SimulationTrace,
    TransferVerdict,
    VerdictKind,
    classify,
    mass_residual,
    simulate,
    step,
    throughput,
)
from .errors import FlowNetError
from .feasibility import FeasibilityResult, brute_force_feasible, is_feasible
from .fundamental import (
    ConstantCap,
    FeedbackCap,
    FundamentalDiagram,
    Greenshields,
    LinkPhysics,
    MaxAlways,
    SpeedLimitPolicy,
    physics_for_link,
)
from .network import (
    FlowNetwork,
    Link,
    LinkId,
    NodeId,
    NodeKind,
    build_network,
)
from .routing import (
    AwarenessReport,
    BrokenEqualSplit,
    ProportionalPolicy,
    check_congestion_aware,
    check_conservation,
    proportional_split,
)
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    bundled_scenario_path,
    dumps,
    load_scenario,
)

__all__ = [
    "AllocationPolytope",
    "AwarenessReport",
    "BrokenEqualSplit",
    "CapacityAllocation",
    "ConstantCap",
    "FailureEvent",
    "FeasibilityResult",
    "FeedbackCap",
    "FlowNetError",
    "FlowNetwork",
    "FundamentalDiagram",
    "Greenshields",
    "InfeasibleInflow",
    "Link",
    "LinkId",
    "LinkPhysics",
    "MaxAlways",
    "NetworkState",
    "NodeId",
    "NodeKind",
    "ProportionalPolicy",
    "Scenario",
    "ScenarioConfig",
    "ScenarioError",
    "SimulationTrace",
    "SpeedLimitPolicy",
    "TransferVerdict",
    "VerdictKind",
    "allocate",
    "brute_force_feasible",
    "build_network",
    "build_polytope",
    "bundled_scenario_path",
    "check_congestion_aware",
    "check_conservation",
    "classify",
    "dumps",
    "is_feasible",
    "load_scenario",
    "mass_residual",
    "physics_for_link",
    "polytope_membership",
    "proportional_split",
    "simulate",
    "speed_limits_from_allocation",
    "step",
    "throughput",
]
