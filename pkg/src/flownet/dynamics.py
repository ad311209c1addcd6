"""Density dynamics with irreversible link failures.

MODEL
-----
Each link carries a density with first-order dynamics driven by the
difference between the flow routed onto it and its own outflow:

    d rho_e / dt = routed_e - outflow_e

* ``routed_e`` comes from the tail node's routing policy applied to the
  current densities of the tail's outgoing links and the node inflow.
* The node inflow is the external inflow at origins and the sum of upstream
  link outflows elsewhere.
* ``outflow_e`` is the flow function at the link's current density and speed
  limit, except when the head node is a non-destination whose outgoing links
  have all failed; then the link cannot discharge and its outflow is zero.
  Links into destinations always discharge (the blocking condition is vacuous
  for an empty set of downstream links).

A link that reaches its jam density fails irreversibly: its density is
pinned at jam, it carries no flow, and it receives no routed flow. An origin
whose outgoing links have all failed stops injecting; its external inflow is
discarded from the mass balance from then on.

INTEGRATOR
----------
Fixed-step explicit Euler with a simultaneous (Jacobi) update: all speed
limits, outflows, node inflows, and routings are evaluated on the current
state, then every density advances at once. After each step densities are
clamped to ``[0, jam]``; a link whose update lands within 1e-12 of jam is
clamped to jam exactly and marked failed, which makes irreversibility
structural rather than a numerical accident. The right-hand side is
discontinuous at failure events, so a first-order scheme with event clamping
is deliberately preferred over higher-order integrators.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import FlowNetError
from .fundamental import LinkPhysics, SpeedLimitPolicy
from .network import FlowNetwork, LinkId, NodeId, NodeKind
from .routing import AllLinksJammed, RoutingPolicy

_JAM_SNAP = 1e-12  # densities this close to jam are clamped onto it

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy 2.x rename


class NonFiniteState(FlowNetError):
    """The state left the finite range; the step size is too large."""

    def __init__(self, time: float):
        super().__init__(f"non-finite density at t={time:g}; reduce dt")
        self.time = time


class EmptyTrace(FlowNetError):
    """Not enough samples in the requested window."""


@dataclass(eq=False)
class NetworkState:
    """Densities plus the set of permanently failed links at a time instant."""

    rho: np.ndarray
    failed: frozenset[LinkId]
    t: float


@dataclass(eq=False)
class Scenario:
    """Everything one simulation run needs, validated on construction."""

    network: FlowNetwork
    physics: tuple[LinkPhysics, ...]
    inflow: dict[NodeId, float]
    routing: RoutingPolicy
    speed_limits: tuple[SpeedLimitPolicy, ...]
    initial_density: np.ndarray
    dt: float = 0.01
    horizon: float = 200.0
    sample_stride: int = 10

    def __post_init__(self):
        n = len(self.network.links)
        if len(self.physics) != n:
            raise FlowNetError("physics tuple length does not match the link count")
        if len(self.speed_limits) != n:
            raise FlowNetError("speed_limits tuple length does not match the link count")
        origins = set(self.network.origins)
        for v, lam in self.inflow.items():
            if v not in origins:
                raise FlowNetError(f"external inflow declared at non-origin node {v}")
            if lam < 0.0:
                raise FlowNetError(f"negative external inflow at node {v}")
        self.initial_density = np.asarray(self.initial_density, dtype=float)
        if self.initial_density.shape != (n,):
            raise FlowNetError("initial_density length does not match the link count")
        for e in range(n):
            if not 0.0 <= self.initial_density[e] <= self.physics[e].jam_density + _JAM_SNAP:
                raise FlowNetError(
                    f"initial density {self.initial_density[e]} on link {e} outside "
                    f"[0, {self.physics[e].jam_density}]"
                )
        if self.dt <= 0.0:
            raise FlowNetError("dt must be positive")
        if self.horizon <= 0.0:
            raise FlowNetError("horizon must be positive")
        if self.sample_stride < 1:
            raise FlowNetError("sample_stride must be >= 1")

    @property
    def total_inflow(self) -> float:
        return sum(self.inflow.values())

    def initial_state(self) -> NetworkState:
        rho = self.initial_density.copy()
        failed = set()
        for e in range(len(rho)):
            if rho[e] >= self.physics[e].jam_density - _JAM_SNAP:
                rho[e] = self.physics[e].jam_density
                failed.add(e)
        return NetworkState(rho=rho, failed=frozenset(failed), t=0.0)


@dataclass(frozen=True)
class FailureEvent:
    link: LinkId
    time: float


class VerdictKind(enum.Enum):
    TRANSFERRING = "transferring"
    NON_TRANSFERRING = "non-transferring"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class TransferVerdict:
    """Finite-horizon surrogate for the asymptotic transferring property.

    Non-transferring is certified structurally (a loaded origin whose
    outgoing links have all failed; failures are irreversible, so this is
    conclusive). Transferring requires the structural signature to be absent
    and the trailing-window throughput to match the total external inflow
    within a relative tolerance. Everything else is honestly undetermined.
    """

    kind: VerdictKind
    throughput: float
    demand: float
    origin: NodeId | None = None


class _Plan:
    """Precomputed per-link/per-node lookups for the inner loop."""

    __slots__ = (
        "n_links", "tails", "heads", "head_is_dest", "physics", "policies",
        "jam", "routing", "route_nodes", "origin_inflow",
        "dest_nodes", "node_list", "node_col",
    )

    def __init__(self, scenario: Scenario):
        net = scenario.network
        self.n_links = len(net.links)
        self.tails = [link.tail for link in net.links]
        self.heads = [link.head for link in net.links]
        self.head_is_dest = [net.kind(link.head) is NodeKind.DESTINATION for link in net.links]
        self.physics = scenario.physics
        self.policies = scenario.speed_limits
        self.jam = np.array([p.jam_density for p in scenario.physics])
        self.routing = scenario.routing
        self.route_nodes = [(v, net.outgoing(v)) for v in net.non_destinations]
        self.origin_inflow = {v: scenario.inflow.get(v, 0.0) for v in net.origins}
        self.dest_nodes = net.destinations
        self.node_list = list(net.nodes)
        self.node_col = {v: i for i, v in enumerate(self.node_list)}


class _Observation:
    __slots__ = ("speed", "outflow", "routed", "node_inflow", "active_inflow")

    def __init__(self, speed, outflow, routed, node_inflow, active_inflow):
        self.speed = speed
        self.outflow = outflow
        self.routed = routed
        self.node_inflow = node_inflow
        self.active_inflow = active_inflow


def _observe(plan: _Plan, rho: np.ndarray, failed: set[LinkId]) -> _Observation:
    """Evaluate speeds, outflows, node inflows, and routings on the current state."""
    n = plan.n_links
    speed = np.zeros(n)
    raw_flow = np.zeros(n)
    for e in range(n):
        if e in failed:
            continue
        phys = plan.physics[e]
        u = plan.policies[e].speed(phys, rho[e])
        speed[e] = u
        surface = phys.speed_at(rho[e])
        raw_flow[e] = rho[e] * (u if u < surface else surface)

    operational = {v: 0 for v in plan.node_list}
    for e in range(n):
        if e not in failed:
            operational[plan.tails[e]] += 1

    outflow = raw_flow.copy()
    for e in range(n):
        if not plan.head_is_dest[e] and operational[plan.heads[e]] == 0:
            outflow[e] = 0.0

    node_inflow = {v: 0.0 for v in plan.node_list}
    for v, lam in plan.origin_inflow.items():
        node_inflow[v] = lam
    for e in range(n):
        node_inflow[plan.heads[e]] += outflow[e]

    routed = np.zeros(n)
    for v, out_links in plan.route_nodes:
        if operational[v] == 0:
            continue
        mu = node_inflow[v]
        if mu <= 0.0:
            continue
        densities = [rho[e] for e in out_links]
        try:
            flows = plan.routing.route(v, out_links, densities, mu)
        except AllLinksJammed:
            continue
        for e, r in zip(out_links, flows):
            if e not in failed:
                routed[e] = r

    active_inflow = sum(
        lam for v, lam in plan.origin_inflow.items() if operational[v] > 0
    )
    return _Observation(speed, outflow, routed, node_inflow, active_inflow)


def _advance(
    plan: _Plan, rho: np.ndarray, failed: set[LinkId], obs: _Observation, dt: float, t: float
) -> list[FailureEvent]:
    """Euler-update ``rho`` in place; clamp, detect failures, return new events."""
    events: list[FailureEvent] = []
    for e in range(plan.n_links):
        if e in failed:
            continue
        new = rho[e] + dt * (obs.routed[e] - obs.outflow[e])
        if not np.isfinite(new):
            raise NonFiniteState(t + dt)
        jam = plan.jam[e]
        if new >= jam - _JAM_SNAP:
            rho[e] = jam
            failed.add(e)
            events.append(FailureEvent(link=e, time=t + dt))
        elif new < 0.0:
            rho[e] = 0.0
        else:
            rho[e] = new
    return events


def step(state: NetworkState, scenario: Scenario, dt: float | None = None) -> NetworkState:
    """Advance one Euler step; returns a fresh state, input state untouched."""
    dt = scenario.dt if dt is None else dt
    plan = _Plan(scenario)
    rho = state.rho.copy()
    failed = set(state.failed)
    obs = _observe(plan, rho, failed)
    _advance(plan, rho, failed, obs, dt, state.t)
    return NetworkState(rho=rho, failed=frozenset(failed), t=state.t + dt)


@dataclass(eq=False)
class SimulationTrace:
    """Sampled time series of one run, plus exact failure events.

    Row ``k`` of every array is the state/instantaneous rates at
    ``times[k]``. ``cumulative_arrivals`` integrates the total destination
    inflow from time zero (per-step rectangle rule, so it is exact for the
    discrete dynamics). ``node_inflow`` columns follow ``node_index``.
    """

    scenario: Scenario
    times: np.ndarray
    rho: np.ndarray
    speed: np.ndarray
    outflow: np.ndarray
    node_inflow: np.ndarray
    node_index: dict[NodeId, int]
    active_inflow: np.ndarray
    cumulative_arrivals: np.ndarray
    failures: list[FailureEvent] = field(default_factory=list)
    failed_final: frozenset[LinkId] = frozenset()

    @property
    def destination_inflow(self) -> np.ndarray:
        cols = [self.node_index[v] for v in self.scenario.network.destinations]
        return self.node_inflow[:, cols].sum(axis=1)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


def simulate(scenario: Scenario) -> SimulationTrace:
    """Run the dynamics over ``[0, horizon]`` and record a sampled trace.

    Deterministic: the model has no randomness, so identical scenarios give
    bit-identical traces. Samples land every ``sample_stride`` steps plus the
    final step; failure events are recorded at their exact step times
    regardless of the sampling stride.
    """
    plan = _Plan(scenario)
    state = scenario.initial_state()
    rho = state.rho
    failed = set(state.failed)
    n_steps = int(round(scenario.horizon / scenario.dt))
    if n_steps < 1:
        raise FlowNetError("horizon shorter than one step")

    sample_steps: list[int] = []
    times: list[float] = []
    rho_rows: list[np.ndarray] = []
    speed_rows: list[np.ndarray] = []
    outflow_rows: list[np.ndarray] = []
    mu_rows: list[list[float]] = []
    active_rows: list[float] = []
    cum_rows: list[float] = []
    failures: list[FailureEvent] = [FailureEvent(e, 0.0) for e in sorted(failed)]

    cumulative = 0.0
    dt = scenario.dt
    for k in range(n_steps + 1):
        t = k * dt
        obs = _observe(plan, rho, failed)
        if k % scenario.sample_stride == 0 or k == n_steps:
            sample_steps.append(k)
            times.append(t)
            rho_rows.append(rho.copy())
            speed_rows.append(obs.speed)
            outflow_rows.append(obs.outflow)
            mu_rows.append([obs.node_inflow[v] for v in plan.node_list])
            active_rows.append(obs.active_inflow)
            cum_rows.append(cumulative)
        if k == n_steps:
            break
        failures.extend(_advance(plan, rho, failed, obs, dt, t))
        cumulative += dt * sum(obs.node_inflow[v] for v in plan.dest_nodes)

    return SimulationTrace(
        scenario=scenario,
        times=np.array(times),
        rho=np.vstack(rho_rows),
        speed=np.vstack(speed_rows),
        outflow=np.vstack(outflow_rows),
        node_inflow=np.array(mu_rows),
        node_index=dict(plan.node_col),
        active_inflow=np.array(active_rows),
        cumulative_arrivals=np.array(cum_rows),
        failures=failures,
        failed_final=frozenset(failed),
    )


def throughput(trace: SimulationTrace, window: float) -> float:
    """Average destination inflow over the trailing ``window`` (trapezoidal)."""
    if window <= 0.0 or window > trace.horizon + 1e-9:
        raise FlowNetError(f"window must lie in (0, horizon], got {window}")
    start = trace.horizon - window
    mask = trace.times >= start - 1e-12
    if int(mask.sum()) < 2:
        raise EmptyTrace("fewer than two samples in the trailing window")
    times = trace.times[mask]
    series = trace.destination_inflow[mask]
    return float(_trapezoid(series, times) / (times[-1] - times[0]))


def classify(
    trace: SimulationTrace, epsilon_rel: float = 0.02, window: float | None = None
) -> TransferVerdict:
    """Verdict for a completed trace; see :class:`TransferVerdict`."""
    scenario = trace.scenario
    demand = scenario.total_inflow
    if window is None:
        window = 0.5 * trace.horizon
    measured = throughput(trace, window)

    for v in scenario.network.origins:
        lam = scenario.inflow.get(v, 0.0)
        if lam > 0.0 and all(e in trace.failed_final for e in scenario.network.outgoing(v)):
            return TransferVerdict(
                kind=VerdictKind.NON_TRANSFERRING, throughput=measured, demand=demand, origin=v
            )
    if demand > 0.0:
        if abs(measured - demand) <= epsilon_rel * demand:
            return TransferVerdict(VerdictKind.TRANSFERRING, measured, demand)
    elif measured <= 1e-9:
        return TransferVerdict(VerdictKind.TRANSFERRING, measured, demand)
    return TransferVerdict(VerdictKind.UNDETERMINED, measured, demand)


def mass_residual(trace: SimulationTrace) -> np.ndarray:
    """Mass-balance defect per sample interval.

    The total density should change at the rate of the still-injecting
    external inflow minus the destination inflow. Entry ``k`` compares the
    finite difference of total mass over ``[times[k], times[k+1]]`` with the
    endpoint average of that rate; deviations measure integrator truncation
    and mass discarded by jam clamping, and shrink roughly linearly with the
    step size.
    """
    if len(trace.times) < 2:
        raise EmptyTrace("need at least two samples")
    total_mass = trace.rho.sum(axis=1)
    rate = trace.active_inflow - trace.destination_inflow
    d_mass = np.diff(total_mass) / np.diff(trace.times)
    return d_mass - 0.5 * (rate[:-1] + rate[1:])
