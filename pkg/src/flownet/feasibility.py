"""External-inflow feasibility via max-flow / min-cut.

An external inflow vector is feasible when some equilibrium flow within the
per-link capacities carries it, which holds exactly when every node set U of
non-destination nodes has enough outgoing cut capacity to cover the external
inflow injected inside U:

    slack(U) = sum of capacities leaving U - sum of inflows inside U >= 0.

Two interchangeable implementations:

* :func:`is_feasible` reduces to max flow on an auxiliary graph (super-source
  feeding origins at their inflow rates, destinations draining into a
  super-sink) solved with shortest-augmenting-path search. The minimum slack
  over *nonempty* U is recovered by re-running the max flow once per
  non-destination node v with v forced onto the source side (an effectively
  infinite source arc); the empty set always has slack zero and carries no
  information, so it is excluded from the minimum.
* :func:`brute_force_feasible` enumerates all nonempty subsets directly and
  is the oracle the max-flow route is tested against.

Capacities are supplied by the caller, so the same check serves both the raw
capacity vector and any profile of maximum sustainable inflows.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import FlowNetError
from .network import FlowNetwork, NodeId

_EPS = 1e-12  # residual saturation tolerance
_SLACK_TOL = 1e-9
_MAX_AUGMENTATIONS = 100_000


class NegativeInput(FlowNetError):
    """A capacity or inflow is negative."""


class TooLarge(FlowNetError):
    """Too many non-destination nodes for exhaustive cut enumeration."""


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    min_slack: float
    witness_cut: frozenset[NodeId]
    max_flow_value: float


class _ResidualGraph:
    """Adjacency-list residual graph for shortest-augmenting-path max flow."""

    __slots__ = ("to", "cap", "rev", "adj")

    def __init__(self, n_nodes: int):
        self.to: list[int] = []
        self.cap: list[float] = []
        self.rev: list[int] = []
        self.adj: list[list[int]] = [[] for _ in range(n_nodes)]

    def add_edge(self, u: int, v: int, capacity: float) -> None:
        self.adj[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(capacity)
        self.rev.append(len(self.to))
        self.adj[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(0.0)
        self.rev.append(len(self.to) - 2)

    def max_flow(self, source: int, sink: int) -> float:
        total = 0.0
        for _ in range(_MAX_AUGMENTATIONS):
            parent_edge = [-1] * len(self.adj)
            parent_edge[source] = -2
            queue = deque([source])
            while queue and parent_edge[sink] == -1:
                u = queue.popleft()
                for idx in self.adj[u]:
                    v = self.to[idx]
                    if parent_edge[v] == -1 and self.cap[idx] > _EPS:
                        parent_edge[v] = idx
                        queue.append(v)
            if parent_edge[sink] == -1:
                return total
            bottleneck = float("inf")
            v = sink
            while v != source:
                idx = parent_edge[v]
                bottleneck = min(bottleneck, self.cap[idx])
                v = self.to[self.rev[idx]]
            v = sink
            while v != source:
                idx = parent_edge[v]
                self.cap[idx] -= bottleneck
                self.cap[self.rev[idx]] += bottleneck
                v = self.to[self.rev[idx]]
            total += bottleneck
        raise FlowNetError("max-flow augmentation cap exceeded; capacities may be degenerate")

    def source_side(self, source: int) -> set[int]:
        """Nodes residual-reachable from the source after a max-flow run."""
        seen = {source}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for idx in self.adj[u]:
                v = self.to[idx]
                if v not in seen and self.cap[idx] > _EPS:
                    seen.add(v)
                    queue.append(v)
        return seen


def _validated(
    network: FlowNetwork, capacities: Sequence[float], inflow: Mapping[NodeId, float]
) -> dict[NodeId, float]:
    if len(capacities) != len(network.links):
        raise FlowNetError("capacity vector length does not match the link count")
    for link in network.links:
        if capacities[link.id] < 0.0:
            raise NegativeInput(f"negative capacity on link {link.id}")
    origins = set(network.origins)
    lam = {v: 0.0 for v in origins}
    for v, value in inflow.items():
        if v not in origins:
            raise FlowNetError(f"external inflow declared at non-origin node {v}")
        if value < 0.0:
            raise NegativeInput(f"negative external inflow at node {v}")
        lam[v] = float(value)
    return lam


def _aux_graph(
    network: FlowNetwork,
    capacities: Sequence[float],
    lam: Mapping[NodeId, float],
    index: Mapping[NodeId, int],
    forced: NodeId | None,
    big: float,
) -> _ResidualGraph:
    n = len(network.nodes)
    source, sink = n, n + 1
    graph = _ResidualGraph(n + 2)
    # parallel links merged by capacity summation; cuts are node sets, so the
    # merge does not affect the reported witness
    merged: dict[tuple[int, int], float] = {}
    for link in network.links:
        key = (index[link.tail], index[link.head])
        merged[key] = merged.get(key, 0.0) + capacities[link.id]
    for (u, v), cap in merged.items():
        graph.add_edge(u, v, cap)
    for v, value in lam.items():
        if value > 0.0:
            graph.add_edge(source, index[v], value)
    if forced is not None:
        graph.add_edge(source, index[forced], big)
    for v in network.destinations:
        graph.add_edge(index[v], sink, big)
    return graph


def is_feasible(
    network: FlowNetwork, capacities: Sequence[float], inflow: Mapping[NodeId, float]
) -> FeasibilityResult:
    """Exact feasibility check by augmenting-path max flow.

    Returns the max-flow value of the plain auxiliary graph, the minimum
    slack over nonempty non-destination node sets, and a witness set
    achieving it.
    """
    lam = _validated(network, capacities, inflow)
    total = sum(lam.values())
    index = {v: i for i, v in enumerate(network.nodes)}
    big = sum(capacities) + total + 1.0

    source, sink = len(network.nodes), len(network.nodes) + 1
    plain = _aux_graph(network, capacities, lam, index, None, big)
    max_flow_value = plain.max_flow(source, sink)

    min_slack = float("inf")
    witness: frozenset[NodeId] = frozenset()
    for v in network.non_destinations:
        graph = _aux_graph(network, capacities, lam, index, v, big)
        cut_value = graph.max_flow(source, sink)
        slack = cut_value - total
        if slack < min_slack - _SLACK_TOL:
            min_slack = slack
            side = graph.source_side(source)
            witness = frozenset(u for u in network.nodes if index[u] in side)
    feasible = min_slack >= -_SLACK_TOL * max(1.0, total)
    return FeasibilityResult(feasible, min_slack, witness, max_flow_value)


def brute_force_feasible(
    network: FlowNetwork, capacities: Sequence[float], inflow: Mapping[NodeId, float]
) -> FeasibilityResult:
    """Oracle feasibility check: enumerate every nonempty non-destination subset.

    Identical semantics to :func:`is_feasible`; the max-flow value is
    recovered from the min-cut identity (total inflow plus the most negative
    slack over all subsets including the empty one).
    """
    lam = _validated(network, capacities, inflow)
    candidates = list(network.non_destinations)
    if len(candidates) > 20:
        raise TooLarge(f"{len(candidates)} non-destination nodes; limit is 20")
    total = sum(lam.values())

    min_slack = float("inf")
    witness: frozenset[NodeId] = frozenset()
    for mask in range(1, 1 << len(candidates)):
        members = {candidates[i] for i in range(len(candidates)) if mask >> i & 1}
        cut = sum(
            capacities[link.id]
            for link in network.links
            if link.tail in members and link.head not in members
        )
        inside = sum(lam.get(v, 0.0) for v in members)
        slack = cut - inside
        if slack < min_slack - _SLACK_TOL:
            min_slack = slack
            witness = frozenset(members)
    feasible = min_slack >= -_SLACK_TOL * max(1.0, total)
    max_flow_value = total + min(0.0, min_slack)
    return FeasibilityResult(feasible, min_slack, witness, max_flow_value)
