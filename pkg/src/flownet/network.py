"""Directed multigraph flow networks with derived node roles.

A flow network is a directed multigraph in which every node can reach a
destination. Node roles are never declared by the caller; they are derived
from link incidence:

* destination: no outgoing links,
* origin: no incoming links,
* intermediate: everything else.

Parallel links between the same node pair are allowed and kept distinct;
links are identified by their index in the link list.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import FlowNetError

NodeId = int
LinkId = int


class NodeKind(enum.Enum):
    ORIGIN = "origin"
    INTERMEDIATE = "intermediate"
    DESTINATION = "destination"


class NoDestination(FlowNetError):
    """The network has no node without outgoing links."""


class UnreachableDestination(FlowNetError):
    """A node has no directed path to any destination."""

    def __init__(self, node: NodeId):
        super().__init__(f"node {node} has no path to a destination")
        self.node = node


class DanglingEndpoint(FlowNetError):
    """A link references a node that is not part of the network."""

    def __init__(self, link: LinkId, node: NodeId):
        super().__init__(f"link {link} references unknown node {node}")
        self.link = link
        self.node = node


class NonPositiveParameter(FlowNetError):
    """A link carries a non-positive lane count or speed limit."""

    def __init__(self, link: LinkId, name: str, value: float):
        super().__init__(f"link {link}: {name} must be positive, got {value!r}")
        self.link = link


class SelfLoop(FlowNetError):
    """A link starts and ends at the same node."""

    def __init__(self, link: LinkId, node: NodeId):
        super().__init__(f"link {link} is a self-loop at node {node}")
        self.link = link


class IsolatedNode(FlowNetError):
    """A node has neither incoming nor outgoing links."""

    def __init__(self, node: NodeId):
        super().__init__(f"node {node} is isolated (no incident links)")
        self.node = node


class DestinationInU(FlowNetError):
    """A cut node set contains a destination node."""

    def __init__(self, node: NodeId):
        super().__init__(f"cut set may not contain destination node {node}")
        self.node = node


@dataclass(frozen=True)
class Link:
    """One directed link with its physical scale parameters.

    ``lane_count`` is a dimensionless cross-section factor (number of lanes);
    ``max_speed_limit`` is the largest admissible speed limit on the link.
    """

    id: LinkId
    tail: NodeId
    head: NodeId
    lane_count: float = 1.0
    max_speed_limit: float = 1.0


class FlowNetwork:
    """Immutable directed multigraph with per-node link indices.

    Build instances through :func:`build_network`; the constructor assumes
    already-validated inputs.
    """

    __slots__ = ("nodes", "links", "node_kind", "_out", "_in")

    def __init__(
        self,
        nodes: tuple[NodeId, ...],
        links: tuple[Link, ...],
        node_kind: Mapping[NodeId, NodeKind],
        out_links: Mapping[NodeId, tuple[LinkId, ...]],
        in_links: Mapping[NodeId, tuple[LinkId, ...]],
    ):
        self.nodes = nodes
        self.links = links
        self.node_kind = dict(node_kind)
        self._out = dict(out_links)
        self._in = dict(in_links)

    def link(self, link_id: LinkId) -> Link:
        return self.links[link_id]

    def outgoing(self, node: NodeId) -> tuple[LinkId, ...]:
        return self._out[node]

    def incoming(self, node: NodeId) -> tuple[LinkId, ...]:
        return self._in[node]

    def kind(self, node: NodeId) -> NodeKind:
        return self.node_kind[node]

    @property
    def origins(self) -> tuple[NodeId, ...]:
        return tuple(v for v in self.nodes if self.node_kind[v] is NodeKind.ORIGIN)

    @property
    def destinations(self) -> tuple[NodeId, ...]:
        return tuple(v for v in self.nodes if self.node_kind[v] is NodeKind.DESTINATION)

    @property
    def intermediates(self) -> tuple[NodeId, ...]:
        return tuple(v for v in self.nodes if self.node_kind[v] is NodeKind.INTERMEDIATE)

    @property
    def non_destinations(self) -> tuple[NodeId, ...]:
        return tuple(v for v in self.nodes if self.node_kind[v] is not NodeKind.DESTINATION)

    def outgoing_cut(self, node_set: Iterable[NodeId]) -> frozenset[LinkId]:
        """Links leaving ``node_set``: tail inside, head outside.

        ``node_set`` must not contain destinations.
        """
        members = self._checked_cut_set(node_set)
        return frozenset(
            link.id for link in self.links if link.tail in members and link.head not in members
        )

    def incoming_cut(self, node_set: Iterable[NodeId]) -> frozenset[LinkId]:
        """Links entering ``node_set``: head inside, tail outside."""
        members = self._checked_cut_set(node_set)
        return frozenset(
            link.id for link in self.links if link.head in members and link.tail not in members
        )

    def _checked_cut_set(self, node_set: Iterable[NodeId]) -> frozenset[NodeId]:
        members = frozenset(node_set)
        for v in members:
            if v not in self.node_kind:
                raise DanglingEndpoint(-1, v)
            if self.node_kind[v] is NodeKind.DESTINATION:
                raise DestinationInU(v)
        return members

    def __repr__(self) -> str:
        return (
            f"FlowNetwork({len(self.nodes)} nodes, {len(self.links)} links, "
            f"origins={list(self.origins)}, destinations={list(self.destinations)})"
        )


def build_network(nodes: Iterable[NodeId], links: Sequence[Link]) -> FlowNetwork:
    """Validate and assemble a :class:`FlowNetwork`.

    Checks, in order: unique node and link ids, endpoints exist, positive
    parameters, no self-loops, no isolated nodes, at least one destination,
    and a directed path from every node to a destination (reverse BFS from
    the destination set).
    """
    node_tuple = tuple(nodes)
    node_set = set(node_tuple)
    if len(node_set) != len(node_tuple):
        raise FlowNetError("duplicate node ids")

    # Links live in a flat indexed list; ids must be exactly 0..n-1 so that
    # density/flow vectors can be indexed by link id everywhere else.
    link_tuple = tuple(sorted(links, key=lambda link: link.id))
    if [link.id for link in link_tuple] != list(range(len(link_tuple))):
        raise FlowNetError("link ids must be the dense range 0..n_links-1")
    for link in link_tuple:
        if link.tail not in node_set:
            raise DanglingEndpoint(link.id, link.tail)
        if link.head not in node_set:
            raise DanglingEndpoint(link.id, link.head)
        if link.lane_count <= 0:
            raise NonPositiveParameter(link.id, "lane_count", link.lane_count)
        if link.max_speed_limit <= 0:
            raise NonPositiveParameter(link.id, "max_speed_limit", link.max_speed_limit)
        if link.tail == link.head:
            raise SelfLoop(link.id, link.tail)

    out_links: dict[NodeId, list[LinkId]] = {v: [] for v in node_tuple}
    in_links: dict[NodeId, list[LinkId]] = {v: [] for v in node_tuple}
    for link in link_tuple:
        out_links[link.tail].append(link.id)
        in_links[link.head].append(link.id)

    node_kind: dict[NodeId, NodeKind] = {}
    for v in node_tuple:
        has_out = bool(out_links[v])
        has_in = bool(in_links[v])
        if not has_out and not has_in:
            raise IsolatedNode(v)
        if not has_out:
            node_kind[v] = NodeKind.DESTINATION
        elif not has_in:
            node_kind[v] = NodeKind.ORIGIN
        else:
            node_kind[v] = NodeKind.INTERMEDIATE

    destinations = [v for v in node_tuple if node_kind[v] is NodeKind.DESTINATION]
    if not destinations:
        raise NoDestination("network has no destination node")

    # Reverse reachability: every node must reach some destination.
    reached = set(destinations)
    queue = deque(destinations)
    while queue:
        w = queue.popleft()
        for link_id in in_links[w]:
            v = link_tuple[link_id].tail
            if v not in reached:
                reached.add(v)
                queue.append(v)
    for v in node_tuple:
        if v not in reached:
            raise UnreachableDestination(v)

    return FlowNetwork(
        node_tuple,
        link_tuple,
        node_kind,
        {v: tuple(ids) for v, ids in out_links.items()},
        {v: tuple(ids) for v, ids in in_links.items()},
    )
