"""Local routing policies and their empirical checkers.

A routing policy is, per node, a pure function of the current densities of
the node's outgoing links and the node's scalar inflow; it returns the flow
routed to each outgoing link. Valid policies conserve flow whenever at least
one outgoing link is below jam density, and never route onto a jammed link.

A policy is *congestion responsive at a density profile* ``rho_star`` when,
for any outgoing link whose density is at or above its ``rho_star`` entry,
the routed flow stays within the link's maximum sustainable inflow, provided
the node inflow itself is within the total sustainable inflow of its
outgoing links. The built-in proportional policy has this property at every
profile by construction; :func:`check_congestion_aware` certifies it (or
exposes a counterexample) by corner-and-random sampling, since the property
quantifies over a continuum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import FlowNetError
from .fundamental import LinkPhysics
from .network import FlowNetwork, LinkId, NodeId

# Sustainable inflows below this are treated as zero in the proportional
# denominator to avoid division blowup next to jam density.
_PHI_FLOOR = 1e-12

_REL_TOL = 1e-9


class AllLinksJammed(FlowNetError):
    """Every outgoing link of the node is at jam density; nothing can be routed."""

    def __init__(self, node: NodeId):
        super().__init__(f"all outgoing links of node {node} are jammed")
        self.node = node


class RoutingPolicy(Protocol):
    """Per-node split of the node inflow across its outgoing links."""

    def route(
        self, node: NodeId, out_links: Sequence[LinkId], densities: Sequence[float], inflow: float
    ) -> list[float]: ...


def proportional_split(phis: Sequence[float], inflow: float) -> list[float]:
    """Split ``inflow`` proportionally to the sustainable inflows ``phis``.

    Raises :class:`AllLinksJammed` when the denominator underflows (all
    entries at or below the floor).
    """
    floored = [phi if phi > _PHI_FLOOR else 0.0 for phi in phis]
    total = sum(floored)
    if total <= 0.0:
        raise AllLinksJammed(-1)
    return [inflow * phi / total for phi in floored]


class ProportionalPolicy:
    """Route inflow in proportion to each outgoing link's maximum sustainable inflow.

    Conserves flow for any inflow, routes exactly zero to jammed links, and
    is congestion responsive at every density profile.
    """

    def __init__(self, physics: Mapping[LinkId, LinkPhysics]):
        self.physics = physics

    def route(
        self, node: NodeId, out_links: Sequence[LinkId], densities: Sequence[float], inflow: float
    ) -> list[float]:
        phis = [self.physics[e].max_sustainable_inflow(rho) for e, rho in zip(out_links, densities)]
        try:
            return proportional_split(phis, inflow)
        except AllLinksJammed:
            raise AllLinksJammed(node) from None


class BrokenEqualSplit:
    """Demo policy that ignores densities entirely: equal split, always.

    Violates jam exclusion and congestion responsiveness; exists so the
    checkers have something real to catch.
    """

    def __init__(self, physics: Mapping[LinkId, LinkPhysics]):
        self.physics = physics

    def route(
        self, node: NodeId, out_links: Sequence[LinkId], densities: Sequence[float], inflow: float
    ) -> list[float]:
        n = len(out_links)
        return [inflow / n] * n


@dataclass
class ConservationReport:
    """Outcome of sampling a policy for flow conservation and jam exclusion."""

    node: NodeId
    samples: int
    passed: bool
    failure: str | None = None
    profile: tuple[float, ...] | None = None
    inflow: float | None = None
    residual: float | None = None


@dataclass
class AwarenessViolation:
    node: NodeId
    profile: tuple[float, ...]
    inflow: float
    link: LinkId
    routed: float
    bound: float


@dataclass
class AwarenessReport:
    """Outcome of sampling a policy for congestion responsiveness at a profile."""

    checked_profile: tuple[float, ...]
    samples: int
    violations: list[AwarenessViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def _node_sample_profiles(
    physics: Sequence[LinkPhysics], rng: np.random.Generator, samples: int, base: Sequence[float]
) -> list[list[float]]:
    """Corner profiles first (base profile, one link near jam, all but one near jam),
    then uniform random fills up to ``samples`` profiles."""
    n = len(physics)
    jam = [p.jam_density for p in physics]
    eps = 1e-9
    profiles: list[list[float]] = [list(base)]
    for i in range(n):
        corner = list(base)
        corner[i] = jam[i] - eps
        profiles.append(corner)
        near_jam = [jam[j] - eps for j in range(n)]
        near_jam[i] = base[i]
        profiles.append(near_jam)
    while len(profiles) < samples:
        profiles.append([rng.uniform(0.0, jam[i]) for i in range(n)])
    return profiles[:samples]


def check_conservation(
    policy: RoutingPolicy,
    node: NodeId,
    out_links: Sequence[LinkId],
    physics: Mapping[LinkId, LinkPhysics],
    samples: int = 100,
    seed: int = 0,
) -> ConservationReport:
    """Sample (densities, inflow) pairs and verify conservation and jam exclusion.

    Conservation is checked to relative 1e-9 whenever at least one outgoing
    link is below jam; routed flow on a link at exact jam density must be
    exactly zero. Boundary profiles (all zero, each single link jammed, all
    jammed but one) are always included.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    phys = [physics[e] for e in out_links]
    jam = [p.jam_density for p in phys]
    n = len(out_links)

    profiles: list[list[float]] = [[0.0] * n]
    for i in range(n):
        one_jammed = [0.0] * n
        one_jammed[i] = jam[i]
        profiles.append(one_jammed)
        all_but_one = list(jam)
        all_but_one[i] = 0.5 * phys[i].critical_density
        profiles.append(all_but_one)
    while len(profiles) < samples:
        profiles.append([rng.uniform(0.0, jam[i]) for i in range(n)])

    checked = 0
    for profile in profiles[:samples]:
        for inflow in (0.0, 1.0, float(rng.uniform(0.0, 4.0 * sum(p.capacity for p in phys)))):
            all_jammed = all(rho >= j for rho, j in zip(profile, jam))
            if all_jammed:
                continue
            try:
                routed = policy.route(node, out_links, profile, inflow)
            except AllLinksJammed:
                return ConservationReport(
                    node, checked, False,
                    failure="policy raised AllLinksJammed with an operational link present",
                    profile=tuple(profile), inflow=inflow,
                )
            checked += 1
            for rho, j, r, e in zip(profile, jam, routed, out_links):
                if rho >= j and r != 0.0:
                    return ConservationReport(
                        node, checked, False,
                        failure=f"nonzero flow {r} routed to jammed link {e}",
                        profile=tuple(profile), inflow=inflow, residual=r,
                    )
                if r < 0.0:
                    return ConservationReport(
                        node, checked, False,
                        failure=f"negative flow {r} routed to link {e}",
                        profile=tuple(profile), inflow=inflow, residual=r,
                    )
            residual = abs(sum(routed) - inflow)
            if residual > _REL_TOL * max(1.0, abs(inflow)):
                return ConservationReport(
                    node, checked, False,
                    failure="routed flows do not sum to the node inflow",
                    profile=tuple(profile), inflow=inflow, residual=residual,
                )
    return ConservationReport(node, checked, True)


def check_congestion_aware(
    policy: RoutingPolicy,
    network: FlowNetwork,
    physics: Mapping[LinkId, LinkPhysics],
    rho_star: Mapping[LinkId, float],
    samples: int = 1000,
    seed: int = 0,
) -> AwarenessReport:
    """Sample every non-destination node for congestion responsiveness at ``rho_star``.

    For each sampled density profile and each inflow within the total
    sustainable inflow of the node's outgoing links, any link at or above its
    ``rho_star`` density must receive at most its maximum sustainable inflow
    (to relative 1e-9). Inflows beyond the sustainable total are outside the
    property and are not sampled.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    report = AwarenessReport(
        checked_profile=tuple(rho_star[link.id] for link in network.links),
        samples=0,
    )
    for node in network.non_destinations:
        out_links = network.outgoing(node)
        phys = [physics[e] for e in out_links]
        base = [min(rho_star[e], p.jam_density) for e, p in zip(out_links, phys)]
        for profile in _node_sample_profiles(phys, rng, samples, base):
            phi = [p.max_sustainable_inflow(rho) for p, rho in zip(phys, profile)]
            phi_total = sum(phi)
            for inflow in (phi_total, float(rng.uniform(0.0, phi_total))):
                try:
                    routed = policy.route(node, out_links, profile, inflow)
                except AllLinksJammed:
                    continue
                report.samples += 1
                for e, rho, r, bound, star in zip(out_links, profile, routed, phi, base):
                    if rho >= star and r > bound * (1.0 + _REL_TOL) + 1e-15:
                        report.violations.append(
                            AwarenessViolation(
                                node=node, profile=tuple(profile), inflow=inflow,
                                link=e, routed=r, bound=bound,
                            )
                        )
    return report
