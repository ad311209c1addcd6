"""Per-link flow model and speed-limit cap policies.

UNIT CONVENTIONS
----------------
Everything is expressed in normalized units on a single-lane basis and then
scaled by the link's lane count ``c``:

* density ``rho``: particles per unit length, in ``[0, c * rho_bar_0]``
* speed ``u``: length per unit time, in ``[0, u_bar]``
* flow: particles per unit time, ``flow = rho * speed``

The per-lane model is a diagram ``(free_flow_speed, jam_density_unit)`` with
a decreasing surface-speed curve ``unit_speed(rho)``; a link with ``c`` lanes
uses ``speed(rho) = unit_speed(rho / c)``, so its flow curve is the unit
curve stretched by ``c`` in both axes: jam density ``c * rho_bar_0``,
congestion threshold ``c * rho_c_0``, capacity ``c * f_bar_0``.

Particles travel at ``min(u, unit_speed(rho / c))`` for speed limit ``u``, so

    flow(rho, u) = rho * min(u, speed_at(rho)).

The default (and only built-in) diagram is the linear Greenshields curve
``unit_speed(rho) = v_f * (1 - rho / rho_bar_0)``, giving the parabolic flow
curve with congestion threshold ``rho_bar_0 / 2`` and per-lane capacity
``v_f * rho_bar_0 / 4``. With the normalized defaults ``v_f = 1`` and
``rho_bar_0 = 4`` the per-lane capacity is exactly 1. Any other unimodal
diagram can be plugged in by subclassing :class:`FundamentalDiagram`; the
generic congestion threshold and the largest-root solver then fall back to
numerical search on the curve.

Two ways to cap a link's throughput at a target ``f_star <= capacity``:

* a constant speed limit ``u = f_star / rho_hat(f_star)`` where ``rho_hat``
  is the largest density at which the uncapped flow equals the target — safe
  for every density but conservative at low densities;
* a feedback limit that allows full speed until the uncapped flow would
  exceed the target and then imposes ``u = f_star / rho``, which clamps the
  flow to exactly ``min(uncapped_flow, f_star)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

from .errors import FlowNetError
from .network import Link, LinkId


class OutOfRange(FlowNetError):
    """A density or speed argument lies outside the link's admissible box."""

    def __init__(self, name: str, value: float, low: float, high: float):
        super().__init__(f"{name}={value!r} outside [{low}, {high}]")
        self.name = name
        self.value = value


class TargetAboveCapacity(FlowNetError):
    """A flow target exceeds the link capacity."""

    def __init__(self, target: float, capacity: float):
        super().__init__(f"flow target {target!r} exceeds capacity {capacity!r}")
        self.target = target
        self.capacity = capacity


_BISECT_TOL = 1e-10  # absolute density tolerance for the generic largest-root solver


class FundamentalDiagram:
    """Per-lane flow-density relation.

    Subclasses provide ``free_flow_speed``, ``jam_density_unit`` and the
    decreasing surface-speed curve :meth:`unit_speed`. The flow curve at the
    free-flow speed limit must be unimodal: strictly increasing up to the
    congestion threshold, strictly decreasing beyond it, zero at both ends.
    """

    free_flow_speed: float
    jam_density_unit: float

    def unit_speed(self, rho: float) -> float:
        """Maximum surface speed at per-lane density ``rho``; decreasing, zero at jam."""
        raise NotImplementedError

    def unit_flow(self, rho: float, u: float) -> float:
        return rho * min(u, self.unit_speed(rho))

    @cached_property
    def critical_density_unit(self) -> float:
        """Per-lane density maximizing the uncapped flow (golden-section search)."""
        lo, hi = 0.0, self.jam_density_unit
        inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = lo, hi
        c = b - inv_phi * (b - a)
        d = a + inv_phi * (b - a)
        for _ in range(200):
            if self.unit_flow(c, self.free_flow_speed) > self.unit_flow(d, self.free_flow_speed):
                b = d
            else:
                a = c
            c = b - inv_phi * (b - a)
            d = a + inv_phi * (b - a)
        return 0.5 * (a + b)

    @cached_property
    def unit_capacity(self) -> float:
        return self.unit_flow(self.critical_density_unit, self.free_flow_speed)

    def rho_hat_unit(self, target: float) -> float:
        """Largest per-lane density whose uncapped flow equals ``target``.

        Bisection on the decreasing branch ``[critical, jam]``; subclasses
        with closed forms should override.
        """
        lo, hi = self.critical_density_unit, self.jam_density_unit
        # unit_flow decreases from unit_capacity to 0 on [lo, hi]
        while hi - lo > _BISECT_TOL:
            mid = 0.5 * (lo + hi)
            if self.unit_flow(mid, self.free_flow_speed) > target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Greenshields(FundamentalDiagram):
    """Linear speed-density curve: ``unit_speed(rho) = v_f * (1 - rho / rho_bar)``."""

    free_flow_speed: float = 1.0
    jam_density_unit: float = 4.0

    def __post_init__(self):
        if self.free_flow_speed <= 0 or self.jam_density_unit <= 0:
            raise ValueError("diagram parameters must be positive")

    def unit_speed(self, rho: float) -> float:
        return self.free_flow_speed * (1.0 - rho / self.jam_density_unit)

    @cached_property
    def critical_density_unit(self) -> float:
        return 0.5 * self.jam_density_unit

    @cached_property
    def unit_capacity(self) -> float:
        return 0.25 * self.free_flow_speed * self.jam_density_unit

    def rho_hat_unit(self, target: float) -> float:
        # larger root of rho * v_f * (1 - rho / rho_bar) = target
        ratio = min(1.0, max(0.0, target / self.unit_capacity))
        return self.critical_density_unit * (1.0 + math.sqrt(1.0 - ratio))


@dataclass(frozen=True)
class LinkPhysics:
    """A diagram bound to one link's lane count and maximum speed limit.

    The maximum speed limit must be at least the surface speed at the
    congestion threshold, otherwise the nominal capacity ``c * f_bar_0``
    would be unreachable even at full speed.
    """

    link: LinkId
    lane_count: float
    max_speed: float
    diagram: FundamentalDiagram

    def __post_init__(self):
        if self.lane_count <= 0:
            raise ValueError(f"link {self.link}: lane_count must be positive")
        if self.max_speed <= 0:
            raise ValueError(f"link {self.link}: max_speed must be positive")
        crit_speed = self.diagram.unit_speed(self.diagram.critical_density_unit)
        if self.max_speed < crit_speed - 1e-12:
            raise ValueError(
                f"link {self.link}: max_speed {self.max_speed} is below the surface "
                f"speed {crit_speed} at the congestion threshold; the nominal "
                f"capacity would be unreachable"
            )

    @property
    def jam_density(self) -> float:
        return self.lane_count * self.diagram.jam_density_unit

    @property
    def critical_density(self) -> float:
        return self.lane_count * self.diagram.critical_density_unit

    @property
    def capacity(self) -> float:
        return self.lane_count * self.diagram.unit_capacity

    def speed_at(self, rho: float) -> float:
        """Surface speed at density ``rho`` (before applying any speed limit)."""
        return self.diagram.unit_speed(rho / self.lane_count)

    def flow(self, rho: float, u: float) -> float:
        """Flow at density ``rho`` under speed limit ``u``."""
        if not 0.0 <= rho <= self.jam_density:
            raise OutOfRange("rho", rho, 0.0, self.jam_density)
        if not 0.0 <= u <= self.max_speed:
            raise OutOfRange("u", u, 0.0, self.max_speed)
        return rho * min(u, self.speed_at(rho))

    def uncapped_flow(self, rho: float) -> float:
        """Flow at the maximum speed limit (no range checks; hot path)."""
        return rho * min(self.max_speed, self.speed_at(rho))

    def max_sustainable_inflow(self, rho: float) -> float:
        """Largest constant inflow that does not drive the link to jam.

        Equals the capacity while the link is uncongested and the current
        uncapped flow once it is congested; zero exactly at jam density.
        """
        if not 0.0 <= rho <= self.jam_density:
            raise OutOfRange("rho", rho, 0.0, self.jam_density)
        if rho <= self.critical_density:
            return self.capacity
        return self.uncapped_flow(rho)

    def rho_hat(self, target: float) -> float:
        """Largest density at which the uncapped flow equals ``target``.

        Lies on the decreasing branch ``[critical_density, jam_density]``.
        """
        capacity = self.capacity
        if target < 0.0 or target > capacity * (1.0 + 1e-12):
            raise TargetAboveCapacity(target, capacity)
        target_unit = min(target / self.lane_count, self.diagram.unit_capacity)
        return self.lane_count * self.diagram.rho_hat_unit(target_unit)

    def constant_speed_limit(self, target: float) -> float:
        """Constant speed limit keeping the flow at or below ``target`` for every density.

        A zero target closes the link (returns 0), the continuous limit of
        ``target / rho_hat(target)``.
        """
        if target == 0.0:
            return 0.0
        u = target / self.rho_hat(target)
        return min(u, self.max_speed)

    def feedback_speed_limit(self, target: float, rho: float) -> float:
        """Density-feedback speed limit realizing ``flow = min(uncapped_flow, target)``.

        Full speed while the uncapped flow is within the target; otherwise
        the limit ``target / rho``, which clamps the flow to the target
        exactly.
        """
        if not 0.0 <= rho <= self.jam_density:
            raise OutOfRange("rho", rho, 0.0, self.jam_density)
        if target < 0.0 or target > self.capacity * (1.0 + 1e-12):
            raise TargetAboveCapacity(target, self.capacity)
        if self.uncapped_flow(rho) <= target:
            return self.max_speed
        return target / rho


def physics_for_link(link: Link, diagram: FundamentalDiagram) -> LinkPhysics:
    return LinkPhysics(
        link=link.id,
        lane_count=link.lane_count,
        max_speed=link.max_speed_limit,
        diagram=diagram,
    )


@dataclass(frozen=True)
class MaxAlways:
    """Always allow the maximum speed limit."""

    def speed(self, physics: LinkPhysics, rho: float) -> float:
        return physics.max_speed


@dataclass(frozen=True)
class ConstantCap:
    """Constant speed limit capping the flow at ``target`` for every density."""

    target: float

    def speed(self, physics: LinkPhysics, rho: float) -> float:
        return physics.constant_speed_limit(self.target)


@dataclass(frozen=True)
class FeedbackCap:
    """Feedback speed limit clamping the flow to ``min(uncapped_flow, target)``."""

    target: float

    def speed(self, physics: LinkPhysics, rho: float) -> float:
        return physics.feedback_speed_limit(self.target, rho)


SpeedLimitPolicy = MaxAlways | ConstantCap | FeedbackCap
