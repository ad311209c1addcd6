import numpy as np
import pytest

from flownet import (
    BrokenEqualSplit,
    Greenshields,
    Link,
    LinkPhysics,
    ProportionalPolicy,
    build_network,
    check_congestion_aware,
    check_conservation,
    physics_for_link,
    proportional_split,
)
from flownet.routing import AllLinksJammed

from conftest import DIAGRAM, paper_network


def two_link_node(lanes=(1.0, 1.0)):
    net = build_network(
        [0, 1, 2],
        [Link(0, 0, 1, lanes[0]), Link(1, 0, 2, lanes[1])],
    )
    physics = {link.id: physics_for_link(link, DIAGRAM) for link in net.links}
    return net, physics


def test_proportional_split_examples():
    assert proportional_split([1.0, 1.0], 6.0) == [3.0, 3.0]
    assert proportional_split([0.0, 1.0], 5.0) == [0.0, 5.0]
    assert proportional_split([0.75, 0.25], 2.0) == [1.5, 0.5]


def test_proportional_split_all_jammed():
    with pytest.raises(AllLinksJammed):
        proportional_split([0.0, 0.0], 1.0)
    with pytest.raises(AllLinksJammed):
        proportional_split([1e-13, 1e-14], 1.0)


def test_proportional_policy_on_densities():
    net, physics = two_link_node()
    policy = ProportionalPolicy(physics)
    # both empty: equal sustainable inflows, even split
    assert policy.route(0, (0, 1), [0.0, 0.0], 6.0) == [3.0, 3.0]
    # one at jam: everything to the other
    assert policy.route(0, (0, 1), [4.0, 0.0], 5.0) == [0.0, 5.0]
    with pytest.raises(AllLinksJammed):
        policy.route(0, (0, 1), [4.0, 4.0], 1.0)


def test_proportional_scale_equivariance(rng):
    net, physics = two_link_node(lanes=(2.0, 1.0))
    policy = ProportionalPolicy(physics)
    for _ in range(100):
        rho = [rng.uniform(0, physics[0].jam_density), rng.uniform(0, physics[1].jam_density)]
        mu = float(rng.uniform(0.0, 5.0))
        k = float(rng.uniform(0.1, 10.0))
        base = policy.route(0, (0, 1), rho, mu)
        scaled = policy.route(0, (0, 1), rho, k * mu)
        assert scaled == pytest.approx([k * r for r in base], rel=1e-12)


def test_proportional_permutation_invariance(rng):
    net, physics = two_link_node(lanes=(1.0, 1.0))
    policy = ProportionalPolicy(physics)
    for _ in range(100):
        rho = [float(rng.uniform(0, 4.0)), float(rng.uniform(0, 4.0))]
        mu = float(rng.uniform(0.0, 5.0))
        fwd = policy.route(0, (0, 1), rho, mu)
        rev = policy.route(0, (0, 1), rho[::-1], mu)
        assert fwd == pytest.approx(rev[::-1], rel=1e-12)


def test_conservation_proportional_passes():
    net, physics = paper_network(reduced=False)
    policy = ProportionalPolicy({p.link: p for p in physics})
    phys_map = {p.link: p for p in physics}
    for node in net.non_destinations:
        report = check_conservation(policy, node, net.outgoing(node), phys_map, samples=150)
        assert report.passed, report


def test_conservation_catches_half_routing():
    class HalfEach:
        def route(self, node, out_links, densities, inflow):
            return [inflow / 2.0] * len(out_links)

    net = build_network(
        [0, 1, 2, 3],
        [Link(0, 0, 1), Link(1, 0, 2), Link(2, 0, 3)],
    )
    physics = {link.id: physics_for_link(link, DIAGRAM) for link in net.links}
    report = check_conservation(HalfEach(), 0, (0, 1, 2), physics, samples=20)
    assert not report.passed
    assert "sum" in report.failure
    # three links each taking inflow/2 leaves a residual of inflow/2
    assert report.residual == pytest.approx(report.inflow / 2.0, rel=1e-12)


def test_conservation_catches_jam_violation():
    net, physics = two_link_node()
    report = check_conservation(BrokenEqualSplit(physics), 0, (0, 1), physics, samples=20)
    assert not report.passed
    assert "jammed" in report.failure


def test_awareness_proportional_clean():
    net, physics = paper_network(reduced=True)
    phys_map = {p.link: p for p in physics}
    policy = ProportionalPolicy(phys_map)
    for rho_star_scale in (0.0, 0.5, 1.0):
        rho_star = {p.link: rho_star_scale * p.critical_density for p in physics}
        report = check_congestion_aware(
            policy, net, phys_map, rho_star, samples=300, seed=7
        )
        assert report.passed
        assert report.samples > 0


def test_awareness_flags_equal_split():
    net, physics = two_link_node(lanes=(0.5, 1.5))  # capacities 0.5 and 1.5
    policy = BrokenEqualSplit(physics)
    rho_star = {0: 0.0, 1: 0.0}
    report = check_congestion_aware(policy, net, physics, rho_star, samples=50, seed=3)
    assert not report.passed
    # the small link is overfed: mu at its bound (2.0) splits to 1.0 > 0.5
    worst = report.violations[0]
    assert worst.link == 0
    assert worst.routed > worst.bound


def test_awareness_zero_inflow_never_violates():
    net, physics = two_link_node(lanes=(0.5, 1.5))

    class ZeroInflowOnly:
        def route(self, node, out_links, densities, inflow):
            # equal split, but the checker only sees inflow <= sum(phi)
            return [inflow / len(out_links)] * len(out_links)

    rho_star = {0: 0.0, 1: 0.0}
    # with all inflows forced to zero there is nothing to violate
    class AlwaysZero(ZeroInflowOnly):
        def route(self, node, out_links, densities, inflow):
            return [0.0] * len(out_links)

    report = check_congestion_aware(AlwaysZero(), net, physics, rho_star, samples=50)
    assert report.passed


def test_checkers_reject_nonpositive_samples():
    net, physics = two_link_node()
    policy = ProportionalPolicy(physics)
    with pytest.raises(ValueError):
        check_conservation(policy, 0, (0, 1), physics, samples=0)
    with pytest.raises(ValueError):
        check_congestion_aware(policy, net, physics, {0: 0.0, 1: 0.0}, samples=0)
