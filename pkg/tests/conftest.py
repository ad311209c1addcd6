"""Shared builders: the worked four-node network, random network generators,
and the vertex-enumeration LP oracle used to gate the simplex."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from flownet import (
    FlowNetError,
    Greenshields,
    Link,
    MaxAlways,
    ProportionalPolicy,
    Scenario,
    build_network,
    build_polytope,
    brute_force_feasible,
    physics_for_link,
)

DIAGRAM = Greenshields()  # v_f = 1, per-lane jam 4, per-lane capacity 1

PAPER_ENDPOINTS = [(1, 2), (1, 3), (2, 4), (2, 3), (3, 4)]
PAPER_LANES_INTACT = [4.0, 4.0, 2.0, 1.0, 6.0]
PAPER_LANES_REDUCED = [4.0, 4.0, 1.0, 1.0, 6.0]
PAPER_INFLOW = {1: 6.0}


def paper_network(reduced: bool):
    lanes = PAPER_LANES_REDUCED if reduced else PAPER_LANES_INTACT
    links = [Link(i, t, h, lanes[i]) for i, (t, h) in enumerate(PAPER_ENDPOINTS)]
    net = build_network([1, 2, 3, 4], links)
    physics = tuple(physics_for_link(link, DIAGRAM) for link in net.links)
    return net, physics


def paper_scenario(reduced: bool, speed_limits=None, **overrides) -> Scenario:
    net, physics = paper_network(reduced)
    if speed_limits is None:
        speed_limits = tuple(MaxAlways() for _ in net.links)
    kwargs = dict(
        network=net,
        physics=physics,
        inflow=dict(PAPER_INFLOW),
        routing=ProportionalPolicy({p.link: p for p in physics}),
        speed_limits=tuple(speed_limits),
        initial_density=np.zeros(len(net.links)),
        dt=0.01,
        horizon=200.0,
        sample_stride=10,
    )
    kwargs.update(overrides)
    return Scenario(**kwargs)


def single_link_scenario(inflow: float, rho0: float = 0.0, **overrides) -> Scenario:
    net = build_network([0, 1], [Link(0, 0, 1, 1.0)])
    physics = (physics_for_link(net.links[0], DIAGRAM),)
    kwargs = dict(
        network=net,
        physics=physics,
        inflow={0: inflow},
        routing=ProportionalPolicy({0: physics[0]}),
        speed_limits=(MaxAlways(),),
        initial_density=np.array([rho0]),
        dt=0.01,
        horizon=60.0,
        sample_stride=10,
    )
    kwargs.update(overrides)
    return Scenario(**kwargs)


def random_flow_network(rng: np.random.Generator, max_nondest: int = 10):
    """Random valid multigraph (cycles and parallel links allowed)."""
    for _ in range(200):
        n_nondest = int(rng.integers(2, max_nondest + 1))
        n_dest = int(rng.integers(1, 3))
        nodes = list(range(n_nondest + n_dest))
        dests = nodes[n_nondest:]
        links = []
        for v in nodes[:n_nondest]:
            n_out = int(rng.integers(1, 4))
            for _ in range(n_out):
                head = int(rng.choice([w for w in nodes if w != v]))
                links.append((v, head))
        for d in dests:
            if not any(head == d for _, head in links):
                tail = int(rng.integers(0, n_nondest))
                links.append((tail, d))
        link_objs = [
            Link(i, t, h, float(rng.uniform(0.5, 4.0))) for i, (t, h) in enumerate(links)
        ]
        try:
            return build_network(nodes, link_objs)
        except FlowNetError:
            continue
    raise AssertionError("could not generate a valid random network")


def random_layered_instance(rng: np.random.Generator):
    """Random acyclic network with a feasible positive inflow (margin 0.75).

    Returns (network, physics, inflow); feasibility holds with the plain
    capacities, i.e. with the sustainable inflows at the congestion
    thresholds.
    """
    for _ in range(200):
        sizes = [int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                 int(rng.integers(0, 3)), int(rng.integers(1, 3))]
        layers, start = [], 0
        for size in sizes:
            layers.append(list(range(start, start + size)))
            start += size
        nodes = list(range(start))
        later = {v: [w for layer in layers[i + 1:] for w in layer]
                 for i, layer in enumerate(layers) for v in layer}
        links = []
        for v in nodes:
            if not later[v]:
                continue
            for _ in range(int(rng.integers(1, 3))):
                links.append((v, int(rng.choice(later[v]))))
        for layer in layers[1:]:
            for w in layer:
                if not any(head == w for _, head in links):
                    earlier = [v for v in nodes if w in later.get(v, [])]
                    links.append((int(rng.choice(earlier)), w))
        link_objs = [
            Link(i, t, h, float(rng.uniform(0.5, 4.0))) for i, (t, h) in enumerate(links)
        ]
        try:
            net = build_network(nodes, link_objs)
        except FlowNetError:
            continue
        physics = tuple(physics_for_link(link, DIAGRAM) for link in net.links)
        lam = {v: float(rng.uniform(0.5, 2.0)) for v in net.origins}
        caps = [p.capacity for p in physics]
        scale = _max_feasible_scale(net, caps, lam)
        if not np.isfinite(scale) or scale <= 0:
            continue
        lam = {v: 0.75 * scale * x for v, x in lam.items()}
        if brute_force_feasible(net, caps, lam).feasible:
            return net, physics, lam
    raise AssertionError("could not generate a feasible random instance")


def _max_feasible_scale(net, caps, lam) -> float:
    """Largest gamma with gamma * lam feasible: min cut/inflow over loaded cuts."""
    nondest = list(net.non_destinations)
    best = np.inf
    for mask in range(1, 1 << len(nondest)):
        members = {nondest[i] for i in range(len(nondest)) if mask >> i & 1}
        inside = sum(lam.get(v, 0.0) for v in members)
        if inside <= 0:
            continue
        cut = sum(
            caps[link.id]
            for link in net.links
            if link.tail in members and link.head not in members
        )
        best = min(best, cut / inside)
    return best


def lp_vertex_optimum(polytope, alpha, tol: float = 1e-9) -> float:
    """Brute-force LP oracle: enumerate candidate basic solutions from every
    n-subset of active rows (including nonnegativity), keep the feasible
    best. Independent of the simplex implementation."""
    n = polytope.n_links
    rows = [(np.array(r.coeffs, dtype=float), r.bound) for r in polytope.all_rows()]
    for e in range(n):
        coeffs = np.zeros(n)
        coeffs[e] = -1.0
        rows.append((coeffs, 0.0))
    a_mat = np.array([r[0] for r in rows])
    b_vec = np.array([r[1] for r in rows])
    alpha = np.asarray(alpha, dtype=float)

    best = None
    for combo in itertools.combinations(range(len(rows)), n):
        m = a_mat[list(combo)]
        rhs = b_vec[list(combo)]
        try:
            x = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(x)) or np.max(np.abs(m @ x - rhs)) > 1e-7:
            continue
        if np.all(a_mat @ x <= b_vec + tol):
            value = float(alpha @ x)
            if best is None or value > best:
                best = value
    if best is None:
        raise AssertionError("oracle found no feasible vertex")
    return best


def random_lp_instance(rng: np.random.Generator):
    """Random small allocation polytope (<= 6 links) plus positive weights."""
    for _ in range(200):
        net = random_flow_network(rng, max_nondest=4)
        if len(net.links) > 6:
            continue
        physics = tuple(physics_for_link(link, DIAGRAM) for link in net.links)
        rho_star = [float(rng.uniform(0.0, p.jam_density)) for p in physics]
        phi = [p.max_sustainable_inflow(r) for p, r in zip(physics, rho_star)]
        lam = {v: float(rng.uniform(0.0, 2.0)) for v in net.origins}
        scale = _max_feasible_scale(net, phi, lam)
        if not np.isfinite(scale) or scale <= 0:
            continue
        lam = {v: float(rng.uniform(0.2, 0.95)) * scale * x for v, x in lam.items()}
        try:
            polytope = build_polytope(
                net, {p.link: p for p in physics}, rho_star, lam
            )
        except FlowNetError:
            continue
        alpha = [float(rng.uniform(0.1, 3.0)) for _ in net.links]
        return polytope, alpha
    raise AssertionError("could not generate a random LP instance")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
