import numpy as np
import pytest

from flownet import (
    ConstantCap,
    FeedbackCap,
    Link,
    allocate,
    build_network,
    build_polytope,
    physics_for_link,
    polytope_membership,
    speed_limits_from_allocation,
)
from flownet.allocation import (
    AllocationPolytope,
    InfeasibleInflow,
    InfeasiblePolytope,
    PolytopeRow,
)
from flownet.errors import FlowNetError

from conftest import (
    DIAGRAM,
    lp_vertex_optimum,
    paper_network,
    random_lp_instance,
)

PAPER_SOLUTION = (2.0, 4.0, 1.0, 1.0, 6.0)


def reduced_polytope():
    net, physics = paper_network(reduced=True)
    rho_star = [p.critical_density for p in physics]
    return build_polytope(net, {p.link: p for p in physics}, rho_star, {1: 6.0})


def test_polytope_rows_reduced_network():
    polytope = reduced_polytope()
    # at the congestion thresholds the sustainable inflows equal capacities
    assert polytope.upper_bounds == (4.0, 4.0, 1.0, 1.0, 6.0)
    labels = {row.label for row in polytope.rows}
    assert labels == {"origin[1]", "balance[2]", "balance[3]"}
    by_label = {row.label: row for row in polytope.rows}
    assert by_label["origin[1]"].coeffs == (-1.0, -1.0, 0.0, 0.0, 0.0)
    assert by_label["origin[1]"].bound == -6.0
    assert by_label["balance[2]"].coeffs == (1.0, 0.0, -1.0, -1.0, 0.0)
    assert by_label["balance[2]"].bound == 0.0


def test_membership_examples():
    polytope = reduced_polytope()
    ok, worst = polytope_membership(polytope, PAPER_SOLUTION)
    assert ok and worst is None
    # pushing 3 through link (1,2) violates the balance row at node 2
    ok, worst = polytope_membership(polytope, (3.0, 4.0, 1.0, 1.0, 6.0))
    assert not ok and worst == "balance[2]"
    # the zero vector starves the loaded origin
    ok, worst = polytope_membership(polytope, (0.0,) * 5)
    assert not ok and worst == "origin[1]"


def test_zero_inflow_polytope_contains_zero():
    net, physics = paper_network(reduced=True)
    rho_star = [p.critical_density for p in physics]
    polytope = build_polytope(net, {p.link: p for p in physics}, rho_star, {})
    ok, _ = polytope_membership(polytope, (0.0,) * 5)
    assert ok


def test_reduced_network_unique_solution_for_many_weights():
    polytope = reduced_polytope()
    rng = np.random.default_rng(11)
    weight_choices = [np.ones(5)] + [rng.uniform(0.05, 5.0, size=5) for _ in range(5)]
    for alpha in weight_choices:
        result = allocate(polytope, alpha)
        assert result.f_star == pytest.approx(PAPER_SOLUTION, abs=1e-9)
        ok, _ = polytope_membership(polytope, result.f_star)
        assert ok


def test_alpha_scaling_leaves_argmax_unchanged():
    polytope = reduced_polytope()
    alpha = [1.3, 0.2, 2.0, 0.7, 1.1]
    base = allocate(polytope, alpha)
    scaled = allocate(polytope, [13.0 * a for a in alpha])
    assert scaled.f_star == base.f_star
    assert scaled.objective == pytest.approx(13.0 * base.objective, rel=1e-12)


def test_single_link_trivial_lp():
    net = build_network([0, 1], [Link(0, 0, 1, 1.0)])
    physics = {0: physics_for_link(net.links[0], DIAGRAM)}
    polytope = build_polytope(net, physics, [physics[0].critical_density], {0: 0.5})
    result = allocate(polytope, [1.0])
    assert result.f_star == pytest.approx((1.0,), abs=1e-12)


def test_intact_zero_inflow_maximal_allocation():
    # with no demand the only binding rows are the balance rows: node 2 caps
    # link (1,2) at the 1+1 outgoing targets, everything else sits at capacity
    net, physics = paper_network(reduced=True)
    rho_star = [p.critical_density for p in physics]
    polytope = build_polytope(net, {p.link: p for p in physics}, rho_star, {})
    result = allocate(polytope, [1.0] * 5)
    assert result.f_star == pytest.approx((2.0, 4.0, 1.0, 1.0, 6.0), abs=1e-9)
    oracle = lp_vertex_optimum(polytope, [1.0] * 5)
    assert result.objective == pytest.approx(oracle, abs=1e-7)


def test_infeasible_inflow_reports_witness():
    net, physics = paper_network(reduced=True)
    rho_star = [p.critical_density for p in physics]
    with pytest.raises(InfeasibleInflow) as err:
        build_polytope(net, {p.link: p for p in physics}, rho_star, {1: 7.0})
    assert err.value.witness_cut == frozenset({1, 2})
    assert err.value.slack == pytest.approx(-1.0, abs=1e-9)


def test_rho_star_above_threshold_tightens_bounds():
    net, physics = paper_network(reduced=True)
    # congest link (1,2): its sustainable inflow drops to f(rho, max speed)
    rho_star = [p.critical_density for p in physics]
    rho_star[0] = 12.0  # f = 12 * (1 - 12/16) = 3 on the 4-lane link
    polytope = build_polytope(net, {p.link: p for p in physics}, rho_star, {1: 6.0})
    assert polytope.upper_bounds[0] == pytest.approx(3.0, abs=1e-12)
    result = allocate(polytope, [1.0] * 5)
    # same optimum: the binding rows are elsewhere
    assert result.f_star == pytest.approx(PAPER_SOLUTION, abs=1e-9)


def test_simplex_matches_vertex_oracle_on_random_instances():
    rng = np.random.default_rng(2718)
    for trial in range(60):
        polytope, alpha = random_lp_instance(rng)
        result = allocate(polytope, alpha)
        oracle = lp_vertex_optimum(polytope, alpha)
        assert result.objective == pytest.approx(oracle, abs=1e-7), f"trial {trial}"
        ok, worst = polytope_membership(polytope, result.f_star)
        assert ok, f"trial {trial}: {worst}"
        # dominance: targets never exceed their sustainable-inflow bounds
        for e, target in enumerate(result.f_star):
            assert target <= polytope.upper_bounds[e] + 1e-9


def test_infeasible_polytope_detected_directly():
    polytope = AllocationPolytope(
        upper_bounds=(1.0,),
        rows=(PolytopeRow((-1.0,), -2.0, "origin[0]"),),  # asks for >= 2 from a 1-cap link
    )
    with pytest.raises(InfeasiblePolytope):
        allocate(polytope, [1.0])


def test_alpha_validation():
    polytope = reduced_polytope()
    with pytest.raises(FlowNetError):
        allocate(polytope, [1.0, 1.0, 0.0, 1.0, 1.0])
    with pytest.raises(FlowNetError):
        allocate(polytope, [1.0, 1.0])


def test_speed_limits_from_allocation_modes():
    polytope = reduced_polytope()
    result = allocate(polytope, [1.0] * 5)
    feedback = speed_limits_from_allocation(result, "feedback")
    assert all(isinstance(p, FeedbackCap) for p in feedback)
    assert [p.target for p in feedback] == pytest.approx(PAPER_SOLUTION)
    constant = speed_limits_from_allocation(result, "constant")
    assert all(isinstance(p, ConstantCap) for p in constant)
    with pytest.raises(FlowNetError):
        speed_limits_from_allocation(result, "warp")
    # default policies on the result are the feedback form
    assert result.policies == feedback
