"""Capacity allocation: pick per-link flow targets realizable by speed limits.

Given a density profile ``rho_star`` at which the routing policy is
congestion responsive, the feasible capacity allocations are the vectors
``f_star >= 0`` with

* ``f_star[e] <= phi_e(rho_star[e])`` on every link (sustainable-inflow cap),
* total outgoing target at each origin at least its external inflow,
* total incoming target at each intermediate node at most its outgoing total.

Maximizing a positively weighted sum over this polytope yields a maximal
allocation; imposing each target with a speed-limit cap then keeps every
density at or below the target's largest matching density, so no link ever
jams and the network keeps transferring (for initial densities at or below
``rho_star``).

The solver is a dense two-phase simplex with Bland's anti-cycling rule;
problems here have a handful of variables and rows, so a self-contained
exact-ish solver beats an external dependency. Its optima are cross-checked
against a vertex-enumeration oracle in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Mapping, Sequence

import numpy as np

from . import feasibility
from .errors import FlowNetError
from .fundamental import ConstantCap, FeedbackCap, LinkPhysics, SpeedLimitPolicy
from .network import FlowNetwork, LinkId, NodeId

_FEAS_TOL = 1e-9
_PIVOT_TOL = 1e-10
_MAX_PIVOTS = 10_000


class InfeasibleInflow(FlowNetError):
    """The external inflow violates some cut of sustainable inflows at rho_star."""

    def __init__(self, witness_cut: frozenset[NodeId], slack: float):
        super().__init__(
            f"external inflow exceeds the sustainable outgoing capacity of the "
            f"node set {sorted(witness_cut)} by {-slack:g}"
        )
        self.witness_cut = witness_cut
        self.slack = slack


class InfeasiblePolytope(FlowNetError):
    """The allocation polytope is empty."""


class NumericalFailure(FlowNetError):
    """The simplex exceeded its pivot cap or returned an infeasible point."""


@dataclass(frozen=True)
class PolytopeRow:
    """One inequality ``coeffs . x <= bound``."""

    coeffs: tuple[float, ...]
    bound: float
    label: str


@dataclass(frozen=True)
class AllocationPolytope:
    """Feasible capacity allocations, as upper bounds plus general rows."""

    upper_bounds: tuple[float, ...]
    rows: tuple[PolytopeRow, ...]

    @property
    def n_links(self) -> int:
        return len(self.upper_bounds)

    def all_rows(self) -> tuple[PolytopeRow, ...]:
        bound_rows = tuple(
            PolytopeRow(
                coeffs=tuple(1.0 if j == e else 0.0 for j in range(self.n_links)),
                bound=ub,
                label=f"capacity[{e}]",
            )
            for e, ub in enumerate(self.upper_bounds)
        )
        return bound_rows + self.rows


@dataclass(frozen=True)
class CapacityAllocation:
    """An optimal allocation plus the speed-limit policies that realize it."""

    f_star: tuple[float, ...]
    alpha: tuple[float, ...]
    objective: float
    policies: tuple[SpeedLimitPolicy, ...]
    maybe_nonunique: bool = False


def build_polytope(
    network: FlowNetwork,
    physics: Mapping[LinkId, LinkPhysics],
    rho_star: Sequence[float],
    inflow: Mapping[NodeId, float],
) -> AllocationPolytope:
    """Assemble the allocation polytope at the profile ``rho_star``.

    Nonemptiness is pre-checked by running the feasibility test with the
    sustainable inflows at ``rho_star`` as capacities; a violated cut raises
    :class:`InfeasibleInflow` with the witness.
    """
    n = len(network.links)
    if len(rho_star) != n:
        raise FlowNetError("rho_star length does not match the link count")
    phi = [physics[e].max_sustainable_inflow(rho_star[e]) for e in range(n)]

    result = feasibility.is_feasible(network, phi, inflow)
    if not result.feasible:
        raise InfeasibleInflow(result.witness_cut, result.min_slack)

    rows: list[PolytopeRow] = []
    for v in network.origins:
        coeffs = [0.0] * n
        for e in network.outgoing(v):
            coeffs[e] = -1.0
        rows.append(PolytopeRow(tuple(coeffs), -float(inflow.get(v, 0.0)), f"origin[{v}]"))
    for v in network.intermediates:
        coeffs = [0.0] * n
        for e in network.incoming(v):
            coeffs[e] += 1.0
        for e in network.outgoing(v):
            coeffs[e] -= 1.0
        rows.append(PolytopeRow(tuple(coeffs), 0.0, f"balance[{v}]"))
    return AllocationPolytope(tuple(phi), tuple(rows))


def polytope_membership(
    polytope: AllocationPolytope, point: Sequence[float], tol: float = _FEAS_TOL
) -> tuple[bool, str | None]:
    """Check all rows (and nonnegativity) to absolute ``tol``; report the worst violation."""
    x = np.asarray(point, dtype=float)
    if x.shape != (polytope.n_links,):
        raise FlowNetError("point dimension does not match the link count")
    worst_label: str | None = None
    worst = tol
    for e in range(polytope.n_links):
        if -x[e] > worst:
            worst = -x[e]
            worst_label = f"nonneg[{e}]"
    for row in polytope.all_rows():
        violation = float(np.dot(row.coeffs, x) - row.bound)
        if violation > worst:
            worst = violation
            worst_label = row.label
    return worst_label is None, worst_label


def _pivot(tableau: np.ndarray, basis: list[int], row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    for i in range(tableau.shape[0]):
        if i != row and tableau[i, col] != 0.0:
            tableau[i] -= tableau[i, col] * tableau[row]
    basis[row] = col


def _run_simplex(tableau: np.ndarray, basis: list[int], cost: np.ndarray) -> np.ndarray:
    """Pivot ``maximize cost . columns`` to optimality with Bland's rule.

    ``tableau`` holds the constraint rows (rhs in the last column) and is
    modified in place; returns the final reduced-cost row.
    """
    m, width = tableau.shape
    reduced = np.array([
        sum(cost[basis[i]] * tableau[i, j] for i in range(m)) - cost[j]
        for j in range(width - 1)
    ])
    for _ in range(_MAX_PIVOTS):
        entering = -1
        for j in range(width - 1):
            if reduced[j] < -_PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            return reduced
        leaving = -1
        best_ratio = np.inf
        for i in range(m):
            coeff = tableau[i, entering]
            if coeff > _PIVOT_TOL:
                ratio = tableau[i, -1] / coeff
                if ratio < best_ratio - _PIVOT_TOL:
                    best_ratio = ratio
                    leaving = i
                elif abs(ratio - best_ratio) <= _PIVOT_TOL and basis[i] < basis[leaving]:
                    leaving = i
        if leaving < 0:
            raise NumericalFailure("unbounded direction in a bounded allocation problem")
        _pivot(tableau, basis, leaving, entering)
        reduced = reduced - reduced[entering] * tableau[leaving, :-1]
    raise NumericalFailure("simplex pivot cap exceeded")


def _simplex_max(
    objective: np.ndarray, a_ub: np.ndarray, b_ub: np.ndarray
) -> tuple[np.ndarray, float, np.ndarray, list[int]]:
    """Maximize ``objective . x`` over ``a_ub @ x <= b_ub``, ``x >= 0``.

    Dense two-phase tableau simplex, Bland's rule throughout. Returns the
    optimal point, the objective value, the final reduced-cost row over the
    structural+slack columns, and the final basis.
    """
    m, n = a_ub.shape
    negative = b_ub < 0.0
    n_art = int(np.count_nonzero(negative))
    # columns: x (n) | slack (m) | artificial (n_art) | rhs
    width = n + m + n_art + 1
    tableau = np.zeros((m, width))
    basis: list[int] = []
    art_col = n + m
    for i in range(m):
        row = np.zeros(width)
        row[:n] = a_ub[i]
        row[n + i] = 1.0
        row[-1] = b_ub[i]
        if negative[i]:
            row = -row
            row[art_col] = 1.0
            basis.append(art_col)
            art_col += 1
        else:
            basis.append(n + i)
        tableau[i] = row

    if n_art:
        phase1_cost = np.zeros(width - 1)
        phase1_cost[n + m :] = -1.0
        _run_simplex(tableau, basis, phase1_cost)
        infeasibility = sum(tableau[i, -1] for i in range(m) if basis[i] >= n + m)
        if infeasibility > 1e-8:
            raise InfeasiblePolytope(f"no feasible point (phase-1 residual {infeasibility:g})")
        # drive leftover zero-valued artificials out of the basis; a row with
        # no eligible pivot column is redundant and gets dropped
        redundant: list[int] = []
        for i in range(m):
            if basis[i] >= n + m:
                for j in range(n + m):
                    if abs(tableau[i, j]) > _PIVOT_TOL:
                        _pivot(tableau, basis, i, j)
                        break
                else:
                    redundant.append(i)
        if redundant:
            keep = [i for i in range(m) if i not in redundant]
            tableau = tableau[keep]
            basis = [basis[i] for i in keep]
            m = len(keep)
        # excise the artificial columns entirely so phase 2 cannot use them
        # (slack columns span n .. n + original row count, even after drops)
        tableau = np.hstack([tableau[:, : n + a_ub.shape[0]], tableau[:, -1:]])

    phase2_cost = np.zeros(tableau.shape[1] - 1)
    phase2_cost[:n] = objective
    reduced = _run_simplex(tableau, basis, phase2_cost)

    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = tableau[i, -1]
    return x, float(objective @ x), reduced, basis


def allocate(polytope: AllocationPolytope, alpha: Sequence[float]) -> CapacityAllocation:
    """Solve the weighted-maximal allocation over ``polytope``.

    ``alpha`` must be componentwise positive. The returned point is verified
    against :func:`polytope_membership`; optimality follows from the simplex
    terminating with no improving column (checked again on the reduced
    costs). With multiple optimal vertices the fixed pivot rule makes the
    selection deterministic and ``maybe_nonunique`` is set.
    """
    n = polytope.n_links
    alpha_arr = np.asarray(alpha, dtype=float)
    if alpha_arr.shape != (n,):
        raise FlowNetError("alpha dimension does not match the link count")
    if np.any(alpha_arr <= 0.0):
        raise FlowNetError("alpha must be componentwise positive")

    rows = polytope.all_rows()
    a_ub = np.array([row.coeffs for row in rows], dtype=float)
    b_ub = np.array([row.bound for row in rows], dtype=float)
    x, objective, reduced, basis = _simplex_max(alpha_arr, a_ub, b_ub)

    member, worst = polytope_membership(polytope, x)
    if not member:
        raise NumericalFailure(f"simplex returned a point violating {worst}")
    if np.any(reduced < -1e-8):
        raise NumericalFailure("simplex stopped with an improving column left")

    basic = set(basis)
    nonbasic_zero = any(
        j not in basic and abs(reduced[j]) <= 1e-9 for j in range(len(reduced))
    )
    f_star = tuple(max(0.0, float(v)) for v in x)
    return CapacityAllocation(
        f_star=f_star,
        alpha=tuple(float(a) for a in alpha_arr),
        objective=objective,
        policies=tuple(FeedbackCap(t) for t in f_star),
        maybe_nonunique=nonbasic_zero,
    )


def speed_limits_from_allocation(
    allocation: CapacityAllocation, mode: Literal["constant", "feedback"] = "feedback"
) -> tuple[SpeedLimitPolicy, ...]:
    """Per-link speed-limit policies imposing the allocation's targets.

    The feedback form allows full speed until the target binds; the constant
    form is density-independent and more conservative. A zero target closes
    the link in either form.
    """
    if mode == "feedback":
        return tuple(FeedbackCap(t) for t in allocation.f_star)
    if mode == "constant":
        return tuple(ConstantCap(t) for t in allocation.f_star)
    raise FlowNetError(f"unknown speed-limit mode {mode!r}")


def with_policies(
    allocation: CapacityAllocation, mode: Literal["constant", "feedback"]
) -> CapacityAllocation:
    return replace(allocation, policies=speed_limits_from_allocation(allocation, mode))
