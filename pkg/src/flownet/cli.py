"""Command-line front end: simulate, feasibility, allocate, verify-routing.

Exit codes (shared across subcommands):

* 0 — transferring / feasible / clean
* 1 — input error (bad arguments, unreadable or invalid scenario)
* 2 — non-transferring / infeasible / routing violations found
* 3 — undetermined verdict

Traces are plain CSV (columns ``t, link_id, rho, u, flow, failed``) with a
companion ``<trace>.summary`` file of ``key: value`` lines, so results stay
greppable and plottable with any external tool.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .allocation import InfeasibleInflow, allocate, build_polytope, with_policies
from .dynamics import VerdictKind, classify, mass_residual, simulate, throughput
from .errors import FlowNetError
from .feasibility import is_feasible
from .routing import check_congestion_aware, check_conservation
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    load_scenario,
    resolve_scenario_path,
)

_VERDICT_EXIT = {
    VerdictKind.TRANSFERRING: 0,
    VerdictKind.NON_TRANSFERRING: 2,
    VerdictKind.UNDETERMINED: 3,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; remap to 1 (2 means non-transferring here)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load(scenario_arg: str, overlay_arg: str | None = None) -> ScenarioConfig:
    overlay = None
    if overlay_arg is not None:
        text = sys.stdin.read() if overlay_arg == "-" else Path(overlay_arg).read_text("utf-8")
        overlay = yaml.safe_load(text)
        if overlay is not None and not isinstance(overlay, dict):
            raise ScenarioError("overlay must be a YAML mapping")
    return load_scenario(resolve_scenario_path(scenario_arg), overlay=overlay)


def _write_trace(path: Path, trace) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("t,link_id,rho,u,flow,failed\n")
        failed_at = {event.link: event.time for event in trace.failures}
        for row, t in enumerate(trace.times):
            for e in range(trace.rho.shape[1]):
                failed = int(e in failed_at and failed_at[e] <= t + 1e-12)
                handle.write(
                    f"{t:.6f},{e},{trace.rho[row, e]:.9g},{trace.speed[row, e]:.9g},"
                    f"{trace.outflow[row, e]:.9g},{failed}\n"
                )


def cmd_simulate(scenario_arg: str, out: str | None, overlay: str | None = None) -> int:
    config = _load(scenario_arg, overlay)
    trace = simulate(config.scenario)
    verdict = classify(trace, epsilon_rel=config.epsilon_rel, window=config.effective_window)
    residual = mass_residual(trace)

    out_path = Path(out) if out else Path(f"{config.name}.trace.csv")
    _write_trace(out_path, trace)

    lines = [
        f"scenario: {config.name}",
        f"verdict: {verdict.kind.value}",
        f"origin: {verdict.origin if verdict.origin is not None else '-'}",
        f"throughput: {verdict.throughput:.9g}",
        f"total_inflow: {verdict.demand:.9g}",
        f"window: {config.effective_window:.9g}",
        f"epsilon_rel: {config.epsilon_rel:.9g}",
        f"failures: {len(trace.failures)}",
        f"mass_residual_max: {float(np.max(np.abs(residual))):.6g}",
        f"horizon: {trace.horizon:.9g}",
        f"dt: {config.scenario.dt:.9g}",
        f"samples: {len(trace.times)}",
        f"trace: {out_path}",
    ]
    lines.extend(
        f"failure: link={event.link} time={event.time:.6f}" for event in trace.failures
    )
    code = _VERDICT_EXIT[verdict.kind]
    lines.append(f"exit_code: {code}")
    summary = "\n".join(lines)
    Path(f"{out_path}.summary").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return code


def cmd_feasibility(scenario_arg: str) -> int:
    config = _load(scenario_arg)
    scenario = config.scenario
    capacities = [p.capacity for p in scenario.physics]
    result = is_feasible(scenario.network, capacities, scenario.inflow)
    print(f"scenario: {config.name}")
    print(f"feasible: {'yes' if result.feasible else 'no'}")
    print(f"max_flow: {result.max_flow_value:.9g}")
    print(f"total_inflow: {scenario.total_inflow:.9g}")
    print(f"min_slack: {result.min_slack:.9g}")
    print(f"witness_cut: {sorted(result.witness_cut)}")
    return 0 if result.feasible else 2


def cmd_allocate(scenario_arg: str, mode: str = "feedback") -> int:
    config = _load(scenario_arg)
    scenario = config.scenario
    physics = {p.link: p for p in scenario.physics}
    try:
        polytope = build_polytope(
            scenario.network, physics, list(config.rho_star), scenario.inflow
        )
        result = with_policies(allocate(polytope, list(config.alpha)), mode)
    except InfeasibleInflow as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        print(f"witness_cut: {sorted(exc.witness_cut)}", file=sys.stderr)
        return 2

    header = [
        f"# capacity allocation for scenario '{config.name}'",
        f"# objective: {result.objective:.9g}" + (" (maybe non-unique)" if result.maybe_nonunique else ""),
    ]
    for link in scenario.network.links:
        header.append(
            f"# link {link.id} ({link.tail}->{link.head}): "
            f"target {result.f_star[link.id]:.9g} of capacity {physics[link.id].capacity:.9g}"
        )
    fragment = {
        "speed_limits": {
            "mode": mode,
            "targets": {e: float(t) for e, t in enumerate(result.f_star)},
        }
    }
    print("\n".join(header))
    print(yaml.safe_dump(fragment, sort_keys=False), end="")
    return 0


def cmd_verify_routing(scenario_arg: str, samples: int) -> int:
    if samples <= 0:
        print("error: --samples must be a positive integer", file=sys.stderr)
        return 1
    config = _load(scenario_arg)
    scenario = config.scenario
    network = scenario.network
    physics = {p.link: p for p in scenario.physics}
    rho_star = {e: float(config.rho_star[e]) for e in range(len(network.links))}

    print(f"scenario: {config.name}")
    print(f"policy: {config.routing_name}")
    clean = True
    for node in network.non_destinations:
        report = check_conservation(
            scenario.routing, node, network.outgoing(node), physics, samples=samples
        )
        status = "ok" if report.passed else f"FAIL ({report.failure})"
        print(f"conservation node={node}: {status}")
        clean = clean and report.passed

    awareness = check_congestion_aware(
        scenario.routing, network, physics, rho_star, samples=samples
    )
    print(f"awareness samples: {awareness.samples}")
    print(f"awareness violations: {len(awareness.violations)}")
    for violation in awareness.violations[:10]:
        print(
            f"violation node={violation.node} link={violation.link} "
            f"routed={violation.routed:.6g} bound={violation.bound:.6g} "
            f"inflow={violation.inflow:.6g}"
        )
    clean = clean and awareness.passed
    return 0 if clean else 2


def main(argv: list[str] | None = None) -> int:
    parser = _Parser(prog="flownet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"flownet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario and write trace + summary")
    p_sim.add_argument("scenario", help="scenario file path or bundled scenario name")
    p_sim.add_argument("--out", help="trace CSV path (default: <name>.trace.csv)")
    p_sim.add_argument(
        "--overlay",
        help="YAML fragment whose top-level sections replace the scenario's ('-' for stdin)",
    )

    p_feas = sub.add_parser("feasibility", help="check the external inflow against capacities")
    p_feas.add_argument("scenario")

    p_alloc = sub.add_parser("allocate", help="solve the capacity allocation and emit a fragment")
    p_alloc.add_argument("scenario")
    p_alloc.add_argument("--mode", choices=["feedback", "constant"], default="feedback")

    p_verify = sub.add_parser("verify-routing", help="sample the routing policy's contracts")
    p_verify.add_argument("scenario")
    p_verify.add_argument("--samples", type=int, default=10_000)

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.scenario, args.out, args.overlay)
        if args.command == "feasibility":
            return cmd_feasibility(args.scenario)
        if args.command == "allocate":
            return cmd_allocate(args.scenario, args.mode)
        if args.command == "verify-routing":
            return cmd_verify_routing(args.scenario, args.samples)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 1
    except FlowNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
