"""Scenario files: parse, validate, compile, and serialize back.

A scenario file is a YAML mapping. Unknown keys anywhere are errors; nothing
is silently ignored. The full schema, with defaults in parentheses:

    name: str                      # optional label ("scenario")
    nodes: [int, ...]              # required
    links:                         # required; link ids are list positions
      - tail: int                  # required
        head: int                  # required
        lanes: float               # (1.0)
        max_speed: float           # (diagram free_flow_speed)
    diagram:
      free_flow_speed: float       # (1.0)
      jam_density_unit: float      # (4.0)
    inflow: {node: flow}           # required; keys must be origin nodes
    routing:
      policy: proportional | broken_equal_split    # (proportional)
    speed_limits:
      mode: max | constant | feedback | allocated  # (max)
      targets: {link_id: flow}     # constant/feedback; default = link capacity
      per_link: {link_id: {mode: ..., target: ...}}
    initial_density: float | [floats] | {link_id: float}   # (0.0)
    dt: float                      # (0.01)
    horizon: float                 # (200.0)
    sample_stride: int             # (10)
    window: float                  # (horizon / 2)
    epsilon_rel: float             # (0.02)
    allocation:
      rho_star: critical | float | {link_id: float}  # (critical; scalars are
                                   # per-lane densities, scaled by lane count)
      alpha: float | {link_id: float}                # (1.0)

The defaults above live in :data:`DEFAULTS`; the environment variable
``FLOWNET_DEFAULTS`` may name a YAML file overriding any of the scalar
entries. Scalar ``rho_star`` values are per-lane densities so one number
means the same operating point on every link regardless of its lane count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import allocation as alloc_mod
from .dynamics import Scenario
from .errors import FlowNetError
from .fundamental import (
    ConstantCap,
    FeedbackCap,
    Greenshields,
    LinkPhysics,
    MaxAlways,
    SpeedLimitPolicy,
    physics_for_link,
)
from .network import FlowNetwork, Link, build_network
from .routing import BrokenEqualSplit, ProportionalPolicy


class ScenarioError(FlowNetError):
    """A scenario file failed to parse or validate."""


DEFAULTS: dict[str, Any] = {
    "dt": 0.01,
    "horizon": 200.0,
    "sample_stride": 10,
    "epsilon_rel": 0.02,
    "window": None,  # None -> horizon / 2
    "initial_density": 0.0,
    "routing_policy": "proportional",
    "speed_mode": "max",
    "rho_star": "critical",
    "alpha": 1.0,
    "free_flow_speed": 1.0,
    "jam_density_unit": 4.0,
}

_DEFAULTS_ENV = "FLOWNET_DEFAULTS"

_TOP_KEYS = {
    "name", "nodes", "links", "diagram", "inflow", "routing", "speed_limits",
    "initial_density", "dt", "horizon", "sample_stride", "window",
    "epsilon_rel", "allocation",
}
_LINK_KEYS = {"tail", "head", "lanes", "max_speed"}
_DIAGRAM_KEYS = {"free_flow_speed", "jam_density_unit"}
_ROUTING_KEYS = {"policy"}
_SPEED_KEYS = {"mode", "targets", "per_link"}
_PER_LINK_KEYS = {"mode", "target"}
_ALLOCATION_KEYS = {"rho_star", "alpha"}
_MODES = {"max", "constant", "feedback", "allocated"}


def active_defaults() -> dict[str, Any]:
    """The built-in defaults, overlaid with the ``FLOWNET_DEFAULTS`` file if set."""
    defaults = dict(DEFAULTS)
    path = os.environ.get(_DEFAULTS_ENV)
    if path:
        try:
            with open(path, encoding="utf-8") as handle:
                overrides = yaml.safe_load(handle) or {}
        except OSError as exc:
            raise ScenarioError(f"cannot read {_DEFAULTS_ENV} file {path!r}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ScenarioError(f"{_DEFAULTS_ENV} file {path!r} must contain a mapping")
        for key, value in overrides.items():
            if key not in DEFAULTS:
                raise ScenarioError(f"{_DEFAULTS_ENV} file {path!r}: unknown default {key!r}")
            defaults[key] = value
    return defaults


@dataclass(eq=False)
class ScenarioConfig:
    """A compiled scenario plus the run/report settings that ride along."""

    name: str
    scenario: Scenario
    window: float | None
    epsilon_rel: float
    rho_star: np.ndarray
    alpha: np.ndarray
    speed_mode: str
    routing_name: str

    @property
    def effective_window(self) -> float:
        return self.window if self.window is not None else 0.5 * self.scenario.horizon


def _check_keys(mapping: Mapping, allowed: set[str], where: str) -> None:
    unknown = sorted(str(k) for k in mapping if k not in allowed)
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _require(mapping: Mapping, key: str, where: str):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing required key {key!r}")
    return mapping[key]


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{where}: expected an integer, got {value!r}")
    return value


def _per_link_values(
    value, n_links: int, where: str, scale=None, default: float | None = None
) -> list[float]:
    """Accept scalar / list / {link_id: value} forms; return one float per link."""
    if isinstance(value, dict):
        out = [default] * n_links if default is not None else [None] * n_links
        for key, item in value.items():
            idx = _as_int(key, f"{where} key")
            if not 0 <= idx < n_links:
                raise ScenarioError(f"{where}: link id {idx} out of range")
            out[idx] = _as_number(item, f"{where}[{idx}]")
        if any(v is None for v in out):
            raise ScenarioError(f"{where}: missing entries for some links")
        return [float(v) for v in out]
    if isinstance(value, list):
        if len(value) != n_links:
            raise ScenarioError(f"{where}: expected {n_links} entries, got {len(value)}")
        return [_as_number(v, f"{where}[{i}]") for i, v in enumerate(value)]
    scalar = _as_number(value, where)
    if scale is not None:
        return [scalar * scale(e) for e in range(n_links)]
    return [scalar] * n_links


def parse_document(doc: Mapping, where: str = "scenario") -> ScenarioConfig:
    """Validate a parsed YAML mapping and compile it to a :class:`ScenarioConfig`."""
    if not isinstance(doc, Mapping):
        raise ScenarioError(f"{where}: top level must be a mapping")
    defaults = active_defaults()
    _check_keys(doc, _TOP_KEYS, where)

    name = doc.get("name", "scenario")
    if not isinstance(name, str):
        raise ScenarioError(f"{where}.name: expected a string")

    nodes_raw = _require(doc, "nodes", where)
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise ScenarioError(f"{where}.nodes: expected a nonempty list")
    nodes = [_as_int(v, f"{where}.nodes[{i}]") for i, v in enumerate(nodes_raw)]

    diagram_doc = doc.get("diagram", {}) or {}
    if not isinstance(diagram_doc, Mapping):
        raise ScenarioError(f"{where}.diagram: expected a mapping")
    _check_keys(diagram_doc, _DIAGRAM_KEYS, f"{where}.diagram")
    diagram = Greenshields(
        free_flow_speed=_as_number(
            diagram_doc.get("free_flow_speed", defaults["free_flow_speed"]),
            f"{where}.diagram.free_flow_speed",
        ),
        jam_density_unit=_as_number(
            diagram_doc.get("jam_density_unit", defaults["jam_density_unit"]),
            f"{where}.diagram.jam_density_unit",
        ),
    )

    links_raw = _require(doc, "links", where)
    if not isinstance(links_raw, list) or not links_raw:
        raise ScenarioError(f"{where}.links: expected a nonempty list")
    links: list[Link] = []
    for i, entry in enumerate(links_raw):
        link_where = f"{where}.links[{i}]"
        if not isinstance(entry, Mapping):
            raise ScenarioError(f"{link_where}: expected a mapping")
        _check_keys(entry, _LINK_KEYS, link_where)
        links.append(
            Link(
                id=i,
                tail=_as_int(_require(entry, "tail", link_where), f"{link_where}.tail"),
                head=_as_int(_require(entry, "head", link_where), f"{link_where}.head"),
                lane_count=_as_number(entry.get("lanes", 1.0), f"{link_where}.lanes"),
                max_speed_limit=_as_number(
                    entry.get("max_speed", diagram.free_flow_speed), f"{link_where}.max_speed"
                ),
            )
        )

    try:
        network = build_network(nodes, links)
        physics = tuple(physics_for_link(link, diagram) for link in network.links)
    except (FlowNetError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    n_links = len(links)

    inflow_raw = _require(doc, "inflow", where)
    if inflow_raw is None:
        inflow_raw = {}
    if not isinstance(inflow_raw, Mapping):
        raise ScenarioError(f"{where}.inflow: expected a mapping")
    origins = set(network.origins)
    inflow: dict[int, float] = {}
    for key, value in inflow_raw.items():
        v = _as_int(key, f"{where}.inflow key")
        lam = _as_number(value, f"{where}.inflow[{v}]")
        if v not in origins:
            raise ScenarioError(
                f"{where}.inflow: node {v} is not an origin (external inflow is "
                f"only admitted at origin nodes)"
            )
        if lam < 0:
            raise ScenarioError(f"{where}.inflow[{v}]: must be nonnegative")
        inflow[v] = lam

    routing_doc = doc.get("routing", {}) or {}
    if not isinstance(routing_doc, Mapping):
        raise ScenarioError(f"{where}.routing: expected a mapping")
    _check_keys(routing_doc, _ROUTING_KEYS, f"{where}.routing")
    routing_name = routing_doc.get("policy", defaults["routing_policy"])
    physics_by_id = {p.link: p for p in physics}
    if routing_name == "proportional":
        routing = ProportionalPolicy(physics_by_id)
    elif routing_name == "broken_equal_split":
        routing = BrokenEqualSplit(physics_by_id)
    else:
        raise ScenarioError(f"{where}.routing.policy: unknown policy {routing_name!r}")

    alloc_doc = doc.get("allocation", {}) or {}
    if not isinstance(alloc_doc, Mapping):
        raise ScenarioError(f"{where}.allocation: expected a mapping")
    _check_keys(alloc_doc, _ALLOCATION_KEYS, f"{where}.allocation")
    rho_star_raw = alloc_doc.get("rho_star", defaults["rho_star"])
    if rho_star_raw == "critical":
        rho_star = [physics[e].critical_density for e in range(n_links)]
    else:
        rho_star = _per_link_values(
            rho_star_raw, n_links, f"{where}.allocation.rho_star",
            scale=lambda e: physics[e].lane_count,
        )
    for e, value in enumerate(rho_star):
        if not 0.0 <= value <= physics[e].jam_density:
            raise ScenarioError(
                f"{where}.allocation.rho_star: {value} outside [0, jam] on link {e}"
            )
    alpha = _per_link_values(
        alloc_doc.get("alpha", defaults["alpha"]), n_links, f"{where}.allocation.alpha"
    )
    if any(a <= 0 for a in alpha):
        raise ScenarioError(f"{where}.allocation.alpha: weights must be positive")

    speed_doc = doc.get("speed_limits", {}) or {}
    if not isinstance(speed_doc, Mapping):
        raise ScenarioError(f"{where}.speed_limits: expected a mapping")
    _check_keys(speed_doc, _SPEED_KEYS, f"{where}.speed_limits")
    mode = speed_doc.get("mode", defaults["speed_mode"])
    if mode not in _MODES:
        raise ScenarioError(f"{where}.speed_limits.mode: unknown mode {mode!r}")
    targets_doc = speed_doc.get("targets", {}) or {}
    if not isinstance(targets_doc, Mapping):
        raise ScenarioError(f"{where}.speed_limits.targets: expected a mapping")
    if targets_doc and mode not in ("constant", "feedback"):
        raise ScenarioError(
            f"{where}.speed_limits.targets: only meaningful for constant/feedback modes"
        )
    per_link_doc = speed_doc.get("per_link", {}) or {}
    if not isinstance(per_link_doc, Mapping):
        raise ScenarioError(f"{where}.speed_limits.per_link: expected a mapping")

    def cap_policy(kind: str, target: float, link: int) -> SpeedLimitPolicy:
        if not 0.0 <= target <= physics[link].capacity * (1 + 1e-12):
            raise ScenarioError(
                f"{where}.speed_limits: target {target} outside [0, capacity] on link {link}"
            )
        return ConstantCap(target) if kind == "constant" else FeedbackCap(target)

    if mode == "allocated":
        try:
            polytope = alloc_mod.build_polytope(network, physics_by_id, rho_star, inflow)
            result = alloc_mod.allocate(polytope, alpha)
        except alloc_mod.InfeasibleInflow as exc:
            raise ScenarioError(f"{where}.speed_limits: {exc}") from exc
        policies = list(result.policies)
    elif mode == "max":
        policies = [MaxAlways() for _ in range(n_links)]
    else:
        targets = _per_link_values(
            targets_doc, n_links, f"{where}.speed_limits.targets",
            default=-1.0,
        ) if targets_doc else [-1.0] * n_links
        policies = [
            cap_policy(mode, t if t >= 0 else physics[e].capacity, e)
            for e, t in enumerate(targets)
        ]

    for key, entry in per_link_doc.items():
        e = _as_int(key, f"{where}.speed_limits.per_link key")
        if not 0 <= e < n_links:
            raise ScenarioError(f"{where}.speed_limits.per_link: link id {e} out of range")
        if not isinstance(entry, Mapping):
            raise ScenarioError(f"{where}.speed_limits.per_link[{e}]: expected a mapping")
        _check_keys(entry, _PER_LINK_KEYS, f"{where}.speed_limits.per_link[{e}]")
        link_mode = _require(entry, "mode", f"{where}.speed_limits.per_link[{e}]")
        if link_mode == "max":
            policies[e] = MaxAlways()
        elif link_mode in ("constant", "feedback"):
            target = _as_number(
                entry.get("target", physics[e].capacity),
                f"{where}.speed_limits.per_link[{e}].target",
            )
            policies[e] = cap_policy(link_mode, target, e)
        else:
            raise ScenarioError(
                f"{where}.speed_limits.per_link[{e}].mode: unknown mode {link_mode!r}"
            )

    initial = _per_link_values(
        doc.get("initial_density", defaults["initial_density"]),
        n_links, f"{where}.initial_density",
    )

    dt = _as_number(doc.get("dt", defaults["dt"]), f"{where}.dt")
    horizon = _as_number(doc.get("horizon", defaults["horizon"]), f"{where}.horizon")
    stride = _as_int(doc.get("sample_stride", defaults["sample_stride"]), f"{where}.sample_stride")
    window_raw = doc.get("window", defaults["window"])
    window = None if window_raw is None else _as_number(window_raw, f"{where}.window")
    epsilon_rel = _as_number(doc.get("epsilon_rel", defaults["epsilon_rel"]), f"{where}.epsilon_rel")
    if window is not None and not 0.0 < window <= horizon:
        raise ScenarioError(f"{where}.window: must lie in (0, horizon]")
    if epsilon_rel <= 0.0:
        raise ScenarioError(f"{where}.epsilon_rel: must be positive")

    try:
        scenario = Scenario(
            network=network,
            physics=physics,
            inflow=inflow,
            routing=routing,
            speed_limits=tuple(policies),
            initial_density=np.array(initial),
            dt=dt,
            horizon=horizon,
            sample_stride=stride,
        )
    except FlowNetError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc

    return ScenarioConfig(
        name=name,
        scenario=scenario,
        window=window,
        epsilon_rel=epsilon_rel,
        rho_star=np.array(rho_star),
        alpha=np.array(alpha),
        speed_mode=mode,
        routing_name=routing_name,
    )


def loads(text: str, where: str = "scenario") -> ScenarioConfig:
    """Parse scenario YAML text; syntax errors keep their line/column marks."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    return parse_document(doc, where)


def load_scenario(path: str | Path, overlay: Mapping | None = None) -> ScenarioConfig:
    """Load a scenario file, optionally overlaying a fragment document.

    Overlay keys replace same-named top-level sections (the mechanism the
    allocation command uses to inject a ``speed_limits`` section).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    if overlay:
        if not isinstance(doc, dict):
            raise ScenarioError(f"{path}: top level must be a mapping")
        doc = {**doc, **dict(overlay)}
    return parse_document(doc, where=str(path))


def config_document(config: ScenarioConfig) -> dict:
    """Canonical document for a compiled config; parses back to the same config."""
    scenario = config.scenario
    network = scenario.network
    doc: dict[str, Any] = {
        "name": config.name,
        "nodes": list(network.nodes),
        "links": [
            {
                "tail": link.tail,
                "head": link.head,
                "lanes": float(link.lane_count),
                "max_speed": float(link.max_speed_limit),
            }
            for link in network.links
        ],
        "diagram": {
            "free_flow_speed": float(scenario.physics[0].diagram.free_flow_speed),
            "jam_density_unit": float(scenario.physics[0].diagram.jam_density_unit),
        },
        "inflow": {int(v): float(lam) for v, lam in sorted(scenario.inflow.items())},
        "routing": {"policy": config.routing_name},
        "initial_density": [float(v) for v in scenario.initial_density],
        "dt": float(scenario.dt),
        "horizon": float(scenario.horizon),
        "sample_stride": int(scenario.sample_stride),
        "epsilon_rel": float(config.epsilon_rel),
        "allocation": {
            "rho_star": {e: float(v) for e, v in enumerate(config.rho_star)},
            "alpha": {e: float(a) for e, a in enumerate(config.alpha)},
        },
    }
    if config.window is not None:
        doc["window"] = float(config.window)

    # reconstruct the speed-limit section from the compiled policies so
    # per-link overrides survive the round trip; "allocated" is kept symbolic
    # (re-parsing recomputes the same allocation deterministically)
    if config.speed_mode == "allocated":
        doc["speed_limits"] = {"mode": "allocated"}
    else:
        kinds = {type(policy) for policy in scenario.speed_limits}
        if kinds == {MaxAlways}:
            doc["speed_limits"] = {"mode": "max"}
        elif len(kinds) == 1:
            kind = "constant" if kinds == {ConstantCap} else "feedback"
            doc["speed_limits"] = {
                "mode": kind,
                "targets": {
                    e: float(policy.target)
                    for e, policy in enumerate(scenario.speed_limits)
                },
            }
        else:
            per_link: dict[int, dict] = {}
            for e, policy in enumerate(scenario.speed_limits):
                if isinstance(policy, ConstantCap):
                    per_link[e] = {"mode": "constant", "target": float(policy.target)}
                elif isinstance(policy, FeedbackCap):
                    per_link[e] = {"mode": "feedback", "target": float(policy.target)}
            doc["speed_limits"] = {"mode": "max", "per_link": per_link}
    return doc


def dumps(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config_document(config), sort_keys=False)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (no extension needed)."""
    base = Path(__file__).parent / "scenarios"
    candidate = base / (name if name.endswith(".yaml") else f"{name}.yaml")
    if not candidate.exists():
        available = ", ".join(sorted(p.stem for p in base.glob("*.yaml")))
        raise ScenarioError(f"no bundled scenario {name!r} (available: {available})")
    return candidate


def resolve_scenario_path(arg: str) -> Path:
    """A real file path wins; otherwise fall back to the bundled scenarios."""
    path = Path(arg)
    if path.exists():
        return path
    return bundled_scenario_path(arg)
