"""Scenario files: parsing, validation and the immutable ``Scenario`` model."""

from __future__ import annotations

import copy
import graphlib
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .berth import BerthMode, BerthSpec, SquadSpec
from .core import MINUTES_PER_DAY, MINUTES_PER_YEAR, Side
from .distributions import DistributionSpec
from .network import (
    HOURS_PER_WEEK, ArrivalSpec, Edge, FlagFilter, Node, NodeKind, ProcessGraph,
    ServiceShedSpec, SideFilter,
)
from .screening import ANY_SENSOR, DEFAULT_THREAT, DetectionProfile, Drm, DrmEntry, DrmKey, LoadModifier

PROB_TOL = 1e-9
SHIPPED = ("calais-default",)

_SHED_FIELDS = {"sensor", "servers", "queue_capacity", "service_time", "exit_buffers",
                "applies_to", "full_policy", "drm_scenario"}
_KIND_FIELDS = {
    "Source": {"share"},
    "ServiceShed": _SHED_FIELDS,
    "Jump": {"label"},
}


class ScenarioParseError(Exception):
    """The scenario file is missing or is not valid JSON."""


@dataclass(frozen=True)
class Violation:
    node_id: int | None
    rule: str
    message: str

    def __str__(self):
        where = "scenario" if self.node_id is None else f"node {self.node_id}"
        return f"{where}: [{self.rule}] {self.message}"


class ScenarioValidationError(Exception):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("\n".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class RunSettings:
    horizon: float = MINUTES_PER_YEAR
    seed: int = 1
    replications: int = 20
    sample_interval: float = MINUTES_PER_DAY
    confidence: float = 0.95


@dataclass(frozen=True)
class Scenario:
    name: str
    graph: ProcessGraph
    arrivals: ArrivalSpec
    drm: Drm
    berth: BerthSpec | None
    run: RunSettings
    load_modifier: LoadModifier
    containment: dict
    drm_scenario: str | None
    raw: dict

    @property
    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def with_changes(self, *, horizon=None, seed=None, berth_mode=None,
                     common_tp=None, common_fp=None, **arrivals) -> "Scenario":
        """Rebuilt copy with run, Berth, DRM or arrival settings replaced."""
        raw = copy.deepcopy(self.raw)
        run = raw.setdefault("run", {})
        if horizon is not None:
            run["horizon"] = float(horizon)
        if seed is not None:
            run["seed"] = int(seed)
        if berth_mode is not None:
            if not raw.get("berth"):
                raise ValueError("scenario has no Berth section to switch mode on")
            raw["berth"]["mode"] = BerthMode(berth_mode).value
        if common_tp is not None or common_fp is not None:
            drm = raw.setdefault("drm", {})
            records = drm.get("entries", []) + [drm.setdefault("default", {"tp": 0.9, "fp": 0.05})]
            for rec in records:
                if common_tp is not None:
                    rec["tp"] = float(common_tp)
                if common_fp is not None:
                    rec["fp"] = float(common_fp)
        for key, value in arrivals.items():
            raw["arrivals"][key] = value
        return scenario_from_dict(raw)


def shipped_path(name: str) -> Path:
    return Path(str(resources.files("portsim") / "data" / f"{name}.json"))


def resolve_scenario_path(name_or_path) -> Path:
    """A file path, or the name of a scenario shipped with the package."""
    path = Path(name_or_path)
    if not path.exists() and str(name_or_path) in SHIPPED:
        return shipped_path(str(name_or_path))
    return path


def _schema() -> dict:
    text = (resources.files("portsim") / "data" / "scenario.schema.json").read_text()
    return json.loads(text)


def parse_scenario_file(path) -> tuple[dict, list[Violation]]:
    path = resolve_scenario_path(path)
    duplicates: list[str] = []

    def pairs(items):
        out = {}
        for k, v in items:
            if k in out:
                duplicates.append(k)
            out[k] = v
        return out

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(text, object_pairs_hook=pairs)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{path}: top level must be a JSON object")
    found = [Violation(None, "duplicate-key", f"key {k!r} appears more than once")
             for k in duplicates]
    return data, found


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file.

    Raises ``ScenarioParseError`` for unreadable/invalid JSON and
    ``ScenarioValidationError`` listing every violation found otherwise.
    """
    data, found = parse_scenario_file(path)
    violations = found + validate(data)
    if violations:
        raise ScenarioValidationError(violations)
    return _build(data)


def scenario_from_dict(data: dict) -> Scenario:
    violations = validate(data)
    if violations:
        raise ScenarioValidationError(violations)
    return _build(data)


def validate(data: dict) -> list[Violation]:
    """Every violation in ``data``; an empty list means the scenario is valid."""
    structural = _schema_violations(data)
    if structural:
        return structural
    return _Checker(data).run()


def _schema_violations(data) -> list[Violation]:
    validator = jsonschema.Draft202012Validator(_schema())
    out = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path))):
        path = list(err.absolute_path)
        node_id = None
        if len(path) >= 2 and path[0] == "nodes" and isinstance(path[1], int):
            rec = data["nodes"][path[1]]
            node_id = rec.get("id") if isinstance(rec, dict) else None
        if len(path) >= 2 and path[0] == "edges" and isinstance(path[1], int):
            rec = data["edges"][path[1]]
            node_id = rec.get("from") if isinstance(rec, dict) else None
        where = "/".join(map(str, path)) or "<root>"
        out.append(Violation(node_id, "schema", f"{where}: {err.message}"))
    return out


def _dist(d) -> DistributionSpec:
    return DistributionSpec.from_dict(d)


class _Checker:
    def __init__(self, data):
        self.data = data
        self.v: list[Violation] = []

    def add(self, node_id, rule, message):
        self.v.append(Violation(node_id, rule, message))

    def run(self) -> list[Violation]:
        nodes = self._nodes()
        self._arrivals(nodes)
        self._edges(nodes)
        self._jumps(nodes)
        if not self.v:
            self._structure(nodes)
        self._drm()
        self._berth(nodes)
        return self.v

    def _nodes(self) -> dict[int, dict]:
        nodes: dict[int, dict] = {}
        for rec in self.data["nodes"]:
            nid, kind = rec["id"], rec["kind"]
            if nid in nodes:
                self.add(nid, "duplicate-id", "node id used more than once")
                continue
            nodes[nid] = rec
            allowed = _KIND_FIELDS.get(kind, set())
            for key in set(rec) - {"id", "kind", "name"} - allowed:
                self.add(nid, "field", f"field {key!r} does not apply to a {kind} node")
            if kind == "ServiceShed":
                if "service_time" not in rec:
                    self.add(nid, "field", "service shed needs a service_time")
                else:
                    try:
                        _dist(rec["service_time"])
                    except ValueError as exc:
                        self.add(nid, "distribution", str(exc))
            if kind == "Jump" and not rec.get("label"):
                self.add(nid, "jump", "jump node needs a label")
        kinds = [r["kind"] for r in nodes.values()]
        if "Source" not in kinds:
            self.add(None, "entry", "no Source node")
        if "Sink" not in kinds:
            self.add(None, "exit", "no Sink node")
        if kinds.count("Berth") > 1:
            self.add(None, "berth", "at most one Berth node is supported")
        return nodes

    def _arrivals(self, nodes):
        arr = self.data["arrivals"]
        profile = arr.get("profile")
        if profile is not None and len(profile) != HOURS_PER_WEEK:
            self.add(None, "arrivals", f"profile needs {HOURS_PER_WEEK} hourly factors, got {len(profile)}")
        mix = arr.get("commodity_mix", {"general": 1.0})
        if not mix:
            self.add(None, "arrivals", "commodity_mix is empty")
        elif abs(sum(mix.values()) - 1.0) > PROB_TOL:
            self.add(None, "arrivals", f"commodity_mix sums to {sum(mix.values())!r}, not 1")
        shares = [r.get("share", 1.0) for r in nodes.values() if r["kind"] == "Source"]
        if shares and sum(shares) <= 0:
            self.add(None, "arrivals", "source shares sum to zero")

    def _edges(self, nodes):
        out: dict[int, list[dict]] = {nid: [] for nid in nodes}
        for e in self.data["edges"]:
            src, dst = e["from"], e["to"]
            if src not in nodes:
                self.add(src, "edge", f"edge from unknown node {src}")
                continue
            if dst not in nodes:
                self.add(src, "edge", f"edge to unknown node {dst}")
                continue
            out[src].append(e)
            if nodes[dst]["kind"] == "Source":
                self.add(dst, "source-inbound", f"Source has an inbound edge from {src}")
        self.out = out
        for nid, rec in nodes.items():
            kind, edges = rec["kind"], out[nid]
            if kind in ("Sink", "Jump"):
                if edges:
                    self.add(nid, "outbound", f"{kind} node cannot have outgoing edges")
                continue
            if not edges:
                self.add(nid, "dead-end", f"{kind} node has no outgoing edge")
                continue
            if kind == "ShortestQueueRouter":
                for e in edges:
                    if "p" in e:
                        self.add(nid, "router", "shortest-queue edges take no probability")
                    if nodes[e["to"]]["kind"] != "ServiceShed":
                        self.add(nid, "router", f"shortest-queue target {e['to']} is not a ServiceShed")
                self._totality(nid, edges, weighted=False)
            else:
                self._totality(nid, edges, weighted=True)

    def _totality(self, nid, edges, weighted):
        for side in Side:
            for flagged in (False, True):
                match = [e for e in edges
                         if SideFilter(e.get("side", "Both")).admits(side)
                         and ("flag" not in e or FlagFilter(e["flag"]).admits(flagged))]
                state = f"{side.label}-sided {'flagged' if flagged else 'clear'} lorries"
                if not match:
                    self.add(nid, "side-filter", f"no outgoing edge admits {state}")
                    continue
                if weighted:
                    total = sum(e.get("p", 1.0) for e in match)
                    if abs(total - 1.0) > PROB_TOL:
                        self.add(nid, "probability-sum",
                                 f"branch probabilities for {state} sum to {total!r}, not 1")

    def _jumps(self, nodes):
        jumps = self.data.get("jumps", {})
        for label, target in jumps.items():
            if target not in nodes:
                self.add(None, "jump", f"jump {label!r} targets unknown node {target}")
            elif nodes[target]["kind"] in ("Source", "Jump"):
                self.add(target, "jump", f"jump {label!r} cannot target a {nodes[target]['kind']}")
        for nid, rec in nodes.items():
            if rec["kind"] == "Jump" and rec.get("label") and rec["label"] not in jumps:
                self.add(nid, "jump", f"jump label {rec['label']!r} has no target")

    def _succ(self, nodes):
        jumps = self.data.get("jumps", {})
        succ = {}
        for nid, rec in nodes.items():
            if rec["kind"] == "Jump":
                succ[nid] = [jumps[rec["label"]]]
            else:
                succ[nid] = [e["to"] for e in self.out[nid]]
        return succ

    def _structure(self, nodes):
        succ = self._succ(nodes)
        sources = [n for n, r in nodes.items() if r["kind"] == "Source"]
        seen, stack = set(sources), list(sources)
        while stack:
            for nxt in succ[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        for nid in nodes:
            if nid not in seen:
                self.add(nid, "reachability", "node cannot be reached from any Source")
        for s in sources:
            reach, stack = {s}, [s]
            while stack:
                for nxt in succ[stack.pop()]:
                    if nxt not in reach:
                        reach.add(nxt)
                        stack.append(nxt)
            if not any(nodes[n]["kind"] == "Sink" for n in reach):
                self.add(s, "reachability", "Source cannot reach any Sink")
        berths = {n for n, r in nodes.items() if r["kind"] == "Berth"}
        sorter = graphlib.TopologicalSorter()
        for nid in nodes:
            if nid in berths:
                continue
            sorter.add(nid, *[p for p in succ[nid] if p not in berths])
        try:
            sorter.prepare()
        except graphlib.CycleError as exc:
            cycle = exc.args[1]
            self.add(cycle[0], "acyclic", f"process flow has a cycle: {' -> '.join(map(str, cycle))}")

    def _drm(self):
        drm = self.data.get("drm", {})
        try:
            _build_drm(drm)
        except ValueError as exc:
            self.add(None, "drm", str(exc))
        lm = drm.get("load_modifier")
        if lm is not None:
            try:
                LoadModifier(**lm)
            except (TypeError, ValueError) as exc:
                self.add(None, "drm", f"load_modifier: {exc}")

    def _berth(self, nodes):
        has_node = any(r["kind"] == "Berth" for r in nodes.values())
        berth = self.data.get("berth")
        if has_node and not berth:
            self.add(None, "berth", "scenario has a Berth node but no berth section")
            return
        if not berth:
            return
        try:
            _dist(berth["dwell_time"])
        except ValueError as exc:
            self.add(None, "berth", f"dwell_time: {exc}")
        for i, sq in enumerate(berth.get("squads", [])):
            try:
                d = _dist(sq["check_interval"])
            except ValueError as exc:
                self.add(None, "berth", f"squad {i} check_interval: {exc}")
                continue
            if d.family != "Exponential" and d.lower_bound <= 0:
                self.add(None, "berth", f"squad {i} check_interval must be strictly positive")


def _build_drm(d: dict) -> Drm:
    default = d.get("default", {"tp": 0.9, "fp": 0.05})
    entries = []
    for rec in d.get("entries", []):
        key = DrmKey(
            sensor=rec.get("sensor", ANY_SENSOR if rec["level"] == 1 else ""),
            threat=rec.get("threat", DEFAULT_THREAT),
            commodity=rec.get("commodity"),
            containment=rec.get("containment"),
            wall_thickness=rec.get("wall_thickness"),
            wall_density=rec.get("wall_density"),
            scenario=rec.get("scenario"),
        )
        entries.append(DrmEntry(rec["level"], key, DetectionProfile(rec["tp"], rec["fp"])))
    return Drm(entries, DetectionProfile(default["tp"], default["fp"]))


def _build(data: dict) -> Scenario:
    raw = copy.deepcopy(data)
    nodes = {}
    for rec in raw["nodes"]:
        kind = NodeKind(rec["kind"])
        shed = None
        if kind is NodeKind.SERVICE_SHED:
            shed = ServiceShedSpec(
                sensor=rec.get("sensor"),
                service_time=_dist(rec["service_time"]),
                servers=rec.get("servers", 1),
                queue_capacity=rec.get("queue_capacity"),
                exit_buffers=rec.get("exit_buffers", 2),
                applies_to=SideFilter(rec.get("applies_to", "Both")),
                full_policy=rec.get("full_policy", "block"),
                drm_scenario=rec.get("drm_scenario"),
            )
        nodes[rec["id"]] = Node(rec["id"], kind, rec.get("name", ""), shed,
                                rec.get("label"), float(rec.get("share", 1.0)))
    edges = [
        Edge(e["from"], e["to"], e.get("p"), SideFilter(e.get("side", "Both")),
             FlagFilter(e["flag"]) if "flag" in e else None)
        for e in raw["edges"]
    ]
    graph = ProcessGraph(nodes, edges, dict(raw.get("jumps", {})))

    arr = raw["arrivals"]
    profile = arr.get("profile") or [1.0] * HOURS_PER_WEEK
    arrivals = ArrivalSpec(
        base_rate=float(arr["base_rate"]),
        profile=tuple(float(x) for x in profile),
        clandestine_probability=float(arr.get("clandestine_probability", 0.003)),
        soft_fraction=float(arr.get("soft_fraction", 0.5)),
        commodity_mix=tuple((k, float(v)) for k, v in arr.get("commodity_mix", {"general": 1.0}).items()),
    )

    drm_raw = raw.get("drm", {})
    containment = {Side.SOFT: "soft", Side.HARD: "hard"}
    for label, value in drm_raw.get("containment", {}).items():
        containment[Side.parse(label)] = value

    berth = None
    if raw.get("berth"):
        b = raw["berth"]
        berth = BerthSpec(
            dwell_time=_dist(b["dwell_time"]),
            squads=tuple(
                SquadSpec(_dist(s["check_interval"]), s.get("soft_sensor", "CO2-mobile"),
                          s.get("hard_action", "Visual"))
                for s in b.get("squads", [])
            ),
            mode=BerthMode(b.get("mode", "CheckOnce")),
        )

    run = RunSettings(**{k: v for k, v in raw.get("run", {}).items()})
    if not math.isfinite(run.horizon):
        raise ScenarioValidationError([Violation(None, "run", "horizon must be finite")])
    return Scenario(
        name=raw.get("name", "unnamed"),
        graph=graph,
        arrivals=arrivals,
        drm=_build_drm(drm_raw),
        berth=berth,
        run=run,
        load_modifier=LoadModifier(**drm_raw.get("load_modifier", {})),
        containment=containment,
        drm_scenario=drm_raw.get("scenario"),
        raw=raw,
    )
