"""Scenario files and scenario generators.

A scenario file is YAML with an explicit ``schema_version``. Validation
errors carry the line of the offending node, e.g.
``example.yaml:12: workload 'w3': listen_port must be in 1..65535``.

Instead of listing workloads and policies, a file may name a ``generator``:

* ``assumption``: the per-server assumption used to size gateway tables
  (8 VMs x 16 workloads per server, 15 workloads per Service, each Service
  prioritized towards 2 others, one connection per related workload pair),
  scaled by ``alpha``;
* ``random``: a bounded random scenario driven by ``seed``.
"""

from __future__ import annotations

import ipaddress
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml

from .fabric import Direction, Topology, TopologyError, build_topology
from .gateway import DefaultAction
from .model import (Action, LabelSet, ModelError, Operator, Placement, Policy, Proto,
                    Selector, Workload)

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    def __init__(self, message: str, source: str = "<scenario>", line: Optional[int] = None):
        self.source, self.line = source, line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class FlowSpec:
    name: str
    client: str
    server: str
    src_port: Optional[int] = None
    proto: Proto = Proto.TCP
    directions: Tuple[Direction, ...] = (Direction.FORWARD, Direction.REPLY)
    lid: Optional[int] = None
    payload: bytes = b""


@dataclass(frozen=True)
class ChangeSpec:
    op: str
    workload: Optional[Workload] = None
    workload_id: Optional[str] = None
    labels: Optional[LabelSet] = None
    policy: Optional[Policy] = None
    policy_id: Optional[str] = None

    @property
    def name(self) -> str:
        target = (self.workload.workload_id if self.workload else self.workload_id
                  or (self.policy.policy_id if self.policy else self.policy_id)
                  or (str(self.labels) if self.labels else ""))
        return f"{self.op}:{target}"


CHANGE_OPS = ("add_workload", "remove_workload", "delete_service", "upsert_policy", "delete_policy")


@dataclass
class ScenarioSpec:
    name: str
    topology: Topology
    workloads: List[Workload] = field(default_factory=list)
    policies: List[Policy] = field(default_factory=list)
    connections: Dict[Tuple[str, str], int] = field(default_factory=dict)
    traffic: List[FlowSpec] = field(default_factory=list)
    changes: List[ChangeSpec] = field(default_factory=list)
    default_action: DefaultAction = DefaultAction.DENY
    filter_switches: Optional[List[str]] = None
    generator: Optional[dict] = None


# -- YAML with line numbers ---------------------------------------------------

class _LDict(dict):
    line: int = 0


class _LList(list):
    line: int = 0


def _load_yaml(text: str, source: str):
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(f"YAML syntax error: {getattr(e, 'problem', e)}", source,
                            mark.line + 1 if mark else None) from None
    finally:
        loader.dispose()
    if node is None:
        raise ScenarioError("empty scenario file", source, 1)

    def build(n):
        if isinstance(n, yaml.MappingNode):
            out = _LDict()
            out.line = n.start_mark.line + 1
            for k, v in n.value:
                out[build(k)] = build(v)
            return out
        if isinstance(n, yaml.SequenceNode):
            out = _LList(build(v) for v in n.value)
            out.line = n.start_mark.line + 1
            return out
        return loader.construct_object(n, deep=True)

    return build(node)


class _Ctx:
    def __init__(self, source: str):
        self.source = source

    def fail(self, msg: str, node=None):
        raise ScenarioError(msg, self.source, getattr(node, "line", None))

    def mapping(self, node, what: str) -> dict:
        if not isinstance(node, dict):
            self.fail(f"{what} must be a mapping", node)
        return node

    def seq(self, node, what: str) -> list:
        if node is None:
            return []
        if not isinstance(node, list):
            self.fail(f"{what} must be a list", node)
        return node

    def keys(self, node: dict, what: str, required=(), optional=()):
        missing = [k for k in required if k not in node]
        if missing:
            self.fail(f"{what}: missing {', '.join(missing)}", node)
        extra = sorted(set(node) - set(required) - set(optional), key=str)
        if extra:
            self.fail(f"{what}: unknown field(s) {', '.join(map(str, extra))}", node)

    def int_(self, node, key, what, default=None, minimum=None):
        v = node.get(key, default)
        if v is None:
            return None
        if not isinstance(v, int) or isinstance(v, bool):
            self.fail(f"{what}: {key} must be an integer", node)
        if minimum is not None and v < minimum:
            self.fail(f"{what}: {key} must be >= {minimum}", node)
        return v


def _labels(ctx: _Ctx, node, what) -> LabelSet:
    ctx.mapping(node, f"{what} labels")
    try:
        return LabelSet.of({str(k): str(v) for k, v in node.items()})
    except ModelError as e:
        ctx.fail(f"{what}: {e}", node)


def _workload(ctx: _Ctx, node) -> Workload:
    ctx.mapping(node, "workload")
    ctx.keys(node, "workload", ("id", "labels", "ip", "placement"), ("listen_port", "lid"))
    wid = str(node["id"])
    what = f"workload {wid!r}"
    pl = ctx.mapping(node["placement"], f"{what} placement")
    ctx.keys(pl, f"{what} placement", ("rack", "server"), ("vm",))
    try:
        return Workload(wid, _labels(ctx, node["labels"], what), ipaddress.IPv6Address(str(node["ip"])),
                        Placement(pl["rack"], pl["server"], pl.get("vm", 0)),
                        node.get("listen_port"), node.get("lid"))
    except (ModelError, ValueError) as e:
        ctx.fail(f"{what}: {e}", node)


def _selectors(ctx: _Ctx, node, what) -> Tuple[Selector, ...]:
    out = []
    for s in ctx.seq(node, what):
        ctx.mapping(s, what)
        ctx.keys(s, what, ("key", "op", "values"))
        vals = s["values"]
        if not isinstance(vals, list):
            vals = [vals]
        if s["op"] not in {o.value for o in Operator}:
            ctx.fail(f"{what}: op must be one of {', '.join(o.value for o in Operator)}, got {s['op']!r}", s)
        try:
            out.append(Selector(str(s["key"]), Operator(s["op"]), frozenset(str(v) for v in vals)))
        except (ModelError, ValueError) as e:
            ctx.fail(f"{what}: {e}", s)
    return tuple(out)


def _policy(ctx: _Ctx, node) -> Policy:
    ctx.mapping(node, "policy")
    ctx.keys(node, "policy", ("id", "client", "server"), ("action", "value"))
    pid = str(node["id"])
    what = f"policy {pid!r}"
    client = _selectors(ctx, node["client"], f"{what} client selectors")
    server = _selectors(ctx, node["server"], f"{what} server selectors")
    try:
        return Policy(pid, client, server, Action(node.get("action", "allow")), node.get("value"))
    except (ModelError, ValueError) as e:
        ctx.fail(f"{what}: {e}", node)


def _topology(ctx: _Ctx, node) -> Topology:
    ctx.mapping(node, "topology")
    ctx.keys(node, "topology", ("racks", "servers_per_rack", "leaves", "spines"), ("vms_per_server",))
    try:
        return build_topology(node["racks"], node["servers_per_rack"], node["leaves"], node["spines"],
                              node.get("vms_per_server", 1))
    except TopologyError as e:
        ctx.fail(str(e), node)


def _flow(ctx: _Ctx, node, i) -> FlowSpec:
    ctx.mapping(node, "flow")
    ctx.keys(node, "flow", ("client", "server"), ("name", "src_port", "proto", "directions", "lid", "payload"))
    dirs = node.get("directions", ["forward", "reply"])
    if isinstance(dirs, str):
        dirs = [dirs]
    try:
        return FlowSpec(str(node.get("name", f"flow{i}")), str(node["client"]), str(node["server"]),
                        ctx.int_(node, "src_port", "flow", minimum=1), Proto(node.get("proto", "tcp")),
                        tuple(Direction(d) for d in dirs), ctx.int_(node, "lid", "flow", minimum=0),
                        str(node.get("payload", "")).encode())
    except ValueError as e:
        ctx.fail(f"flow: {e}", node)


def _change(ctx: _Ctx, node) -> ChangeSpec:
    ctx.mapping(node, "change")
    op = node.get("op")
    if op not in CHANGE_OPS:
        ctx.fail(f"change: op must be one of {', '.join(CHANGE_OPS)}", node)
    if op == "add_workload":
        ctx.keys(node, op, ("op", "workload"))
        return ChangeSpec(op, workload=_workload(ctx, node["workload"]))
    if op == "remove_workload":
        ctx.keys(node, op, ("op", "id"))
        return ChangeSpec(op, workload_id=str(node["id"]))
    if op == "delete_service":
        ctx.keys(node, op, ("op", "labels"))
        return ChangeSpec(op, labels=_labels(ctx, node["labels"], "delete_service"))
    if op == "upsert_policy":
        ctx.keys(node, op, ("op", "policy"))
        return ChangeSpec(op, policy=_policy(ctx, node["policy"]))
    ctx.keys(node, op, ("op", "id"))
    return ChangeSpec(op, policy_id=str(node["id"]))


def parse_scenario(text: str, source: str = "<scenario>", scale: Optional[float] = None) -> ScenarioSpec:
    """Parse and validate a scenario document.

    ``scale`` multiplies the ``alpha`` of an assumption-generator scenario;
    it is rejected for scenarios that list their workloads explicitly.
    """
    ctx = _Ctx(source)
    doc = ctx.mapping(_load_yaml(text, source), "scenario")
    ctx.keys(doc, "scenario", ("schema_version",),
             ("name", "topology", "workloads", "policies", "connections", "traffic", "changes",
              "default_action", "filter_switches", "generator"))
    if doc["schema_version"] != SCHEMA_VERSION:
        ctx.fail(f"unsupported schema_version {doc['schema_version']!r} (expected {SCHEMA_VERSION})", doc)
    gen = doc.get("generator")
    if gen is not None:
        ctx.mapping(gen, "generator")
        if gen.get("name") not in GENERATORS:
            ctx.fail(f"generator: name must be one of {', '.join(GENERATORS)}", gen)
        for k in ("workloads", "policies", "connections", "topology"):
            if k in doc:
                ctx.fail(f"{k} cannot be combined with a generator", doc)
        params = {k: v for k, v in gen.items() if k != "name"}
        if scale is not None:
            if gen["name"] != "assumption":
                ctx.fail("--scale only applies to the assumption generator", gen)
            params["alpha"] = params.get("alpha", 1.0) * scale
        try:
            spec = GENERATORS[gen["name"]](**params)
        except (TypeError, ValueError) as e:
            ctx.fail(f"generator: {e}", gen)
        spec.generator = dict(gen)
    else:
        if scale is not None:
            ctx.fail("--scale needs a generator scenario; this one lists its workloads", doc)
        if "topology" not in doc:
            ctx.fail("scenario: missing topology", doc)
        spec = ScenarioSpec(str(doc.get("name", Path(source).stem)), _topology(ctx, doc["topology"]))
        spec.workloads = [_workload(ctx, w) for w in ctx.seq(doc.get("workloads"), "workloads")]
        spec.policies = [_policy(ctx, p) for p in ctx.seq(doc.get("policies"), "policies")]
        for c in ctx.seq(doc.get("connections"), "connections"):
            ctx.mapping(c, "connection")
            ctx.keys(c, "connection", ("client", "server"), ("count",))
            key = (str(c["client"]), str(c["server"]))
            spec.connections[key] = spec.connections.get(key, 0) + ctx.int_(c, "count", "connection", 1, 0)
    if "name" in doc and scale is None:
        spec.name = str(doc["name"])
    spec.traffic = [_flow(ctx, f, i) for i, f in enumerate(ctx.seq(doc.get("traffic"), "traffic"))]
    spec.changes = [_change(ctx, c) for c in ctx.seq(doc.get("changes"), "changes")]
    try:
        spec.default_action = DefaultAction(doc.get("default_action", "deny"))
    except ValueError:
        ctx.fail("default_action must be deny or allow", doc)
    fs = doc.get("filter_switches")
    if fs is not None:
        spec.filter_switches = [str(s) for s in ctx.seq(fs, "filter_switches")]
        unknown = set(spec.filter_switches) - set(spec.topology.switch_ids)
        if unknown:
            ctx.fail(f"filter_switches: unknown switch(es) {', '.join(sorted(unknown))}", fs)
    _check_references(ctx, spec, doc)
    return spec


def _check_references(ctx: _Ctx, spec: ScenarioSpec, doc) -> None:
    topo = spec.topology
    ids = set()
    for node, w in zip(ctx.seq(doc.get("workloads"), "workloads") or [None] * len(spec.workloads), spec.workloads):
        if w.workload_id in ids:
            ctx.fail(f"duplicate workload id {w.workload_id!r}", node)
        ids.add(w.workload_id)
        p = w.placement
        if p.rack >= topo.rack_count or p.server >= topo.servers_per_rack or p.vm >= topo.vms_per_server:
            ctx.fail(f"workload {w.workload_id!r}: placement {p.rack}/{p.server}/{p.vm} is outside the topology",
                     node)
    for node, (c, s) in zip(ctx.seq(doc.get("connections"), "connections") or [None] * len(spec.connections),
                            spec.connections):
        for wid in (c, s):
            if wid not in ids:
                ctx.fail(f"connection names unknown workload {wid!r}", node)
    for node, f in zip(ctx.seq(doc.get("traffic"), "traffic"), spec.traffic):
        for wid in (f.client, f.server):
            if wid not in ids:
                ctx.fail(f"flow {f.name!r} names unknown workload {wid!r}", node)


def load_scenario(path_or_name: str, scale: Optional[float] = None) -> ScenarioSpec:
    """Load a scenario file, or a bundled fixture by name (e.g. ``assumption_alpha1``)."""
    p = Path(path_or_name)
    if not p.exists():
        bundled = resources.files("acila") / "fixtures" / f"{path_or_name}.yaml"
        if not bundled.is_file():
            raise ScenarioError("no such scenario file or bundled fixture", path_or_name)
        return parse_scenario(bundled.read_text(), f"{path_or_name}.yaml", scale)
    try:
        text = p.read_text()
    except OSError as e:
        raise ScenarioError(str(e), str(p)) from None
    return parse_scenario(text, str(p), scale)


def bundled_fixtures() -> List[str]:
    root = resources.files("acila") / "fixtures"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


# -- generators --------------------------------------------------------------

def _ip(*parts: int) -> ipaddress.IPv6Address:
    return ipaddress.IPv6Address("fd00::" + ":".join(f"{p:x}" for p in parts))


def _in(key, *values):
    return (Selector(key, Operator.IN, frozenset(values)),)


def assumption_scenario(alpha: float = 1.0, service_size: int = 15, vms: int = 8,
                        workloads_per_vm: int = 16, connections: int = 1, priority: int = 7,
                        servers_per_rack: int = 2, leaves: int = 4, spines: int = 4) -> ScenarioSpec:
    """Scenario realizing the gateway sizing assumption at scale ``alpha``.

    Each gateway hosts ``floor(vms * workloads_per_vm * alpha)`` workloads, every
    one in a different Service. Services come in two halves of n; Service i is
    prioritized towards ``(i + 1) mod n`` and its twin in the other half, so
    every Service has out- and in-degree 2, no self-edges, and the server
    Services reached from one gateway never overlap.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = math.floor(vms * workloads_per_vm * alpha)
    if n < 2:
        raise ValueError(f"alpha={alpha} leaves fewer than 2 workloads per server")
    if service_size < 1 or connections < 0:
        raise ValueError("service_size must be >= 1 and connections >= 0")
    servers = 2 * service_size
    racks = math.ceil(servers / servers_per_rack)
    topo = build_topology(racks, servers_per_rack, leaves, spines, vms)
    spec = ScenarioSpec(f"assumption_alpha{alpha:g}", topo)

    def svc(i):
        return f"svc{i:05d}"

    for srv in range(servers):
        half = srv // service_size  # servers of the first half host Services 0..n-1
        rack, slot = divmod(srv, servers_per_rack)
        for k in range(n):
            sid = half * n + k
            spec.workloads.append(Workload(
                f"w{srv:03d}-{k:05d}", LabelSet.of(app=svc(sid)), _ip(srv + 1, k + 1),
                Placement(rack, slot, k % vms), listen_port=8080))
    for i in range(2 * n):
        base = (i % n + 1) % n
        spec.policies.append(Policy(f"prio-{svc(i)}", _in("app", svc(i)), _in("app", svc(base), svc(base + n)),
                                    Action.PRIORITY, priority))
    if connections:
        by_service: Dict[int, List[str]] = {}
        for w in spec.workloads:
            by_service.setdefault(int(w.labels.get("app")[3:]), []).append(w.workload_id)
        for i in range(2 * n):
            base = (i % n + 1) % n
            for target in (base, base + n):
                for c in by_service[i]:
                    for s in by_service[target]:
                        spec.connections[(c, s)] = connections
    return spec


def random_scenario(seed: int = 0, max_racks: int = 4, max_servers: int = 4, max_services: int = 6,
                    max_workloads: int = 30, edge_prob: float = 0.35, client_only_prob: float = 0.0,
                    lid_prob: float = 0.0, max_connections: int = 2) -> ScenarioSpec:
    """Bounded random scenario; every Service on the priority graph has workloads."""
    rng = random.Random(seed)
    racks, spr, vms = rng.randint(1, max_racks), rng.randint(1, max_servers), rng.randint(1, 2)
    topo = build_topology(racks, spr, rng.randint(1, 3), rng.randint(1, 3), vms)
    spec = ScenarioSpec(f"random{seed}", topo)
    k = rng.randint(1, max_services)
    n = rng.randint(0, max_workloads)
    tiers = ("web", "app", "db")
    labels = [LabelSet.of(app=f"s{i}", tier=tiers[i % 3]) for i in range(k)]
    lids: Dict[tuple, int] = {}
    for j in range(n):
        place = Placement(rng.randrange(racks), rng.randrange(spr), rng.randrange(vms))
        lid = None
        ip = _ip(place.rack + 1, place.server + 1, j + 1)
        if rng.random() < lid_prob:
            # a LID-marked process shares its VM's address with its siblings
            ip = _ip(place.rack + 1, place.server + 1, 0xF000 + place.vm)
            lid = lids[(place.rack, place.server, place.vm)] = lids.get((place.rack, place.server, place.vm), 0) + 1
        port = None if rng.random() < client_only_prob else 8000 + j
        spec.workloads.append(Workload(f"w{j:02d}", rng.choice(labels), ip, place, port, lid))
    present = sorted({w.labels.get("app") for w in spec.workloads})
    for a in present:
        for b in present:
            if a != b and rng.random() < edge_prob:
                spec.policies.append(Policy(f"p-{a}-{b}", _in("app", a), _in("app", b),
                                            Action.PRIORITY, rng.randint(0, 7)))
    edges = {(p.client_selectors[0].values, p.server_selectors[0].values) for p in spec.policies}
    for c in spec.workloads:
        for s in spec.workloads:
            if s.is_server and (frozenset({c.labels.get("app")}), frozenset({s.labels.get("app")})) in edges:
                cnt = rng.randint(0, max_connections)
                if cnt:
                    spec.connections[(c.workload_id, s.workload_id)] = cnt
    return spec


GENERATORS = {"assumption": assumption_scenario, "random": random_scenario}
