"""Closed-form entry counts for spine switches and SACL Gateways.

Two approaches are modeled side by side:

* conventional: one spine entry per prioritized (source workload,
  destination workload) pair, with priorities applied in both directions;
* Service-based: one spine entry per prioritized (client Service, server
  Service) pair, plus per-gateway tables for ID attachment and conntrack.

``graph`` is the set of directed (client Service, server Service) pairs.
The conventional model works on its undirected closure; the Service-based
model uses directed out/in degrees. Self-edges are outside the model.

The measurement helpers at the bottom enumerate concrete entry sets and
diff distribution plans, so formulas can be checked against the simulator.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import AbstractSet, Dict, FrozenSet, Hashable, Iterable, Mapping, Optional, Set, Tuple, Union


class ReductionViolation(AssertionError):
    """es > el on a scenario where every Service on the graph has workloads."""


@dataclass(frozen=True)
class WorkloadChange:
    workload: str


@dataclass(frozen=True)
class ServiceChange:
    service: Hashable


@dataclass(frozen=True)
class PriorityChange:
    client: Hashable
    server: Hashable


Change = Union[WorkloadChange, ServiceChange, PriorityChange]


@dataclass(frozen=True)
class Scenario:
    """Static snapshot of workloads, Services, the priority graph and live connections.

    ``membership`` maps workload -> Service, ``placement`` maps workload ->
    gateway, ``connections`` maps (client workload, server workload) -> count.
    ``services`` may list Services that currently have no workloads.
    """

    membership: Mapping[str, Hashable]
    placement: Mapping[str, str]
    graph: FrozenSet[Tuple[Hashable, Hashable]] = frozenset()
    connections: Mapping[Tuple[str, str], int] = field(default_factory=dict)
    services: FrozenSet[Hashable] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "graph", frozenset(self.graph))
        if set(self.membership) != set(self.placement):
            raise ValueError("membership and placement must cover the same workloads")
        known = set(self.services) | set(self.membership.values())
        object.__setattr__(self, "services", frozenset(known))
        for a, b in self.graph:
            if a not in known or b not in known:
                raise ValueError(f"priority edge ({a}, {b}) names an unknown Service")
        for (c, s), n in self.connections.items():
            if c not in self.membership or s not in self.membership:
                raise ValueError(f"connection ({c}, {s}) names an unknown workload")
            if n < 0:
                raise ValueError("connection counts must be non-negative")
        sizes = Counter(self.membership.values())
        members = defaultdict(list)
        for w, s in self.membership.items():
            members[s].append(w)
        out_n, in_n = defaultdict(set), defaultdict(set)
        for a, b in self.graph:
            out_n[a].add(b)
            in_n[b].add(a)
        object.__setattr__(self, "_sizes", sizes)
        object.__setattr__(self, "_members", members)
        object.__setattr__(self, "_out", out_n)
        object.__setattr__(self, "_in", in_n)

    # W_s, SS_s, CS_s and the undirected neighborhood
    def size(self, s) -> int:
        return self._sizes.get(s, 0)

    def members(self, s):
        return list(self._members.get(s, ()))

    def server_services(self, s) -> Set:
        return self._out.get(s, set())

    def client_services(self, s) -> Set:
        return self._in.get(s, set())

    def neighbors(self, s) -> Set:
        return self.server_services(s) | self.client_services(s)

    def gateway_workloads(self, gateway: str):
        if "_by_gateway" not in self.__dict__:
            by_gw = defaultdict(list)
            for w, g in self.placement.items():
                by_gw[g].append(w)
            object.__setattr__(self, "_by_gateway", by_gw)
        return list(self._by_gateway.get(gateway, ()))

    def incoming_connections(self) -> Dict[str, int]:
        """c_w for every server workload: connections from its client Services only."""
        if "_incoming" not in self.__dict__:
            incoming = defaultdict(int)
            for (c, w), n in self.connections.items():
                if self.membership[c] in self.client_services(self.membership[w]):
                    incoming[w] += n
            object.__setattr__(self, "_incoming", dict(incoming))
        return self._incoming

    @property
    def gateways(self):
        return sorted(set(self.placement.values()))

    # derived scenarios, used to describe changes
    def without_workload(self, w: str) -> "Scenario":
        return Scenario({k: v for k, v in self.membership.items() if k != w},
                        {k: v for k, v in self.placement.items() if k != w},
                        self.graph,
                        {k: n for k, n in self.connections.items() if w not in k},
                        self.services)

    def without_service(self, s) -> "Scenario":
        gone = set(self._members.get(s, ()))
        return Scenario({k: v for k, v in self.membership.items() if k not in gone},
                        {k: v for k, v in self.placement.items() if k not in gone},
                        frozenset(e for e in self.graph if s not in e),
                        {k: n for k, n in self.connections.items() if not gone & set(k)},
                        self.services - {s})

    def with_graph(self, graph) -> "Scenario":
        return Scenario(self.membership, self.placement, graph, self.connections, self.services)


# -- formula primitives -----------------------------------------------------

def elu_workload(server_sizes: Iterable[int], client_sizes: Iterable[int]) -> int:
    """Entries touched by one workload: its destinations plus its sources."""
    return sum(server_sizes) + sum(client_sizes)


def elu_service(per_workload: Iterable[int]) -> int:
    return sum(per_workload)


def elu_pair(size_i: int, size_j: int) -> int:
    """Entries touched in one direction by a priority between two Services."""
    return size_i * size_j


# -- conventional approach ----------------------------------------------------

def conventional_spine_entries(sc: Scenario) -> int:
    """el: for every workload, the sizes of all Services it exchanges prioritized traffic with."""
    return sum(sc.size(s) * sum(sc.size(k) for k in sc.neighbors(s)) for s in sc.services)


def _check_target(sc: Scenario, change: Change) -> None:
    if isinstance(change, WorkloadChange):
        if change.workload not in sc.membership:
            raise KeyError(f"unknown workload {change.workload!r}")
    elif isinstance(change, ServiceChange):
        if change.service not in sc.services:
            raise KeyError(f"unknown Service {change.service!r}")
    elif isinstance(change, PriorityChange):
        for s in (change.client, change.server):
            if s not in sc.services:
                raise KeyError(f"unknown Service {s!r}")
    else:
        raise TypeError(f"unsupported change {change!r}")


def conventional_update_counts(sc: Scenario, change: Change) -> int:
    """elu_w, elu_s or elu_ss (per direction) for ``change``, evaluated on the
    state in which the change target exists."""
    _check_target(sc, change)
    if isinstance(change, WorkloadChange):
        s = sc.membership[change.workload]
        # source and destination roles both range over the undirected neighborhood
        sizes = [sc.size(k) for k in sc.neighbors(s)]
        return elu_workload(sizes, sizes)
    if isinstance(change, ServiceChange):
        s = change.service
        sizes = [sc.size(k) for k in sc.neighbors(s)]
        return elu_service(elu_workload(sizes, sizes) for _ in range(sc.size(s)))
    return elu_pair(sc.size(change.client), sc.size(change.server))


# -- Service-based approach ---------------------------------------------------

def proposed_spine_entries(sc: Scenario) -> int:
    """es: sum of out-degrees in the priority graph."""
    return sum(len(sc.server_services(s)) for s in sc.services)


def gateway_entry_counts(sc: Scenario, gateway: str) -> Tuple[int, int, int]:
    """(escc, escs, ess) for one gateway; escs is the no-overlap worst case."""
    local = sc.gateway_workloads(gateway)
    escc = len(local)
    escs = sum(sc.size(k) for w in local for k in sc.server_services(sc.membership[w]))
    incoming = sc.incoming_connections()
    ess = sum(incoming.get(w, 0) for w in local)
    return escc, escs, ess


def proposed_update_counts(sc: Scenario, change: Change) -> int:
    """esu_w, esu_s or esu_ss for ``change``."""
    _check_target(sc, change)
    if isinstance(change, WorkloadChange):
        return 0
    if isinstance(change, ServiceChange):
        s = change.service
        return len(sc.server_services(s)) + len(sc.client_services(s))
    return 1


# -- report ------------------------------------------------------------------

@dataclass(frozen=True)
class GatewayCounts:
    escc: int
    escs: int
    ess: int

    @property
    def es_g(self) -> int:
        return self.escc + self.escs + self.ess


@dataclass
class EntryReport:
    el: int
    es: int
    gateways: Dict[str, GatewayCounts] = field(default_factory=dict)
    updates: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def rows(self):
        """(device_class, metric, value) triples in a stable order."""
        yield ("spine", "el", self.el)
        yield ("spine", "es", self.es)
        for g in sorted(self.gateways):
            c = self.gateways[g]
            for m in ("escc", "escs", "ess", "es_g"):
                yield (f"gateway:{g}", m, getattr(c, m))
        for name in sorted(self.updates):
            for m in sorted(self.updates[name]):
                yield (f"update:{name}", m, self.updates[name][m])


def update_metrics(sc: Scenario, change: Change) -> Dict[str, int]:
    if isinstance(change, WorkloadChange):
        names = ("elu_w", "esu_w")
    elif isinstance(change, ServiceChange):
        names = ("elu_s", "esu_s")
    else:
        names = ("elu_ss", "esu_ss")
    return {names[0]: conventional_update_counts(sc, change),
            names[1]: proposed_update_counts(sc, change)}


def comparison_report(sc: Scenario, changes: Optional[Mapping[str, Change]] = None,
                      gateways: Optional[Iterable[str]] = None) -> EntryReport:
    el = conventional_spine_entries(sc)
    es = proposed_spine_entries(sc)
    on_graph = {s for e in sc.graph for s in e}
    if all(sc.size(s) > 0 for s in on_graph):
        if es > el:
            raise ReductionViolation(f"es={es} exceeds el={el}")
        if any(sc.size(a) >= 2 and sc.size(b) >= 2 for a, b in sc.graph) and es >= el:
            raise ReductionViolation(f"es={es} not strictly below el={el}")
    gws = sc.gateways if gateways is None else list(gateways)
    report = EntryReport(el, es, {g: GatewayCounts(*gateway_entry_counts(sc, g)) for g in gws})
    for name, change in (changes or {}).items():
        report.updates[name] = update_metrics(sc, change)
    return report


# -- measurement -------------------------------------------------------------

def conventional_entries(sc: Scenario) -> Set[Tuple[str, str]]:
    """Concrete (source workload, destination workload) entries a conventional spine holds."""
    out = set()
    for s in sc.services:
        targets = [w for k in sc.neighbors(s) for w in sc.members(k)]
        for w in sc.members(s):
            out.update((w, t) for t in targets)
    return out


def entry_diff(before: Union[Mapping, AbstractSet], after: Union[Mapping, AbstractSet]) -> int:
    """Number of keys added, removed or rewritten between two keyed tables.

    Plain sets count as tables whose entries carry no value.
    """
    if isinstance(before, AbstractSet) and isinstance(after, AbstractSet):
        return len(before ^ after)
    common = before.keys() & after.keys()
    return len(before.keys() ^ after.keys()) + sum(1 for k in common if before[k] != after[k])


def switch_plan_diff(before, after, switch_id: str) -> int:
    """Entries touched on one switch between two distribution plans."""
    a = {r.pair: r for r in before.switch_entries.get(switch_id, ())}
    b = {r.pair: r for r in after.switch_entries.get(switch_id, ())}
    return entry_diff(a, b)


def scenario_from_controller(controller, connections: Optional[Mapping[Tuple[str, str], int]] = None,
                             rules=None) -> Scenario:
    """Snapshot a controller's state; the graph is every compiled Service pair."""
    if rules is None:
        rules = controller.rules()
    membership = {wid: controller.services[w.labels].sacl_id for wid, w in controller.workloads.items()}
    placement = {wid: w.gateway_id for wid, w in controller.workloads.items()}
    return Scenario(membership, placement, frozenset(r.pair for r in rules),
                    dict(connections or {}), frozenset(s.sacl_id for s in controller.services.values()))
