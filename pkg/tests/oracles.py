"""Brute-force reference computations used by the tests.

Nothing here calls the closed-form entry model. Services are identified
by their label dictionaries (frozen), selectors are re-evaluated from
scratch, and every count comes from enumerating concrete objects.
"""

from __future__ import annotations

from collections import Counter
from itertools import product


def service_key(w):
    return frozenset(w.labels.as_dict().items())


def selector_holds(sel, labels: dict) -> bool:
    v = labels.get(sel.key)
    if sel.operator.value == "in":
        return v is not None and v in sel.values
    return v is None or v not in sel.values


def matches(selectors, labels: dict) -> bool:
    return all(selector_holds(s, labels) for s in selectors)


def priority_graph(workloads, policies):
    """Directed Service pairs any policy relates, found by trying every workload pair."""
    services = {service_key(w): dict(service_key(w)) for w in workloads}
    edges = set()
    for p in policies:
        for a, la in services.items():
            if not matches(p.client_selectors, la):
                continue
            for b, lb in services.items():
                if matches(p.server_selectors, lb):
                    edges.add((a, b))
    return edges


def conventional_entries(workloads, graph):
    """Every ordered workload pair whose Services are related in either direction."""
    und = graph | {(b, a) for a, b in graph}
    return {(x.workload_id, y.workload_id) for x, y in product(workloads, workloads)
            if (service_key(x), service_key(y)) in und}


def el(workloads, graph) -> int:
    return len(conventional_entries(workloads, graph))


def es(graph) -> int:
    return len(graph)


def gateway_counts(workloads, graph, connections, gateway):
    """(escc, escs worst case, escs deduplicated, ess) for one gateway."""
    local = [w for w in workloads if w.gateway_id == gateway]
    size = Counter(service_key(w) for w in workloads)
    escc = len(local)
    worst = 0
    concrete = set()
    for w in local:
        for a, b in graph:
            if a == service_key(w):
                worst += size[b]
                concrete.update((x.ip, x.listen_port) for x in workloads
                                if service_key(x) == b and x.listen_port is not None)
    by_id = {w.workload_id: w for w in workloads}
    ess = sum(n for (c, s), n in connections.items()
              if by_id[s].gateway_id == gateway
              and (service_key(by_id[c]), service_key(by_id[s])) in graph)
    return escc, worst, len(concrete), ess


def non_overlapping(workloads, graph, gateway) -> bool:
    """True when the worst-case escs assumption holds exactly on ``gateway``:
    no server Service is reached twice and every member listens on a port."""
    local = [w for w in workloads if w.gateway_id == gateway]
    reached = [b for w in local for a, b in graph if a == service_key(w)]
    if len(reached) != len(set(reached)):
        return False
    return all(x.listen_port is not None for x in workloads if service_key(x) in set(reached))


def entries_diff(before: set, after: set) -> int:
    return len(before ^ after)
