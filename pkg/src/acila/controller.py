"""The controller: workload registration, Service assignment, policy compilation
and distribution plans.

All mutation goes through a single :class:`Controller` instance. Plans are
recomputed in full on every event; incremental update sizes are measured by
diffing two successive plans (see :mod:`acila.entrymodel`).
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

from . import codec
from .gateway import DefaultAction, GatewayTables
from .model import Action, LabelSet, Operator, Policy, Rule, Service, Workload, labelset_matches

log = logging.getLogger(__name__)


class ControllerError(ValueError):
    """A registration or lookup request was rejected."""


def wire_lid(lid: Optional[int]) -> Optional[int]:
    """The LID a gateway reads back once ``lid`` has gone through Hop Limit."""
    return None if lid is None else codec.read_lid(codec.mark_lid(codec.DEFAULT_HOP_LIMIT, lid))


class Assignment(str, Enum):
    ASSIGNED_EXISTING = "assigned_existing"
    CREATED_NEW = "created_new"


class Event(str, Enum):
    SERVICE_CREATED = "service_created"
    SERVICE_DELETED = "service_deleted"
    POLICY_UPSERTED = "policy_upserted"
    POLICY_DELETED = "policy_deleted"
    WORKLOAD_REGISTERED = "workload_registered"
    WORKLOAD_DEREGISTERED = "workload_deregistered"


@dataclass(frozen=True)
class DistributionPlan:
    gateway_entries: Dict[str, GatewayTables] = field(default_factory=dict)
    switch_entries: Dict[str, Tuple[Rule, ...]] = field(default_factory=dict)

    def switch_bytes(self, switch_id: str) -> bytes:
        """Canonical serialization of one switch table, for byte-level comparison."""
        return "\n".join(str(r) for r in self.switch_entries[switch_id]).encode()


def merge_rules(rules: Iterable[Rule]) -> List[Rule]:
    """Collapse rules to one per (client, server) pair.

    Priority wins over allow; among priorities the highest value wins.
    """
    best: Dict[Tuple[int, int], Rule] = {}
    for r in rules:
        cur = best.get(r.pair)
        if cur is None or _rank(r) > _rank(cur):
            best[r.pair] = r
    return [best[k] for k in sorted(best)]


def _rank(r: Rule):
    return (1, r.value) if r.action is Action.PRIORITY else (0, -1)


class Controller:
    def __init__(self, gateway_ids: Iterable[str] = (), switch_ids: Iterable[str] = (),
                 default_action: DefaultAction = DefaultAction.DENY):
        self.gateway_ids = list(dict.fromkeys(gateway_ids))
        self.switch_ids = list(dict.fromkeys(switch_ids))
        self.default_action = DefaultAction(default_action)
        self.services: Dict[LabelSet, Service] = {}
        self.workloads: Dict[str, Workload] = {}
        self.policies: Dict[str, Policy] = {}
        self.next_sacl_id = 1
        self._by_id: Dict[int, Service] = {}
        self._members: Dict[int, Dict[str, Workload]] = {}
        self._servers: Dict[tuple, str] = {}  # (ip, port) -> workload_id
        self._clients: Dict[tuple, str] = {}  # (gateway, ip, lid) -> workload_id
        self._by_label: Dict[tuple, Dict[int, Service]] = {}  # (key, value) -> Services carrying it

    # -- services and workloads -------------------------------------------

    def service(self, sacl_id: int) -> Service:
        try:
            return self._by_id[sacl_id]
        except KeyError:
            raise ControllerError(f"unknown SACL ID {sacl_id}") from None

    def service_of(self, workload_id: str) -> Service:
        return self.services[self.workloads[workload_id].labels]

    def members(self, sacl_id: int) -> List[Workload]:
        return list(self._members[sacl_id].values())

    def ensure_service(self, labels: LabelSet) -> Tuple[Service, Assignment]:
        svc = self.services.get(labels)
        if svc is not None:
            return svc, Assignment.ASSIGNED_EXISTING
        svc = Service(self.next_sacl_id, labels)
        self.next_sacl_id += 1
        self.services[labels] = svc
        self._by_id[svc.sacl_id] = svc
        self._members[svc.sacl_id] = {}
        for lab in labels.labels:
            self._by_label.setdefault((lab.key, lab.value), {})[svc.sacl_id] = svc
        log.debug("created service %d for %s", svc.sacl_id, labels)
        return svc, Assignment.CREATED_NEW

    def register_workload(self, w: Workload) -> Tuple[Service, Assignment]:
        if w.workload_id in self.workloads:
            raise ControllerError(f"workload {w.workload_id!r} is already registered")
        if self.gateway_ids and w.gateway_id not in self.gateway_ids:
            raise ControllerError(f"workload {w.workload_id!r}: no gateway {w.gateway_id!r} in the topology")
        if w.is_server and (w.ip, w.listen_port) in self._servers:
            other = self._servers[(w.ip, w.listen_port)]
            raise ControllerError(
                f"workload {w.workload_id!r}: [{w.ip}]:{w.listen_port} is already served by {other!r}")
        # LIDs equal mod 128 look the same on the wire, so they collide here
        ckey = (w.gateway_id, w.ip, wire_lid(w.lid))
        if ckey in self._clients:
            raise ControllerError(
                f"workload {w.workload_id!r}: client key ({w.ip}, lid={w.lid}) already used by {self._clients[ckey]!r}")
        svc, how = self.ensure_service(w.labels)
        self.workloads[w.workload_id] = w
        self._members[svc.sacl_id][w.workload_id] = w
        self._clients[ckey] = w.workload_id
        if w.is_server:
            self._servers[(w.ip, w.listen_port)] = w.workload_id
        return svc, how

    def deregister_workload(self, workload_id: str) -> Workload:
        w = self.workloads.pop(workload_id, None)
        if w is None:
            raise ControllerError(f"unknown workload {workload_id!r}")
        del self._members[self.services[w.labels].sacl_id][workload_id]
        del self._clients[(w.gateway_id, w.ip, wire_lid(w.lid))]
        if w.is_server:
            del self._servers[(w.ip, w.listen_port)]
        return w

    def delete_service(self, sacl_id: int) -> List[Workload]:
        """Remove a Service together with every workload assigned to it."""
        svc = self.service(sacl_id)
        gone = [self.deregister_workload(wid) for wid in list(self._members[sacl_id])]
        del self.services[svc.labels]
        del self._by_id[sacl_id]
        del self._members[sacl_id]
        for lab in svc.labels.labels:
            del self._by_label[(lab.key, lab.value)][sacl_id]
        return gone

    # -- policies ----------------------------------------------------------

    def upsert_policy(self, p: Policy) -> None:
        self.policies[p.policy_id] = p

    def delete_policy(self, policy_id: str) -> Policy:
        try:
            return self.policies.pop(policy_id)
        except KeyError:
            raise ControllerError(f"unknown policy {policy_id!r}") from None

    def matching_services(self, selectors) -> List[Service]:
        candidates = self._by_id
        narrow = next((sel for sel in selectors if sel.operator is Operator.IN), None)
        if narrow is not None:
            # only Services carrying one of the required values can match
            candidates = {}
            for v in narrow.values:
                candidates.update(self._by_label.get((narrow.key, v), {}))
        return sorted((s for s in candidates.values() if labelset_matches(selectors, s.labels)),
                      key=lambda s: s.sacl_id)

    def compile_policy(self, p: Policy) -> List[Rule]:
        clients = self.matching_services(p.client_selectors)
        if not clients:
            return []
        servers = self.matching_services(p.server_selectors)
        rules = [Rule(c.sacl_id, s.sacl_id, p.action, p.value) for c in clients for s in servers]
        rules.sort(key=lambda r: r.pair)
        return rules

    def rules(self) -> List[Rule]:
        """Every policy compiled and merged to one rule per Service pair."""
        return merge_rules(r for p in self.policies.values() for r in self.compile_policy(p))

    # -- distribution ------------------------------------------------------

    def gateway_workloads(self, gateway_id: str) -> List[Workload]:
        return [w for w in self.workloads.values() if w.gateway_id == gateway_id]

    def build_gateway_tables(self, gateway_id: str, rules: Optional[List[Rule]] = None) -> GatewayTables:
        if gateway_id not in self.gateway_ids:
            raise ControllerError(f"unknown gateway {gateway_id!r}")
        if rules is None:
            rules = self.rules()
        reach = defaultdict(set)
        for r in rules:
            reach[r.client].add(r.server)
        local = self.gateway_workloads(gateway_id)
        client_map = {}
        server_map = {}
        local_services = {}
        for w in local:
            sid = self.services[w.labels].sacl_id
            local_services[sid] = None
            client_map[(w.ip, wire_lid(w.lid))] = sid
        for sid in local_services:
            for target in reach.get(sid, ()):
                for x in self._members[target].values():
                    if x.is_server:
                        server_map[(x.ip, x.listen_port)] = target
        filters = frozenset(r.pair for r in rules if r.server in local_services)
        return GatewayTables(client_map, server_map, filters, self.default_action)

    def recompile_on_event(self, event: Optional[Event] = None) -> DistributionPlan:
        if event is not None:
            log.debug("recompiling after %s", Event(event).value)
        rules = self.rules()
        frozen = tuple(rules)
        return DistributionPlan(
            gateway_entries={g: self.build_gateway_tables(g, rules) for g in self.gateway_ids},
            switch_entries={s: frozen for s in self.switch_ids},
        )

    plan = recompile_on_event
