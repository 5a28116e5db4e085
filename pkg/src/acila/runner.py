"""Scenario runner: drive controller, fabric and entry model, then cross-check
the closed-form counts against the concrete tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import entrymodel as em
from .controller import Assignment, Controller, ControllerError, Event
from .fabric import Fabric, SwitchMode, TraceAction, TraceEvent
from .scenario import ScenarioSpec

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_CROSSCHECK = 0, 1, 2


class RunError(ValueError):
    """The scenario is well-formed YAML but cannot be executed."""


@dataclass(frozen=True)
class Check:
    device: str
    metric: str
    analytic: int
    concrete: int
    relation: str = "=="  # "<=": concrete may fall below the worst-case formula

    @property
    def ok(self) -> bool:
        if self.relation == "<=":
            return self.concrete <= self.analytic
        return self.concrete == self.analytic


@dataclass(frozen=True)
class FlowSummary:
    name: str
    direction: str
    delivered: bool
    end_device: str
    priority_hops: Tuple[Tuple[str, int], ...]


@dataclass(frozen=True)
class ChangeRecord:
    index: int
    name: str
    kind: str
    analytic: Dict[str, int]
    measured: Dict[str, int]


@dataclass
class RunReport:
    scenario: str
    entries: em.EntryReport
    checks: List[Check] = field(default_factory=list)
    flows: List[FlowSummary] = field(default_factory=list)
    traces: List[Tuple[str, str, List[TraceEvent]]] = field(default_factory=list)
    changes: List[ChangeRecord] = field(default_factory=list)

    @property
    def failures(self) -> List[Check]:
        return [c for c in self.checks if not c.ok]


def _policy_change_analytic(before: em.Scenario, after: em.Scenario, rules_before, rules_after):
    """Update counts for a policy change, summed over the Service pairs it touched."""
    a = {r.pair: r for r in rules_before}
    b = {r.pair: r for r in rules_after}
    esu = sum(em.proposed_update_counts(after if p in b else before, em.PriorityChange(*p))
              for p in set(a) | set(b) if a.get(p) != b.get(p))

    def undirected(rs):
        return {frozenset(p) for p in rs}

    flipped = undirected(a) ^ undirected(b)
    elu = 0
    for pair in flipped:
        sc = after if pair in undirected(b) else before
        if len(pair) == 1:  # self-edge: one set of entries serves both directions
            (i,) = pair
            elu += em.conventional_update_counts(sc, em.PriorityChange(i, i))
        else:
            i, j = tuple(pair)
            elu += 2 * em.conventional_update_counts(sc, em.PriorityChange(i, j))
    return {"elu_ss": elu, "esu_ss": esu}


def run(spec: ScenarioSpec, mode: SwitchMode = SwitchMode.PRIORITY_ONLY, seed: int = 0,
        inject_mismatch: Optional[str] = None) -> RunReport:
    topo = spec.topology
    ctl = Controller(topo.gateway_ids, topo.switch_ids, spec.default_action)
    try:
        for w in spec.workloads:
            ctl.register_workload(w)
        for p in spec.policies:
            ctl.upsert_policy(p)
    except ControllerError as e:
        raise RunError(str(e)) from None
    fabric = Fabric(topo, ctl, mode, seed, spec.filter_switches)
    rules = ctl.rules()
    plan = fabric.sync(Event.POLICY_UPSERTED)

    for (c, s), n in sorted(spec.connections.items()):
        fabric.establish(c, s, n)

    sc = em.scenario_from_controller(ctl, spec.connections, rules)
    entries = em.comparison_report(sc, gateways=topo.gateway_ids)
    report = RunReport(spec.name, entries)

    for sw in topo.spine_ids:
        report.checks.append(Check(sw, "es", entries.es, fabric.count_installed_entries(sw)))
    conv = em.conventional_entries(sc)
    report.checks.append(Check("spine", "el", entries.el, len(conv)))
    for g in topo.gateway_ids:
        counts, gw = entries.gateways[g], fabric.gateways[g]
        report.checks.append(Check(g, "escc", counts.escc, len(gw.tables.client_map)))
        report.checks.append(Check(g, "escs", counts.escs, len(gw.tables.server_map), "<="))
        report.checks.append(Check(g, "ess", counts.ess, gw.conntrack.live_count()))

    for flow in spec.traffic:
        try:
            ft = fabric.flow(flow.client, flow.server, flow.src_port, flow.proto)
        except (KeyError, ValueError) as e:
            raise RunError(f"flow {flow.name!r}: {e}") from None
        for d in flow.directions:
            trace = fabric.send(flow.client, flow.server, ft, d, lid=flow.lid, payload=flow.payload)
            report.traces.append((flow.name, d.value, trace))
            last = trace[-1]
            report.flows.append(FlowSummary(
                flow.name, d.value, last.action is TraceAction.DELIVERED, last.hop,
                tuple((ev.hop, ev.value) for ev in trace if ev.action is TraceAction.PRIORITY_SET)))

    spine = topo.spine_ids[0]
    for i, ch in enumerate(spec.changes):
        before_sc, before_plan, before_rules, before_conv = sc, plan, rules, conv
        try:
            kind, target, event = _apply(ctl, ch)
        except ControllerError as e:
            raise RunError(f"change {i} ({ch.name}): {e}") from None
        rules = ctl.rules()
        plan = fabric.sync(event)
        sc = em.scenario_from_controller(ctl, {}, rules)
        conv = em.conventional_entries(sc)
        measured = {"elu": em.entry_diff(before_conv, conv),
                    "esu": em.switch_plan_diff(before_plan, plan, spine)}
        if kind == "workload":
            analytic = em.update_metrics(before_sc if ch.op == "remove_workload" else sc,
                                         em.WorkloadChange(target))
        elif kind == "service":
            analytic = em.update_metrics(before_sc if ch.op == "delete_service" else sc,
                                         em.ServiceChange(target))
        else:
            analytic = _policy_change_analytic(before_sc, sc, before_rules, rules)
        elu_key, esu_key = sorted(analytic)
        rec = ChangeRecord(i, ch.name, kind, analytic, {elu_key: measured["elu"], esu_key: measured["esu"]})
        report.changes.append(rec)
        for metric, value in rec.analytic.items():
            report.checks.append(Check(f"change{i}", metric, value, rec.measured[metric]))

    if inject_mismatch is not None:
        idx = next((j for j, c in enumerate(report.checks) if c.device == inject_mismatch), None)
        if idx is None:
            raise RunError(f"--inject-mismatch: no cross-check on device {inject_mismatch!r}")
        c = report.checks[idx]
        report.checks[idx] = Check(c.device, c.metric, c.analytic, c.analytic + 1, "==")
    return report


def _apply(ctl: Controller, ch):
    """Apply one scripted change; returns (kind, target, event)."""
    if ch.op == "add_workload":
        svc, how = ctl.register_workload(ch.workload)
        if how is Assignment.CREATED_NEW:
            return "service", svc.sacl_id, Event.SERVICE_CREATED
        return "workload", ch.workload.workload_id, Event.WORKLOAD_REGISTERED
    if ch.op == "remove_workload":
        ctl.deregister_workload(ch.workload_id)
        return "workload", ch.workload_id, Event.WORKLOAD_DEREGISTERED
    if ch.op == "delete_service":
        svc = ctl.services.get(ch.labels)
        if svc is None:
            raise ControllerError(f"no Service with labels {ch.labels}")
        ctl.delete_service(svc.sacl_id)
        return "service", svc.sacl_id, Event.SERVICE_DELETED
    if ch.op == "upsert_policy":
        ctl.upsert_policy(ch.policy)
        return "policy", ch.policy.policy_id, Event.POLICY_UPSERTED
    ctl.delete_policy(ch.policy_id)
    return "policy", ch.policy_id, Event.POLICY_DELETED
