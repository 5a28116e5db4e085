"""Formula-versus-oracle comparison for one scenario.

``check(spec)`` returns a list of mismatch strings (empty when everything
agrees) and a tally of how many comparisons were made per metric.
"""

from __future__ import annotations

import copy
from collections import Counter

import oracles
from acila import entrymodel as em
from acila.controller import Event
from acila.model import Action, Policy
from helpers import build


def _sid(ctl, w):
    return ctl.services[w.labels].sacl_id


def check(spec):
    bad, tally = [], Counter()
    ws = spec.workloads
    graph = oracles.priority_graph(ws, spec.policies)
    ctl, fab = build(spec)
    for (c, s), n in sorted(spec.connections.items()):
        fab.establish(c, s, n)
    sc = em.scenario_from_controller(ctl, spec.connections)
    rep = em.comparison_report(sc, gateways=spec.topology.gateway_ids)

    def eq(metric, formula, oracle, le=False):
        tally[metric] += 1
        ok = formula >= oracle if le else formula == oracle
        if not ok:
            bad.append(f"{spec.name} {metric}: formula={formula} oracle={oracle}")

    eq("el", rep.el, oracles.el(ws, graph))
    eq("es", rep.es, oracles.es(graph))
    for sw in spec.topology.spine_ids:
        eq("es.installed", rep.es, fab.count_installed_entries(sw))
    for g in spec.topology.gateway_ids:
        escc, worst, dedup, ess = oracles.gateway_counts(ws, graph, spec.connections, g)
        got = rep.gateways[g]
        tables = fab.gateways[g].tables
        eq("escc", got.escc, escc)
        eq("escc.table", got.escc, len(tables.client_map))
        eq("escs", got.escs, worst)
        eq("escs.table", got.escs, len(tables.server_map), le=True)
        if dedup != len(tables.server_map):
            bad.append(f"{spec.name} escs.table {g}: table={len(tables.server_map)} oracle={dedup}")
        if oracles.non_overlapping(ws, graph, g):
            eq("escs.table.nonoverlap", got.escs, len(tables.server_map))
        eq("ess", got.ess, ess)
        eq("ess.conntrack", got.ess, fab.gateways[g].conntrack.live_count())

    base_entries = oracles.conventional_entries(ws, graph)
    spine = spec.topology.spine_ids[0]
    plan0 = ctl.plan()

    # workload churn: remove each workload in turn
    for w in ws:
        rest = [x for x in ws if x.workload_id != w.workload_id]
        eq("elu_w", em.conventional_update_counts(sc, em.WorkloadChange(w.workload_id)),
           oracles.entries_diff(base_entries, oracles.conventional_entries(rest, graph)))
        ctl.deregister_workload(w.workload_id)
        plan = ctl.plan(Event.WORKLOAD_DEREGISTERED)
        ctl.register_workload(w)
        eq("esu_w", em.proposed_update_counts(sc, em.WorkloadChange(w.workload_id)),
           em.switch_plan_diff(plan0, plan, spine))
        if plan.switch_bytes(spine) != plan0.switch_bytes(spine):
            bad.append(f"{spec.name} esu_w: spine bytes changed removing {w.workload_id}")

    # Service deletion
    for key in sorted({oracles.service_key(w) for w in ws}, key=sorted):
        members = [w for w in ws if oracles.service_key(w) == key]
        sid = _sid(ctl, members[0])
        rest = [x for x in ws if oracles.service_key(x) != key]
        eq("elu_s", em.conventional_update_counts(sc, em.ServiceChange(sid)),
           oracles.entries_diff(base_entries, oracles.conventional_entries(rest, graph)))
        c2 = copy.deepcopy(ctl)  # deletion retires the SACL ID, so work on a copy
        c2.delete_service(sid)
        touching = sum(1 for a, b in graph if key in (a, b))
        measured = em.switch_plan_diff(plan0, c2.plan(Event.SERVICE_DELETED), spine)
        eq("esu_s", em.proposed_update_counts(sc, em.ServiceChange(sid)), measured)
        eq("esu_s.degree", measured, touching)

    # priority edges: drop each policy, and rewrite its value
    by_key = {oracles.service_key(w): _sid(ctl, w) for w in ws}
    for p in spec.policies:
        edges = oracles.priority_graph(ws, [p])
        for a, b in edges:
            reverse_kept = (b, a) in graph
            if reverse_kept:
                continue
            without = graph - {(a, b)}
            diff = oracles.entries_diff(base_entries, oracles.conventional_entries(ws, without))
            eq("elu_ss", 2 * em.conventional_update_counts(sc, em.PriorityChange(by_key[a], by_key[b])), diff)
        if len(edges) != 1:
            continue
        ctl.delete_policy(p.policy_id)
        eq("esu_ss", em.proposed_update_counts(sc, em.PriorityChange(*by_key_pair(by_key, edges))),
           em.switch_plan_diff(plan0, ctl.plan(Event.POLICY_DELETED), spine))
        ctl.upsert_policy(Policy(p.policy_id, p.client_selectors, p.server_selectors, Action.PRIORITY,
                                 ((p.value or 0) + 1) % 256))
        eq("esu_ss.value", 1, em.switch_plan_diff(plan0, ctl.plan(Event.POLICY_UPSERTED), spine))
        ctl.upsert_policy(p)
    return bad, tally


def by_key_pair(by_key, edges):
    (a, b), = edges
    return by_key[a], by_key[b]
