"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line through ``acceptance_log``; the lines
are printed in the terminal summary of the pytest run.
"""

import ipaddress
import random
import subprocess
import sys
import time
from collections import Counter

from hypothesis import given, settings, strategies as st

import oracles
import sweep
from acceptance_log import criterion
from acila import codec
from acila import entrymodel as em
from acila.bench import run_bench
from acila.codec import SACL_OPTION_TYPE, SaclPacket
from acila.controller import Event
from acila.fabric import Direction, TraceAction
from acila.gateway import DefaultAction, Dropped
from acila.model import Action, Operator, Placement, Policy, Proto, Selector, Workload
from acila.runner import run
from acila.scenario import load_scenario
from helpers import build, variant

SWEEP_SEEDS = 500
CODEC_PACKETS = 100_000
MIN_DATAPLANE_PACKETS = 10_000

GOLDEN_PACKET = (
    "60000000 002c 00 40"
    " fd000000000000000000000000000001"
    " fd000000000000000000000000000002"
    " 06 02 1e 10 0000000000000001 0000000000000002 01 02 00 00"
    " 9c40 0050 00000000 00000000 50 00 ffff 0000 0000"
)


def test_1_assumption_fixture_reproduces_gateway_counts():
    with criterion(1, "assumption fixture gives escc=128, escs=3840, ess=3840 in < 1 s") as d:
        t0 = time.perf_counter()
        proc = subprocess.run([sys.executable, "-m", "acila", "run", "--scenario", "assumption_alpha1",
                               "--format", "csv"], capture_output=True, text=True)
        elapsed = time.perf_counter() - t0
        assert proc.returncode == 0, proc.stderr
        rows = {}
        for line in proc.stdout.splitlines()[1:]:
            dev, metric, value = line.rsplit(",", 2)
            rows[(dev, metric)] = int(value)
        gateways = sorted({dev for dev, _ in rows if dev.startswith("gateway:r")})
        assert len(gateways) == 30
        for g in gateways:
            got = (rows[(g, "escc")], rows[(g, "escs")], rows[(g, "ess")])
            assert got == (128, 3840, 3840), f"{g}: {got}"

        # same numbers in process, with every concrete cross-check agreeing
        report = run(load_scenario("assumption_alpha1"))
        assert not report.failures, report.failures[:3]
        assert {(c.escc, c.escs, c.ess) for c in report.entries.gateways.values()} == {(128, 3840, 3840)}
        d["gateways"] = len(gateways)
        d["wall_s"] = f"{elapsed:.2f}"
        assert elapsed < 1.0, f"end-to-end run took {elapsed:.2f} s"


def test_2_formulas_equal_oracles_on_random_scenarios():
    with criterion(2, f"formulas equal enumeration on {SWEEP_SEEDS} random scenarios in < 60 s") as d:
        t0 = time.perf_counter()
        tally, bad = Counter(), []
        for seed in range(SWEEP_SEEDS):
            b, t = sweep.check(variant(seed))
            bad += b
            tally += t
        elapsed = time.perf_counter() - t0
        assert not bad, f"{len(bad)} mismatches, first: {bad[0]}"
        required = {"el", "elu_w", "elu_s", "elu_ss", "es", "escc", "escs", "ess", "esu_w", "esu_s", "esu_ss",
                    "escs.table.nonoverlap"}
        missing = required - set(tally)
        assert not missing, f"never compared: {sorted(missing)}"
        d["comparisons"] = sum(tally.values())
        d["seconds"] = f"{elapsed:.1f}"
        assert elapsed < 60


def _spine_bytes(plan, spines):
    return [plan.switch_bytes(s) for s in spines]


def test_3_workload_churn_leaves_spines_untouched():
    with criterion(3, "workload churn keeps spine plans byte-identical; conventional diff nonzero") as d:
        changes = nonzero = 0
        for seed in range(200):
            spec = variant(seed)
            ws = spec.workloads
            graph = oracles.priority_graph(ws, spec.policies)
            on_graph = {k for e in graph for k in e}
            ctl, _ = build(spec)
            spines = spec.topology.spine_ids
            base = ctl.plan()
            base_entries = oracles.conventional_entries(ws, graph)
            rng = random.Random(seed)
            for w in ws:
                ctl.deregister_workload(w.workload_id)
                after = ctl.plan(Event.WORKLOAD_DEREGISTERED)
                assert _spine_bytes(after, spines) == _spine_bytes(base, spines), (spec.name, w.workload_id)
                rest = [x for x in ws if x is not w]
                diff = oracles.entries_diff(base_entries, oracles.conventional_entries(rest, graph))
                if oracles.service_key(w) in on_graph:
                    assert diff > 0, (spec.name, w.workload_id)
                    nonzero += 1
                ctl.register_workload(w)
                changes += 1
            if not ws:
                continue
            # add a new member to an existing Service on some gateway
            proto = rng.choice(ws)
            g = rng.choice(spec.topology.gateway_ids)
            rack, server = (int(x) for x in g[1:].split("s"))
            new = Workload("churn-new", proto.labels, "fd00:ffff::1", Placement(rack, server),
                           9999 if proto.is_server else None)
            ctl.register_workload(new)
            after = ctl.plan(Event.WORKLOAD_REGISTERED)
            assert _spine_bytes(after, spines) == _spine_bytes(base, spines), (spec.name, "add")
            diff = oracles.entries_diff(base_entries, oracles.conventional_entries(ws + [new], graph))
            if oracles.service_key(new) in on_graph:
                assert diff > 0
                nonzero += 1
            changes += 1
        d["changes"] = changes
        d["conventional_nonzero"] = nonzero


def _scenario_strategy():
    @st.composite
    def build_it(draw):
        n_services = draw(st.integers(1, 6))
        sizes = [draw(st.integers(1, 5)) for _ in range(n_services)]
        membership, placement = {}, {}
        for s, size in enumerate(sizes):
            for i in range(size):
                membership[f"s{s}w{i}"] = s
                placement[f"s{s}w{i}"] = f"g{draw(st.integers(0, 3))}"
        pairs = [(a, b) for a in range(n_services) for b in range(n_services)]
        graph = draw(st.sets(st.sampled_from(pairs), max_size=len(pairs)))
        return em.Scenario(membership, placement, frozenset(graph)), sizes
    return build_it()


def test_4_reduction_inequality():
    with criterion(4, "es <= el, strict when an edge joins two Services of >= 2 workloads") as d:
        seen = Counter()

        @settings(max_examples=400, deadline=None, database=None)
        @given(_scenario_strategy())
        def prop(case):
            sc, sizes = case
            el, es = em.conventional_spine_entries(sc), em.proposed_spine_entries(sc)
            assert el == len(em.conventional_entries(sc))
            assert es <= el
            if any(sizes[a] >= 2 and sizes[b] >= 2 for a, b in sc.graph):
                assert es < el
                seen["strict"] += 1
            seen["cases"] += 1

        prop()
        for seed in range(300):
            rep = em.comparison_report(em.scenario_from_controller(build(variant(seed))[0]))
            assert rep.es <= rep.el, seed
            seen["random"] += 1
        d.update(seen)


def _random_packet(rng):
    ids = (0, 0) if rng.random() < 0.2 else (rng.randint(1, 2**64 - 1), rng.randint(1, 2**64 - 1))
    return SaclPacket(
        ipaddress.IPv6Address(rng.getrandbits(128)), ipaddress.IPv6Address(rng.getrandbits(128)),
        rng.randint(0, 0xFFFF), rng.randint(0, 0xFFFF), rng.choice([Proto.TCP, Proto.UDP]),
        rng.randint(0, 255), ids[0], ids[1], rng.randbytes(rng.randint(0, 64)))


def test_5_codec_is_bit_exact():
    with criterion(5, f"codec roundtrip/strip/skip on {CODEC_PACKETS} packets plus golden bytes") as d:
        wire = codec.encode(SaclPacket("fd00::1", "fd00::2", 40000, 80, client_sacl=1, server_sacl=2))
        assert wire == bytes.fromhex(GOLDEN_PACKET.replace(" ", ""))
        rng = random.Random(2024)
        foreign = 0
        for _ in range(CODEC_PACKETS):
            p = _random_packet(rng)
            extra = []
            if p.has_ids and rng.random() < 0.1:
                extra = [(rng.choice([0x02, 0x03, 0x1F]), rng.randbytes(rng.randint(0, 6)))]
                foreign += 1
            w = codec.encode(p, extra_options=extra)
            assert codec.decode(w) == p
            plain = codec.strip(w)
            assert codec.decode(plain) == p.without_ids()
            if not extra:
                assert plain == codec.encode(p.without_ids())
            view = codec.walk_to_transport(w)
            assert (view.proto, view.src_port, view.dst_port, view.payload) == \
                   (p.proto, p.src_port, p.dst_port, p.payload)
            assert (SACL_OPTION_TYPE in view.skipped_options) == p.has_ids
        d["packets"] = CODEC_PACKETS
        d["with_foreign_option"] = foreign


def _in(v):
    return (Selector("app", Operator.IN, frozenset({v})),)


def _mixed_spec(seed):
    """Random scenario plus some plain allow policies on top of the priority ones."""
    spec = variant(seed)
    rng = random.Random(~seed)
    apps = sorted({w.labels.get("app") for w in spec.workloads})
    for a in apps:
        for b in apps:
            if rng.random() < 0.2:
                spec.policies.append(Policy(f"allow-{a}-{b}", _in(a), _in(b), Action.ALLOW))
    assert spec.default_action is DefaultAction.DENY
    return spec


def _wire_delivery(gw, step, ft, ids, payload):
    """Feed the ID-carrying packet to ``gw`` as bytes and return what it hands over."""
    pkt = SaclPacket(ft.src_ip, ft.dst_ip, ft.src_port, ft.dst_port, ft.proto,
                     client_sacl=ids[0], server_sacl=ids[1], payload=payload)
    wire = codec.encode(pkt)
    out = gw.handle_wire(step, wire)
    assert not isinstance(out, Dropped), out
    return wire, out


def test_6_dataplane_sessions():
    with criterion(6, "data plane: denied dropped, replies keep ids, option stripped, LID spoofs fail") as d:
        n = Counter()
        for seed in range(150):
            spec = _mixed_spec(seed)
            ws = spec.workloads
            servers = [w for w in ws if w.is_server]
            if not servers:
                continue
            key = oracles.service_key
            graph = oracles.priority_graph(ws, spec.policies)
            reach = {g: {b for a, b in graph if a in {key(w) for w in ws if w.gateway_id == g}}
                     for g in spec.topology.gateway_ids}
            _, fab = build(spec, seed=seed)
            rng = random.Random(seed)
            for _ in range(45):
                c, s = rng.choice(ws), rng.choice(servers)
                if c is s:
                    continue
                ft = fab.flow(c.workload_id, s.workload_id)
                payload = rng.randbytes(rng.randint(0, 32))
                fwd = fab.send(c.workload_id, s.workload_id, ft, payload=payload)
                rep = fab.send(c.workload_id, s.workload_id, ft, Direction.REPLY, payload=payload)
                n["packets"] += 2
                if (key(c), key(s)) not in graph:
                    # (a) denied: a tagged packet dies at the server gateway; an untaggable one
                    # never leaves the client gateway
                    where = s.gateway_id if key(s) in reach[c.gateway_id] else c.gateway_id
                    assert (fwd[-1].hop, fwd[-1].action) == (where, TraceAction.DROPPED), (spec.name, fwd)
                    assert rep[-1].action is TraceAction.DROPPED
                    n["denied_at_server_gw" if where == s.gateway_id else "denied_untagged"] += 1
                    continue
                assert (fwd[-1].hop, fwd[-1].action) == (s.workload_id, TraceAction.DELIVERED), fwd
                # (b) the reply is tagged with the forward pair on every hop and is delivered
                pair = fwd[0].ids
                assert pair != (0, 0) and rep[0].action is TraceAction.ID_ATTACHED
                assert all(e.ids == pair for e in rep[:-1]), rep
                assert (rep[-1].hop, rep[-1].action) == (c.workload_id, TraceAction.DELIVERED)
                # (c) what reaches either workload carries no SACL option
                for gw, step, tup in ((s.gateway_id, "ingress_server", ft),
                                      (c.gateway_id, "ingress_client", ft.reversed())):
                    wire, out = _wire_delivery(fab.gateways[gw], step, tup, pair, payload)
                    assert out == codec.strip(wire)
                    assert SACL_OPTION_TYPE not in codec.walk_to_transport(out).skipped_options
                    assert codec.decode(out).ids == (0, 0)
                    assert codec.walk_to_transport(out).payload == payload
                n["allowed"] += 1
            # (d) LIDs that are not registered for the sending address
            for _ in range(15):
                c, s = rng.choice(ws), rng.choice(servers)
                if c is s:
                    continue
                taken = {codec.read_lid(codec.mark_lid(64, w.lid)) for w in ws if w.ip == c.ip and w.lid is not None}
                lid = rng.choice([x for x in range(300) if x % 128 not in taken])
                trace = fab.send(c.workload_id, s.workload_id, fab.flow(c.workload_id, s.workload_id), lid=lid)
                n["packets"] += 1
                assert [(e.hop, e.action) for e in trace] == [(c.gateway_id, TraceAction.DROPPED)], trace
                n["spoofs"] += 1
        assert n["packets"] >= MIN_DATAPLANE_PACKETS, n
        assert n["denied_at_server_gw"] > 0 and n["allowed"] > 0 and n["spoofs"] > 0
        d.update(n)


def _expected_priority(ws_by_id, policies, c, s):
    values = [p.value for p in policies if p.action is Action.PRIORITY
              and oracles.matches(p.client_selectors, ws_by_id[c].labels.as_dict())
              and oracles.matches(p.server_selectors, ws_by_id[s].labels.as_dict())]
    return max(values) if values else None


def test_7_priority_is_set_once_on_the_spine():
    with criterion(7, "one spine hop sets the policy value; spine tables identical with es entries") as d:
        n = Counter()
        for seed in range(150):
            spec = _mixed_spec(seed)
            ctl, fab = build(spec, seed=seed)
            ws = spec.workloads
            by_id = {w.workload_id: w for w in ws}
            graph = oracles.priority_graph(ws, spec.policies)
            tables = [fab.switches[sp].entries for sp in spec.topology.spine_ids]
            assert all(t == tables[0] for t in tables)
            assert len(tables[0]) == oracles.es(graph) == em.proposed_spine_entries(em.scenario_from_controller(ctl))
            n["spines"] += len(tables)
            topo = spec.topology
            for c in ws:
                for s in ws:
                    if not s.is_server or c is s or topo.rack_of(c.gateway_id) == topo.rack_of(s.gateway_id):
                        continue
                    if (oracles.service_key(c), oracles.service_key(s)) not in graph:
                        continue
                    trace = fab.send(c.workload_id, s.workload_id, fab.flow(c.workload_id, s.workload_id))
                    assert trace[-1].action is TraceAction.DELIVERED
                    spine_hops = [e for e in trace if e.hop.startswith("spine")]
                    assert len(spine_hops) == 1
                    want = _expected_priority(by_id, spec.policies, c.workload_id, s.workload_id)
                    if want is None:
                        assert spine_hops[0].action is TraceAction.FORWARDED
                        assert not any(e.action is TraceAction.PRIORITY_SET for e in trace)
                        n["allow_only"] += 1
                    else:
                        assert (spine_hops[0].action, spine_hops[0].value) == (TraceAction.PRIORITY_SET, want)
                        n["prioritized"] += 1
        assert n["prioritized"] > 0
        d.update(n)


def test_8_microbenchmark_is_informational():
    with criterion(8, "microbenchmark (informational, not gating)") as d:
        result = run_bench(packets=5000, alpha=1.0)
        d["codec_roundtrip_pps"] = f"{result['codec_roundtrip_pps']:.0f}"
        d["gateway_egress_pps"] = f"{result['gateway_egress_pps']:.0f}"
        d["gateway_entries"] = result["gateway_entries"]
