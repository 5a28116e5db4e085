"""Deterministic leaf-spine fabric simulator.

Packets walk client gateway -> ToR -> leaf -> spine -> leaf -> ToR -> server
gateway. Every switch holds the full rule set from the controller; it stamps
priorities and, when filtering is enabled, drops pairs it has no rule for.
Link capacity and queueing are not modeled.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from . import codec
from .codec import SaclPacket
from .controller import Controller, DistributionPlan
from .gateway import DefaultAction, Dropped, SaclGateway
from .model import Action, FiveTuple, Proto, Rule, server_id


class TopologyError(ValueError):
    pass


class SwitchMode(str, Enum):
    PRIORITY_ONLY = "priority_only"
    PRIORITY_AND_FILTER = "priority_and_filter"


class TraceAction(str, Enum):
    FORWARDED = "forwarded"
    PRIORITY_SET = "priority_set"
    DROPPED = "dropped"
    ID_ATTACHED = "id_attached"
    ID_STRIPPED = "id_stripped"
    DELIVERED = "delivered"


class Direction(str, Enum):
    FORWARD = "forward"
    REPLY = "reply"


@dataclass(frozen=True)
class Topology:
    rack_count: int
    servers_per_rack: int
    vms_per_server: int
    leaf_count: int
    spine_count: int

    @property
    def tor_ids(self) -> List[str]:
        return [f"tor{i}" for i in range(self.rack_count)]

    @property
    def leaf_ids(self) -> List[str]:
        return [f"leaf{i}" for i in range(self.leaf_count)]

    @property
    def spine_ids(self) -> List[str]:
        return [f"spine{i}" for i in range(self.spine_count)]

    @property
    def switch_ids(self) -> List[str]:
        return self.tor_ids + self.leaf_ids + self.spine_ids

    @property
    def gateway_ids(self) -> List[str]:
        return [server_id(r, s) for r in range(self.rack_count) for s in range(self.servers_per_rack)]

    def racks(self) -> List[dict]:
        return [{"id": r, "servers": [{"id": server_id(r, s), "vms": list(range(self.vms_per_server))}
                                      for s in range(self.servers_per_rack)]}
                for r in range(self.rack_count)]

    def rack_of(self, gateway_id: str) -> int:
        try:
            r, s = (int(x) for x in gateway_id[1:].split("s"))
        except ValueError:
            raise TopologyError(f"unknown server {gateway_id!r}") from None
        if not (gateway_id[0] == "r" and 0 <= r < self.rack_count and 0 <= s < self.servers_per_rack):
            raise TopologyError(f"unknown server {gateway_id!r}")
        return r

    def leaf_of_tor(self, rack: int) -> str:
        return f"leaf{rack % self.leaf_count}"

    def links(self) -> set:
        """Undirected adjacency as a set of frozensets of device ids."""
        out = set()
        for r in range(self.rack_count):
            for s in range(self.servers_per_rack):
                out.add(frozenset((server_id(r, s), f"tor{r}")))
            out.add(frozenset((f"tor{r}", self.leaf_of_tor(r))))
        for leaf in self.leaf_ids:
            for spine in self.spine_ids:
                out.add(frozenset((leaf, spine)))
        return out

    def path(self, src_gateway: str, dst_gateway: str, spine: int = 0) -> List[str]:
        """Devices traversed between two gateways, both ends included."""
        ra, rb = self.rack_of(src_gateway), self.rack_of(dst_gateway)
        if src_gateway == dst_gateway:
            return [src_gateway]
        if ra == rb:
            return [src_gateway, f"tor{ra}", dst_gateway]
        return [src_gateway, f"tor{ra}", self.leaf_of_tor(ra), f"spine{spine}",
                self.leaf_of_tor(rb), f"tor{rb}", dst_gateway]


def build_topology(racks: int, servers_per_rack: int, leaves: int, spines: int,
                   vms_per_server: int = 1) -> Topology:
    counts = dict(racks=racks, servers_per_rack=servers_per_rack, leaves=leaves,
                  spines=spines, vms_per_server=vms_per_server)
    for name, n in counts.items():
        if not isinstance(n, int) or n < 1:
            raise TopologyError(f"{name} must be a positive integer, got {n!r}")
    return Topology(racks, servers_per_rack, vms_per_server, leaves, spines)


@dataclass(frozen=True)
class SwitchTable:
    entries: Tuple[Rule, ...] = ()
    mode: SwitchMode = SwitchMode.PRIORITY_ONLY
    _index: Dict[Tuple[int, int], Rule] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self._index.update((r.pair, r) for r in self.entries)

    def match(self, pair) -> Optional[Rule]:
        return self._index.get(pair)


@dataclass(frozen=True)
class TraceEvent:
    hop: str
    action: TraceAction
    value: Optional[int] = None
    ids: Tuple[int, int] = (0, 0)

    def line(self, index: int) -> str:
        tail = f" {self.value}" if self.value is not None else ""
        return f"{index} {self.hop} {self.action.value}{tail}"


def trace_lines(trace: Sequence[TraceEvent]) -> str:
    return "".join(ev.line(i) + "\n" for i, ev in enumerate(trace))


class Fabric:
    """A topology populated with gateways and switch tables from one controller."""

    def __init__(self, topology: Topology, controller: Controller,
                 mode: SwitchMode = SwitchMode.PRIORITY_ONLY, seed: int = 0,
                 filter_switches: Optional[Iterable[str]] = None,
                 conntrack_capacity: int = 1 << 20, conntrack_ttl: int = 300):
        self.topology = topology
        self.controller = controller
        self.mode = SwitchMode(mode)
        self.seed = seed
        self.filter_switches = set(filter_switches) if filter_switches is not None else None
        unknown = (self.filter_switches or set()) - set(topology.switch_ids)
        if unknown:
            raise TopologyError(f"unknown filtering switches: {sorted(unknown)}")
        self.gateways = {g: SaclGateway(g, capacity=conntrack_capacity, ttl=conntrack_ttl)
                         for g in topology.gateway_ids}
        self.switches: Dict[str, SwitchTable] = {s: SwitchTable() for s in topology.switch_ids}
        self.plan: Optional[DistributionPlan] = None
        self._next_port: Dict[int, int] = {}  # per source address

    def switch_mode(self, switch_id: str) -> SwitchMode:
        if self.filter_switches is not None:
            return SwitchMode.PRIORITY_AND_FILTER if switch_id in self.filter_switches else SwitchMode.PRIORITY_ONLY
        return self.mode

    def install(self, plan: DistributionPlan) -> None:
        """Swap in a new plan; conntrack state survives."""
        self.plan = plan
        for gid, tables in plan.gateway_entries.items():
            self.gateways[gid].install(tables)
        for sid, rules in plan.switch_entries.items():
            self.switches[sid] = SwitchTable(tuple(rules), self.switch_mode(sid))

    def sync(self, event=None) -> DistributionPlan:
        plan = self.controller.recompile_on_event(event)
        self.install(plan)
        return plan

    def advance(self, dt: int) -> None:
        for gw in self.gateways.values():
            gw.advance(dt)

    def ecmp_spine(self, ft: FiveTuple) -> int:
        key = f"{self.seed}|{ft.proto.value}|{ft.src_ip}|{ft.src_port}|{ft.dst_ip}|{ft.dst_port}"
        return zlib.crc32(key.encode()) % self.topology.spine_count

    def flow(self, client_id: str, server_id_: str, src_port: Optional[int] = None,
             proto: Proto = Proto.TCP) -> FiveTuple:
        """Five-tuple for a new connection; picks the next ephemeral port when none is given."""
        wl = self.controller.workloads
        if client_id not in wl or server_id_ not in wl:
            raise KeyError(f"unknown workload {client_id if client_id not in wl else server_id_!r}")
        c, s = wl[client_id], wl[server_id_]
        if not s.is_server:
            raise ValueError(f"workload {server_id_!r} does not listen on any port")
        if src_port is None:
            # workloads behind one address share its port space
            src_port = self._next_port.get(int(c.ip), 32768)
            self._next_port[int(c.ip)] = src_port + 1
        return FiveTuple(c.ip, s.ip, src_port, s.listen_port, proto)

    def send(self, client_id: str, server_id_: str, ft: FiveTuple,
             direction: Direction = Direction.FORWARD, lid: Optional[int] = None,
             payload: bytes = b"") -> List[TraceEvent]:
        """Walk one packet of the flow through the fabric and return its trace.

        ``lid`` overrides the LID the client's LID Marker would put in Hop Limit.
        """
        wl = self.controller.workloads
        for wid in (client_id, server_id_):
            if wid not in wl:
                raise KeyError(f"unknown workload {wid!r}")
        client, server = wl[client_id], wl[server_id_]
        direction = Direction(direction)
        if direction is Direction.FORWARD:
            src, dst, tup = client, server, ft
            hop_limit = codec.DEFAULT_HOP_LIMIT
            if lid is None:
                lid = client.lid
            if lid is not None:
                hop_limit = codec.mark_lid(hop_limit, lid)
            out_step, in_step = "egress_client", "ingress_server"
        else:
            src, dst, tup = server, client, ft.reversed()
            hop_limit = codec.DEFAULT_HOP_LIMIT
            out_step, in_step = "egress_server", "ingress_client"
        pkt = SaclPacket(tup.src_ip, tup.dst_ip, tup.src_port, tup.dst_port, tup.proto,
                         hop_limit=hop_limit, payload=payload)
        trace: List[TraceEvent] = []
        gw_src = self.gateways[src.gateway_id]
        gw_dst = self.gateways[dst.gateway_id]

        out = getattr(gw_src, out_step)(pkt)
        if isinstance(out, Dropped):
            trace.append(TraceEvent(gw_src.gateway_id, TraceAction.DROPPED))
            return trace
        trace.append(TraceEvent(gw_src.gateway_id,
                                TraceAction.ID_ATTACHED if out.has_ids else TraceAction.FORWARDED,
                                ids=out.ids))
        pkt = out
        spine = self.ecmp_spine(tup)
        for dev in self.topology.path(src.gateway_id, dst.gateway_id, spine)[1:-1]:
            table = self.switches[dev]
            rule = table.match(pkt.ids)
            if rule is None and table.mode is SwitchMode.PRIORITY_AND_FILTER:
                trace.append(TraceEvent(dev, TraceAction.DROPPED, ids=pkt.ids))
                return trace
            if rule is not None and rule.action is Action.PRIORITY:
                trace.append(TraceEvent(dev, TraceAction.PRIORITY_SET, rule.value, ids=pkt.ids))
            else:
                trace.append(TraceEvent(dev, TraceAction.FORWARDED, ids=pkt.ids))

        had_ids = pkt.ids
        out = getattr(gw_dst, in_step)(pkt)
        if isinstance(out, Dropped):
            trace.append(TraceEvent(gw_dst.gateway_id, TraceAction.DROPPED, ids=had_ids))
            return trace
        if out.has_ids:  # never expected; kept visible rather than silently delivered
            raise AssertionError(f"{gw_dst.gateway_id} delivered a packet that still carries SACL IDs")
        if had_ids != (0, 0):
            trace.append(TraceEvent(gw_dst.gateway_id, TraceAction.ID_STRIPPED, ids=had_ids))
        trace.append(TraceEvent(dst.workload_id, TraceAction.DELIVERED))
        return trace

    def establish(self, client_id: str, server_id_: str, count: int = 1) -> int:
        """Open ``count`` connections through the two gateways only (no switch walk).

        Returns how many were accepted by the server gateway.
        """
        if count <= 0:
            return 0
        wl = self.controller.workloads
        client, server = wl[client_id], wl[server_id_]
        if not server.is_server:
            raise ValueError(f"workload {server_id_!r} does not listen on any port")
        gw_c, gw_s = self.gateways[client.gateway_id], self.gateways[server.gateway_id]
        hop_limit = codec.mark_lid(codec.DEFAULT_HOP_LIMIT, client.lid) if client.lid is not None \
            else codec.DEFAULT_HOP_LIMIT
        src, dst, dport = int(client.ip), int(server.ip), server.listen_port
        port = self._next_port.get(src, 32768)
        if port + count - 1 > 0xFFFF:
            raise ValueError(f"{client.ip} ran out of ephemeral ports")
        self._next_port[src] = port + count
        # same decisions as egress_client then ingress_server, minus building packets
        lid = codec.read_lid(hop_limit)
        client_open = gw_c.tables.default_action is DefaultAction.ALLOW
        server_open = gw_s.tables.default_action is DefaultAction.ALLOW
        ok = 0
        for i in range(count):
            key = (src, dst, port + i, dport, Proto.TCP)
            pair = gw_c.classify(key, lid)
            if type(pair) is str:
                if not client_open:
                    continue
                pair = (0, 0)  # forwarded untagged
            if gw_s.admit(pair, key) or server_open:
                ok += 1
        return ok

    def count_installed_entries(self, device: str) -> int:
        if device in self.switches:
            return len(self.switches[device].entries)
        if device in self.gateways:
            return self.gateways[device].entry_count()
        raise TopologyError(f"unknown device {device!r}")


def count_installed_entries(fabric: Fabric, device: str) -> int:
    return fabric.count_installed_entries(device)
