"""SACL Gateway data plane.

A gateway sits between the workloads on one physical server and the
fabric. It attaches SACL IDs on the way out, enforces the allow-list on
the way in, and uses connection tracking to classify reply traffic whose
client side cannot be identified from the packet alone.
"""

from __future__ import annotations

import ipaddress
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Hashable, Optional, Tuple, Union

from . import codec
from .codec import DEFAULT_HOP_LIMIT, SaclPacket
from .model import FiveTuple

ClientKey = Tuple[ipaddress.IPv6Address, Optional[int]]
ServerKey = Tuple[ipaddress.IPv6Address, int]
IdPair = Tuple[int, int]


class DefaultAction(str, Enum):
    DENY = "deny"
    ALLOW = "allow"


@dataclass(frozen=True)
class GatewayTables:
    """Snapshot of everything the controller distributes to one gateway."""

    client_map: Dict[ClientKey, int] = field(default_factory=dict)
    server_map: Dict[ServerKey, int] = field(default_factory=dict)
    filter_rules: FrozenSet[IdPair] = frozenset()
    default_action: DefaultAction = DefaultAction.DENY

    def __post_init__(self):
        # integer-keyed copies for the per-packet path
        object.__setattr__(self, "client_index", {(int(ip), lid): v for (ip, lid), v in self.client_map.items()})
        object.__setattr__(self, "server_index", {(int(ip), port): v for (ip, port), v in self.server_map.items()})

    @property
    def size(self) -> int:
        return len(self.client_map) + len(self.server_map)


@dataclass(frozen=True)
class Dropped:
    device: str
    reason: str


Verdict = Union[SaclPacket, Dropped]


def five_tuple(pkt: SaclPacket) -> FiveTuple:
    return FiveTuple(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, pkt.proto)


def flow_key(pkt: SaclPacket, reverse: bool = False) -> tuple:
    """Conntrack key for ``pkt``: its five-tuple, or the mirrored one for replies.

    Addresses enter the key as integers; hashing IPv6Address objects is slow.
    """
    if reverse:
        return (int(pkt.dst_ip), int(pkt.src_ip), pkt.dst_port, pkt.src_port, pkt.proto)
    return (int(pkt.src_ip), int(pkt.dst_ip), pkt.src_port, pkt.dst_port, pkt.proto)


def key_of(ft: FiveTuple) -> tuple:
    return (int(ft.src_ip), int(ft.dst_ip), ft.src_port, ft.dst_port, ft.proto)


class ConntrackTable:
    """Flow table keyed on the forward five-tuple, with logical-time TTL and LRU eviction.

    An entry is live while ``last_seen + ttl >= now``. Expired entries are
    never returned by :meth:`lookup`, even before :meth:`gc` removes them.
    """

    def __init__(self, capacity: int = 1 << 20, ttl: int = 300, now: int = 0):
        if capacity < 1 or ttl < 0:
            raise ValueError("capacity must be >= 1 and ttl >= 0")
        self.capacity = capacity
        self.ttl = ttl
        self.now = now
        # values are (pair, last_seen) tuples; immutable entries keep the cyclic GC off them
        self._entries: "OrderedDict[Hashable, tuple]" = OrderedDict()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key):
        return self.lookup(key, touch=False) is not None

    def advance(self, dt: int) -> None:
        if dt < 0:
            raise ValueError("logical time cannot go backwards")
        self.now += dt

    def _live(self, last_seen: int) -> bool:
        return last_seen + self.ttl >= self.now

    def lookup(self, key, touch: bool = True) -> Optional[IdPair]:
        ent = self._entries.get(key)
        if ent is None or not self._live(ent[1]):
            return None
        if touch:
            self._entries[key] = (ent[0], self.now)
            self._entries.move_to_end(key)
        return ent[0]

    def insert(self, key, pair: IdPair) -> Optional[Hashable]:
        """Record ``key``; returns the key evicted to make room, if any."""
        evicted = None
        if key in self._entries:
            self._entries.move_to_end(key)
        elif len(self._entries) >= self.capacity:
            evicted, _ = self._entries.popitem(last=False)
        self._entries[key] = (pair, self.now)
        return evicted

    def gc(self, now: Optional[int] = None) -> int:
        """Drop expired entries; returns how many were evicted."""
        if now is not None:
            if now < self.now:
                raise ValueError("logical time cannot go backwards")
            self.now = now
        n = 0
        # entries are kept in last-seen order, so expired ones form a prefix
        while self._entries:
            key, ent = next(iter(self._entries.items()))
            if self._live(ent[1]):
                break
            del self._entries[key]
            n += 1
        return n

    def live_count(self) -> int:
        return sum(1 for ent in self._entries.values() if self._live(ent[1]))

    def items(self):
        return [(k, v[0]) for k, v in self._entries.items() if self._live(v[1])]


def conntrack_gc(conntrack: ConntrackTable, now: int) -> int:
    return conntrack.gc(now)


class SaclGateway:
    """One SACL Gateway instance; ``tables`` is replaced whole by :meth:`install`.

    ``conntrack`` holds sessions accepted for local server workloads and is
    what replies are classified with. ``client_conntrack`` holds sessions
    opened by local client workloads and validates the replies they receive.
    """

    def __init__(self, gateway_id: str, tables: Optional[GatewayTables] = None,
                 capacity: int = 1 << 20, ttl: int = 300):
        self.gateway_id = gateway_id
        self.tables = tables or GatewayTables()
        self.conntrack = ConntrackTable(capacity, ttl)
        self.client_conntrack = ConntrackTable(capacity, ttl)

    def install(self, tables: GatewayTables) -> None:
        self.tables = tables

    def advance(self, dt: int) -> None:
        self.conntrack.advance(dt)
        self.client_conntrack.advance(dt)

    def entry_count(self) -> int:
        return self.tables.size + len(self.conntrack) + len(self.client_conntrack)

    def _default(self, pkt: SaclPacket, reason: str) -> Verdict:
        if self.tables.default_action is DefaultAction.ALLOW:
            return pkt.without_ids()
        return Dropped(self.gateway_id, reason)

    def classify(self, key: tuple, lid: Optional[int]) -> Union[IdPair, str]:
        """ID pair for the client flow ``key`` (integer five-tuple), or why there is none."""
        pair = self.client_conntrack.lookup(key)
        if pair is not None:
            return pair
        client = self.tables.client_index.get((key[0], lid))
        if client is None:
            return "unknown client"
        server = self.tables.server_index.get((key[1], key[3]))
        if server is None:
            return "unknown server"
        pair = (client, server)
        self.client_conntrack.insert(key, pair)
        return pair

    def admit(self, ids: IdPair, key: tuple) -> bool:
        """Server-side filter decision; records the session when the pair is allowed."""
        if ids != (0, 0) and ids in self.tables.filter_rules:
            self.conntrack.insert(key, ids)
            return True
        return self.conntrack.lookup(key) is not None

    def egress_client(self, pkt: SaclPacket) -> Verdict:
        """Attach both IDs to a packet a local client workload is sending."""
        pair = self.classify(flow_key(pkt), codec.read_lid(pkt.hop_limit))
        if type(pair) is str:
            return self._default(pkt, pair)
        return pkt.evolve(client_sacl=pair[0], server_sacl=pair[1], hop_limit=DEFAULT_HOP_LIMIT)

    def ingress_server(self, pkt: SaclPacket) -> Verdict:
        """Filter a packet arriving for a local server workload."""
        if self.admit(pkt.ids, flow_key(pkt)):
            return pkt.without_ids()
        return self._default(pkt, "no rule" if pkt.has_ids else "no ids")

    def egress_server(self, pkt: SaclPacket) -> Verdict:
        """Restore the session's ID pair on a reply from a local server workload."""
        pair = self.conntrack.lookup(flow_key(pkt, reverse=True))
        if pair is None:
            return self._default(pkt, "untracked reply")
        return pkt.with_ids(*pair)

    def ingress_client(self, pkt: SaclPacket) -> Verdict:
        """Deliver a reply to a local client workload that opened the session."""
        if self.client_conntrack.lookup(flow_key(pkt, reverse=True)) is None:
            return self._default(pkt, "untracked reply")
        return pkt.without_ids()

    def handle_wire(self, op: str, data: bytes) -> Union[bytes, Dropped]:
        """Run one of the four processing steps on wire bytes."""
        out = getattr(self, op)(codec.decode(data))
        return out if isinstance(out, Dropped) else codec.encode(out)
