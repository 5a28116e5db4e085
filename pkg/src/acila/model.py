"""Domain types shared by the controller, gateways, fabric and entry model.

Everything here is an immutable value type. Validation happens in
``__post_init__``; there is no other behavior apart from
:func:`labelset_matches`.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Iterable, Mapping, Optional, Tuple, Union

MAX_SACL_ID = (1 << 64) - 1
ABSENT = 0  # SaclId sentinel: no identifier attached


class ModelError(ValueError):
    """A value violates a domain-type invariant."""


class Operator(str, Enum):
    IN = "in"
    NOT_IN = "not_in"


class Action(str, Enum):
    ALLOW = "allow"
    PRIORITY = "priority"


class Kind(str, Enum):
    CLIENT_ONLY = "client_only"
    CLIENT_AND_SERVER = "client_and_server"


class Proto(str, Enum):
    TCP = "tcp"
    UDP = "udp"

    @property
    def number(self) -> int:
        return 6 if self is Proto.TCP else 17

    @classmethod
    def from_number(cls, n: int) -> "Proto":
        if n == 6:
            return cls.TCP
        if n == 17:
            return cls.UDP
        raise ModelError(f"unsupported transport protocol {n}")


def _check_text(what: str, s: str) -> None:
    if not isinstance(s, str) or not s.strip():
        raise ModelError(f"{what} must be a non-empty string, got {s!r}")


@dataclass(frozen=True, order=True)
class Label:
    key: str
    value: str

    def __post_init__(self):
        _check_text("label key", self.key)
        _check_text("label value", self.value)

    def __str__(self):
        return f"{self.key}:{self.value}"


@dataclass(frozen=True)
class LabelSet:
    """A canonical, order-independent set of labels with at most one value per key."""

    labels: Tuple[Label, ...] = ()

    def __post_init__(self):
        canon = tuple(sorted(self.labels))
        keys = [lb.key for lb in canon]
        if len(set(keys)) != len(keys):
            dup = sorted({k for k in keys if keys.count(k) > 1})
            raise ModelError(f"duplicate label keys: {', '.join(dup)}")
        object.__setattr__(self, "labels", canon)

    @classmethod
    def of(cls, labels: Union[Mapping[str, str], Iterable[Tuple[str, str]], None] = None, **kw: str) -> "LabelSet":
        """Build from a mapping or (key, value) pairs; keyword args are merged in."""
        pairs = list(labels.items()) if isinstance(labels, Mapping) else list(labels or ())
        pairs.extend(kw.items())
        return cls(tuple(Label(k, v) for k, v in pairs))

    def get(self, key: str) -> Optional[str]:
        for lb in self.labels:
            if lb.key == key:
                return lb.value
        return None

    def as_dict(self) -> dict:
        return {lb.key: lb.value for lb in self.labels}

    def __iter__(self):
        return iter(self.labels)

    def __len__(self):
        return len(self.labels)

    def __str__(self):
        return "{" + ", ".join(str(lb) for lb in self.labels) + "}"


SaclId = int


def check_sacl_id(value: int, *, allow_absent: bool = False) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ModelError(f"SACL ID must be an integer, got {value!r}")
    if not 0 <= value <= MAX_SACL_ID:
        raise ModelError(f"SACL ID {value} outside unsigned 64-bit range")
    if value == ABSENT and not allow_absent:
        raise ModelError("SACL ID 0 is reserved as 'absent'")
    return value


@dataclass(frozen=True)
class Service:
    sacl_id: SaclId
    labels: LabelSet

    def __post_init__(self):
        check_sacl_id(self.sacl_id)


@dataclass(frozen=True, order=True)
class Placement:
    rack: int
    server: int
    vm: int = 0

    def __post_init__(self):
        for name in ("rack", "server", "vm"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ModelError(f"placement {name} must be a non-negative integer, got {v!r}")

    @property
    def server_id(self) -> str:
        """Id of the physical server, which is also the id of its SACL Gateway."""
        return server_id(self.rack, self.server)


def server_id(rack: int, server: int) -> str:
    return f"r{rack}s{server}"


def _check_port(what: str, port) -> None:
    if not isinstance(port, int) or isinstance(port, bool) or not 1 <= port <= 65535:
        raise ModelError(f"{what} must be in 1..65535, got {port!r}")


@dataclass(frozen=True)
class Workload:
    workload_id: str
    labels: LabelSet
    ip: ipaddress.IPv6Address
    placement: Placement
    listen_port: Optional[int] = None
    lid: Optional[int] = None

    def __post_init__(self):
        _check_text("workload_id", self.workload_id)
        if not isinstance(self.ip, ipaddress.IPv6Address):
            try:
                object.__setattr__(self, "ip", ipaddress.IPv6Address(self.ip))
            except ValueError as e:
                raise ModelError(f"workload {self.workload_id}: {e}") from None
        if self.listen_port is not None:
            _check_port(f"workload {self.workload_id} listen_port", self.listen_port)
        if self.lid is not None and (not isinstance(self.lid, int) or self.lid < 0):
            raise ModelError(f"workload {self.workload_id}: lid must be a non-negative integer")

    @property
    def kind(self) -> Kind:
        return Kind.CLIENT_ONLY if self.listen_port is None else Kind.CLIENT_AND_SERVER

    @property
    def is_server(self) -> bool:
        return self.listen_port is not None

    @cached_property
    def gateway_id(self) -> str:
        return self.placement.server_id


@dataclass(frozen=True)
class Selector:
    key: str
    operator: Operator
    values: frozenset

    def __post_init__(self):
        _check_text("selector key", self.key)
        object.__setattr__(self, "operator", Operator(self.operator))
        vals = frozenset(self.values)
        if not vals:
            raise ModelError(f"selector on {self.key!r} has an empty value set")
        object.__setattr__(self, "values", vals)

    def holds(self, labels: LabelSet) -> bool:
        present = labels.get(self.key) in self.values
        return present if self.operator is Operator.IN else not present


def labelset_matches(selectors, labels: LabelSet) -> bool:
    """True iff every selector holds for ``labels`` (selectors are ANDed).

    A missing key satisfies ``not_in``.
    """
    if not selectors:
        raise ModelError("at least one selector is required")
    return all(s.holds(labels) for s in selectors)


@dataclass(frozen=True)
class Policy:
    policy_id: str
    client_selectors: Tuple[Selector, ...]
    server_selectors: Tuple[Selector, ...]
    action: Action = Action.ALLOW
    value: Optional[int] = None

    def __post_init__(self):
        _check_text("policy_id", self.policy_id)
        object.__setattr__(self, "client_selectors", tuple(self.client_selectors))
        object.__setattr__(self, "server_selectors", tuple(self.server_selectors))
        object.__setattr__(self, "action", Action(self.action))
        if not self.client_selectors or not self.server_selectors:
            raise ModelError(f"policy {self.policy_id}: both selector lists must be non-empty")
        _check_value(f"policy {self.policy_id}", self.action, self.value)


def _check_value(what: str, action: Action, value) -> None:
    if action is Action.PRIORITY:
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= 255:
            raise ModelError(f"{what}: priority value must be an 8-bit unsigned integer, got {value!r}")
    elif value is not None:
        raise ModelError(f"{what}: value is only allowed with action=priority")


@dataclass(frozen=True, order=True)
class Rule:
    client: SaclId
    server: SaclId
    action: Action = Action.ALLOW
    value: Optional[int] = field(default=None, compare=True)

    def __post_init__(self):
        check_sacl_id(self.client)
        check_sacl_id(self.server)
        object.__setattr__(self, "action", Action(self.action))
        _check_value(f"rule ({self.client},{self.server})", self.action, self.value)

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.client, self.server)

    def __str__(self):
        tail = f",priority,{self.value}" if self.action is Action.PRIORITY else ",allow"
        return f"({self.client},{self.server}{tail})"


@dataclass(frozen=True, order=True)
class FiveTuple:
    src_ip: ipaddress.IPv6Address
    dst_ip: ipaddress.IPv6Address
    src_port: int
    dst_port: int
    proto: Proto = Proto.TCP

    def __post_init__(self):
        for name in ("src_ip", "dst_ip"):
            v = getattr(self, name)
            if not isinstance(v, ipaddress.IPv6Address):
                object.__setattr__(self, name, ipaddress.IPv6Address(v))
        _check_port("src_port", self.src_port)
        _check_port("dst_port", self.dst_port)
        object.__setattr__(self, "proto", Proto(self.proto))

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.proto)

    def __str__(self):
        return f"{self.proto.value} [{self.src_ip}]:{self.src_port} -> [{self.dst_ip}]:{self.dst_port}"
