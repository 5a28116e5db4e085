"""Wire format for SACL IDs: an IPv6 Hop-by-Hop option, plus LID marking in Hop Limit.

Layout of the extension header emitted by :func:`encode`::

    +--------+--------+--------+--------+
    |  NH    | HdrLen | 0x1E   |   16   |
    +--------+--------+--------+--------+
    |      client SACL ID (64 bit)      |
    |      server SACL ID (64 bit)      |
    +--------+--------+--------+--------+
    | 0x01   | 0x02   | 0x00   | 0x00   |   PadN to an 8-octet boundary
    +--------+--------+--------+--------+

The option type has its two high bits cleared, so routers that do not
know it skip the option and keep processing the packet.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .model import ABSENT, MAX_SACL_ID, ModelError, Proto

SACL_OPTION_TYPE = 0x1E
SACL_OPTION_LEN = 16
PAD1 = 0x00
PADN = 0x01
NH_HOP_BY_HOP = 0
IPV6_HEADER_LEN = 40
UDP_HEADER_LEN = 8
TCP_HEADER_LEN = 20

DEFAULT_HOP_LIMIT = 64
LID_BASE = 100
LID_MODULUS = 128

_IPV6 = struct.Struct("!IHBB16s16s")
_UDP = struct.Struct("!HHHH")
_TCP = struct.Struct("!HHIIBBHHH")
_IDS = struct.Struct("!QQ")


class ParseError(ValueError):
    """Malformed or truncated packet."""


class WouldDiscard(ParseError):
    """An unrecognized option whose type bits tell a node to discard the packet."""

    def __init__(self, option_type: int):
        self.option_type = option_type
        self.action = option_type >> 6
        super().__init__(f"unrecognized option 0x{option_type:02x} with action bits {self.action:02b}")


@dataclass(frozen=True)
class SaclPacket:
    src_ip: ipaddress.IPv6Address
    dst_ip: ipaddress.IPv6Address
    src_port: int
    dst_port: int
    proto: Proto = Proto.TCP
    hop_limit: int = DEFAULT_HOP_LIMIT
    client_sacl: int = ABSENT
    server_sacl: int = ABSENT
    payload: bytes = b""

    def __post_init__(self):
        if type(self.src_ip) is not ipaddress.IPv6Address:
            object.__setattr__(self, "src_ip", ipaddress.IPv6Address(self.src_ip))
        if type(self.dst_ip) is not ipaddress.IPv6Address:
            object.__setattr__(self, "dst_ip", ipaddress.IPv6Address(self.dst_ip))
        if type(self.proto) is not Proto:
            object.__setattr__(self, "proto", Proto(self.proto))
        if not 0 <= self.hop_limit <= 255:
            raise ModelError(f"hop_limit {self.hop_limit} is not an 8-bit value")
        if not (0 <= self.client_sacl <= MAX_SACL_ID and 0 <= self.server_sacl <= MAX_SACL_ID):
            raise ModelError("SACL ID outside unsigned 64-bit range")
        if not (0 <= self.src_port <= 0xFFFF and 0 <= self.dst_port <= 0xFFFF):
            raise ModelError("port is not a 16-bit value")

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def has_ids(self) -> bool:
        return self.client_sacl != ABSENT or self.server_sacl != ABSENT

    @property
    def ids(self) -> Tuple[int, int]:
        return (self.client_sacl, self.server_sacl)

    def evolve(self, **changes) -> "SaclPacket":
        """Copy with ``changes`` applied; skips validation, so only pass trusted values."""
        new = object.__new__(SaclPacket)
        object.__setattr__(new, "__dict__", {**self.__dict__, **changes})
        return new

    def with_ids(self, client: int, server: int) -> "SaclPacket":
        return self.evolve(client_sacl=client, server_sacl=server)

    def without_ids(self) -> "SaclPacket":
        return self.evolve(client_sacl=ABSENT, server_sacl=ABSENT)


@dataclass
class _Parsed:
    first_word: int
    hop_limit: int
    src: bytes
    dst: bytes
    proto: int
    options: Optional[List[Tuple[int, bytes]]]  # None: no Hop-by-Hop header
    transport: bytes
    ids: Tuple[int, int] = (ABSENT, ABSENT)


def _pad(length: int) -> bytes:
    """Padding that brings an options area of ``length`` bytes to an 8-octet boundary."""
    k = -length % 8
    if k == 0:
        return b""
    if k == 1:
        return bytes([PAD1])
    return bytes([PADN, k - 2]) + bytes(k - 2)


def _hop_by_hop(next_header: int, options: Sequence[Tuple[int, bytes]]) -> bytes:
    body = b"".join(bytes([t, len(d)]) + d for t, d in options)
    body += _pad(2 + len(body))
    ext_len = (2 + len(body)) // 8 - 1
    if ext_len > 255:
        raise ModelError("Hop-by-Hop options exceed the maximum header length")
    return bytes([next_header, ext_len]) + body


def _transport(p: SaclPacket) -> bytes:
    if p.proto is Proto.UDP:
        return _UDP.pack(p.src_port, p.dst_port, UDP_HEADER_LEN + len(p.payload), 0) + p.payload
    return _TCP.pack(p.src_port, p.dst_port, 0, 0, (TCP_HEADER_LEN // 4) << 4, 0, 0xFFFF, 0, 0) + p.payload


def _assemble(first_word, hop_limit, src, dst, proto, options, transport) -> bytes:
    if options is None:
        ext, nh = b"", proto
    else:
        ext, nh = _hop_by_hop(proto, options), NH_HOP_BY_HOP
    length = len(ext) + len(transport)
    if length > 0xFFFF:
        raise ModelError("packet exceeds the IPv6 payload length limit (jumbograms unsupported)")
    return _IPV6.pack(first_word, length, nh, hop_limit, src, dst) + ext + transport


def encode(p: SaclPacket, extra_options: Sequence[Tuple[int, bytes]] = ()) -> bytes:
    """Serialize ``p`` to a full IPv6 packet.

    ``extra_options`` are foreign (type, data) TLVs placed before the SACL option;
    they exist so tests can build packets other nodes might emit.
    """
    if (p.client_sacl == ABSENT) != (p.server_sacl == ABSENT):
        raise ModelError("client and server SACL IDs must be both present or both absent")
    options = None
    if p.has_ids or extra_options:
        options = [(t, bytes(d)) for t, d in extra_options]
        if p.has_ids:
            options.append((SACL_OPTION_TYPE, _IDS.pack(p.client_sacl, p.server_sacl)))
    return _assemble(6 << 28, p.hop_limit, p.src_ip.packed, p.dst_ip.packed,
                     p.proto.number, options, _transport(p))


def _parse(buf: bytes, recognize_sacl: bool = True) -> _Parsed:
    buf = bytes(buf)
    if len(buf) < IPV6_HEADER_LEN:
        raise ParseError(f"truncated IPv6 header ({len(buf)} bytes)")
    first_word, plen, nh, hop_limit, src, dst = _IPV6.unpack_from(buf)
    if first_word >> 28 != 6:
        raise ParseError(f"not an IPv6 packet (version {first_word >> 28})")
    if plen != len(buf) - IPV6_HEADER_LEN:
        raise ParseError(f"payload length {plen} does not match {len(buf) - IPV6_HEADER_LEN} bytes present")
    off = IPV6_HEADER_LEN
    options = None
    ids = (ABSENT, ABSENT)
    if nh == NH_HOP_BY_HOP:
        if len(buf) < off + 2:
            raise ParseError("truncated Hop-by-Hop header")
        nh, ext_len = buf[off], buf[off + 1]
        end = off + (ext_len + 1) * 8
        if end > len(buf):
            raise ParseError(f"Hop-by-Hop header length {(ext_len + 1) * 8} overruns the packet")
        options = []
        i = off + 2
        while i < end:
            t = buf[i]
            if t == PAD1:
                options.append((PAD1, b""))
                i += 1
                continue
            if i + 2 > end:
                raise ParseError("truncated option header")
            olen = buf[i + 1]
            if i + 2 + olen > end:
                raise ParseError(f"option 0x{t:02x} overruns the Hop-by-Hop header")
            data = buf[i + 2:i + 2 + olen]
            if t == SACL_OPTION_TYPE and recognize_sacl:
                if olen != SACL_OPTION_LEN:
                    raise ParseError(f"SACL option data length {olen}, expected {SACL_OPTION_LEN}")
                ids = _IDS.unpack(data)
                if (ids[0] == ABSENT) != (ids[1] == ABSENT):
                    raise ParseError("SACL option carries only one of the two IDs")
            elif t != PADN and t >> 6:
                raise WouldDiscard(t)
            options.append((t, data))
            i += 2 + olen
        off = end
    if nh not in (6, 17):
        raise ParseError(f"unsupported next header {nh}")
    transport = buf[off:]
    if nh == 17:
        if len(transport) < UDP_HEADER_LEN:
            raise ParseError("truncated UDP header")
        if _UDP.unpack_from(transport)[2] != len(transport):
            raise ParseError("UDP length field mismatch")
    else:
        if len(transport) < TCP_HEADER_LEN:
            raise ParseError("truncated TCP header")
        doff = (transport[12] >> 4) * 4
        if doff < TCP_HEADER_LEN or doff > len(transport):
            raise ParseError(f"bad TCP data offset {doff}")
    return _Parsed(first_word, hop_limit, src, dst, nh, options, transport, ids)


def _transport_fields(parsed: _Parsed) -> Tuple[int, int, bytes]:
    t = parsed.transport
    sport, dport = struct.unpack_from("!HH", t)
    hlen = UDP_HEADER_LEN if parsed.proto == 17 else (t[12] >> 4) * 4
    return sport, dport, t[hlen:]


def decode(buf: bytes) -> SaclPacket:
    """Parse a wire packet; packets without the SACL option decode with both IDs absent."""
    parsed = _parse(buf)
    sport, dport, payload = _transport_fields(parsed)
    return SaclPacket(
        src_ip=ipaddress.IPv6Address(parsed.src),
        dst_ip=ipaddress.IPv6Address(parsed.dst),
        src_port=sport,
        dst_port=dport,
        proto=Proto.from_number(parsed.proto),
        hop_limit=parsed.hop_limit,
        client_sacl=parsed.ids[0],
        server_sacl=parsed.ids[1],
        payload=payload,
    )


@dataclass(frozen=True)
class TransportView:
    """What a node that walks extension headers sees once it reaches the transport layer."""

    proto: Proto
    src_port: int
    dst_port: int
    payload: bytes
    skipped_options: Tuple[int, ...]


def walk_to_transport(buf: bytes) -> TransportView:
    """Parse as a node unaware of the SACL option would: every unknown TLV is
    handled purely by its action bits."""
    parsed = _parse(buf, recognize_sacl=False)
    sport, dport, payload = _transport_fields(parsed)
    skipped = tuple(t for t, _ in parsed.options or () if t not in (PAD1, PADN))
    return TransportView(Proto.from_number(parsed.proto), sport, dport, payload, skipped)


def strip(buf: bytes) -> bytes:
    """Remove the SACL option, dropping the Hop-by-Hop header if nothing else is left."""
    parsed = _parse(buf)
    if parsed.options is None or all(t != SACL_OPTION_TYPE for t, _ in parsed.options):
        return bytes(buf)
    rest = [(t, d) for t, d in parsed.options if t not in (SACL_OPTION_TYPE, PAD1, PADN)]
    return _assemble(parsed.first_word, parsed.hop_limit, parsed.src, parsed.dst,
                     parsed.proto, rest or None, parsed.transport)


def mark_lid(hop_limit_field: int, lid: int) -> int:
    """Hop Limit value carrying ``lid``; the original field value is overwritten."""
    return lid % LID_MODULUS + LID_BASE


def read_lid(hop_limit: int) -> Optional[int]:
    """LID carried in ``hop_limit``, or None when the value is outside the LID band.

    LIDs congruent mod 128 are indistinguishable, and a genuine Hop Limit in
    100..227 reads as a LID. The caller resets Hop Limit to the default.
    """
    if LID_BASE <= hop_limit < LID_BASE + LID_MODULUS:
        return hop_limit - LID_BASE
    return None
