"""Informational microbenchmark for codec and gateway lookups. Never gating."""

from __future__ import annotations

import ipaddress
import random
import time
from typing import Dict

from . import codec
from .codec import SaclPacket
from .gateway import GatewayTables, SaclGateway


def _tables(alpha: float, rng: random.Random) -> GatewayTables:
    n_client = max(1, int(128 * alpha))
    n_server = max(1, int(3840 * alpha))
    client_map = {(ipaddress.IPv6Address(f"fd00::1:{i + 1:x}"), None): rng.getrandbits(63) + 1
                  for i in range(n_client)}
    server_map = {(ipaddress.IPv6Address(f"fd00::2:{i + 1:x}"), 8080): rng.getrandbits(63) + 1
                  for i in range(n_server)}
    return GatewayTables(client_map, server_map)


def run_bench(packets: int = 20000, alpha: float = 1.0, seed: int = 0) -> Dict[str, float]:
    """Packets per second for encode+decode, and for first-packet client egress."""
    rng = random.Random(seed)
    tables = _tables(alpha, rng)
    clients = [k[0] for k in tables.client_map]
    servers = [k[0] for k in tables.server_map]
    pkts = [SaclPacket(rng.choice(clients), rng.choice(servers), 1024 + i % 60000, 8080,
                       client_sacl=1, server_sacl=2, payload=b"x") for i in range(packets)]

    t = time.perf_counter()
    for p in pkts:
        codec.decode(codec.encode(p))
    codec_pps = packets / (time.perf_counter() - t)

    gw = SaclGateway("bench", tables)
    plain = [p.without_ids() for p in pkts]
    t = time.perf_counter()
    for p in plain:
        gw.egress_client(p)
    egress_pps = packets / (time.perf_counter() - t)
    return {"packets": packets, "alpha": alpha, "codec_roundtrip_pps": codec_pps,
            "gateway_egress_pps": egress_pps, "gateway_entries": tables.size}
