"""Shared scenario builders for the test modules."""

from __future__ import annotations

from acila.controller import Controller
from acila.fabric import Fabric
from acila.scenario import random_scenario


def variant(seed: int):
    """Random bounded scenario; the seed also picks client-only and LID mixes."""
    return random_scenario(seed, client_only_prob=0.25 if seed % 2 else 0.0,
                           lid_prob=0.3 if seed % 3 == 0 else 0.0)


def build(spec, mode=None, seed=0):
    ctl = Controller(spec.topology.gateway_ids, spec.topology.switch_ids, spec.default_action)
    for w in spec.workloads:
        ctl.register_workload(w)
    for p in spec.policies:
        ctl.upsert_policy(p)
    fab = Fabric(spec.topology, ctl, seed=seed, **({"mode": mode} if mode else {}))
    fab.sync()
    return ctl, fab
