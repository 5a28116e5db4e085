"""Regenerate oracle_frozen.json from the brute-force oracles (never from the entry model).

    python tests/data/make_frozen.py
"""

import json
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

import oracles  # noqa: E402
from helpers import variant  # noqa: E402
from acila.scenario import assumption_scenario  # noqa: E402


def record(spec):
    g = oracles.priority_graph(spec.workloads, spec.policies)
    gws = {}
    for gw in spec.topology.gateway_ids:
        escc, worst, _, ess = oracles.gateway_counts(spec.workloads, g, spec.connections, gw)
        gws[gw] = [escc, worst, ess]
    return {"el": oracles.el(spec.workloads, g), "es": oracles.es(g), "gateways": gws}


def main():
    out = {f"random{s}": record(variant(s)) for s in range(40)}
    out["assumption_alpha0.1"] = record(assumption_scenario(0.1))
    (HERE / "oracle_frozen.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
