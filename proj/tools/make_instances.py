#!/usr/bin/env python3
"""Writes the bundled synthetic six-node instances into data/.

Values are synthetic. Topology: one source node feeding five loads through a
radial supply tree, return pipes mirroring it; three electric buses with a CHP
unit, a gas boiler, a wind farm and a grid tie.
"""
import argparse
import json
import math
from pathlib import Path

SUPPLY = [("P12", "1", "2", 2500.0, 0.20), ("P23", "2", "3", 1800.0, 0.10), ("P24", "2", "4", 2000.0, 0.10),
          ("P15", "1", "5", 2200.0, 0.15), ("P56", "5", "6", 1500.0, 0.08)]
LOADS = {"2": 3.0e6, "3": 2.2e6, "4": 2.6e6, "5": 2.8e6, "6": 1.8e6}
EXCHANGER = {"2": (15.0, 60.0), "3": (10.0, 45.0), "4": (12.0, 50.0), "5": (14.0, 55.0), "6": (8.0, 35.0)}
NO_POWER = [{"B": 1.0, "K": 0.0, "v": 0.0}, {"B": -1.0, "K": 0.0, "v": 0.0}]
NO_HEAT = [{"B": 0.0, "K": 1.0, "v": 0.0}, {"B": 0.0, "K": -1.0, "v": 0.0}]
CHILDREN = {"1": ["2", "5"], "2": ["3", "4"], "5": ["6"]}


def downstream(node):
    out = [node]
    for c in CHILDREN.get(node, []):
        out += downstream(c)
    return out


START_HOUR = 12.0  # horizon runs noon to noon so the night valley sits mid-horizon


def hour_of(t, n):
    return (START_HOUR + 24.0 * (t + 0.5) / n) % 24.0


def heat_demand(base, n):
    # Morning and evening peaks, shallow afternoon dip.
    return [round(base * (0.85 + 0.12 * math.cos(2 * math.pi * (hour_of(t, n) - 7) / 24)
                      + 0.06 * math.cos(4 * math.pi * (hour_of(t, n) - 19) / 24)), 1) for t in range(n)]


def electric_demand(base, n):
    return [round(base * (0.7 + 0.3 * max(0.0, math.sin(math.pi * (hour_of(t, n) - 6) / 16))), 1) for t in range(n)]


def wind(n, scale):
    return [round(scale * (0.55 + 0.4 * math.cos(2 * math.pi * (hour_of(t, n) - 2) / 24)), 1) for t in range(n)]


def grid_price(n, dt):
    # $/MWh: night valley, day plateau, evening peak.
    out = []
    for t in range(n):
        h = hour_of(t, n)
        p = 35.0 if h < 7 or h >= 22 else (95.0 if 17 <= h < 21 else 70.0)
        out.append(p * dt / 3600.0 * 1e-6)
    return out


def per_mwh(price, dt):
    return price * dt / 3600.0 * 1e-6


def build(n, degenerate=False):
    dt = 86400.0 / n
    pipes = []
    for pid, a, b, length, area in SUPPLY:
        lo = sum(EXCHANGER[k][0] for k in downstream(b))
        hi = sum(EXCHANGER[k][1] for k in downstream(b))
        if degenerate:
            lo = hi = 0.5 * (lo + hi)
        pipes.append((pid, a, b, length, area, lo, hi))

    def pipe(pid, a, b, length, area, lo, hi):
        return {"id": pid, "from": a, "to": b, "length": length, "area": area, "resistance": 40.0,
                "flow_min": lo, "flow_max": hi, "ambient": 5.0}

    nodes = [{"id": "1", "kind": "source", "exchanger_flow": {"min": 0.0, "max": 1000.0},
              "supply_temp": {"min": 60.0, "max": 120.0}, "return_temp": {"min": 20.0, "max": 80.0}}]
    for k, base in LOADS.items():
        lo, hi = EXCHANGER[k]
        if degenerate:
            lo = hi = 0.5 * (lo + hi)
        nodes.append({"id": k, "kind": "load", "demand": heat_demand(base, n),
                      "exchanger_flow": {"min": lo, "max": hi},
                      "supply_temp": {"min": 65.0, "max": 120.0}, "return_temp": {"min": 25.0, "max": 55.0}})

    sources = [
        {"id": "CHP1", "kind": "chp", "bus": "b1", "heat_node": "1",
         "polytope": [{"B": 1.0, "K": 0.2, "v": 30e6}, {"B": -1.0, "K": 0.5, "v": -6e6},
                      {"B": 0.0, "K": -1.0, "v": 0.0}, {"B": 0.0, "K": 1.0, "v": 18e6}],
         "ramp": {"down_e": -12e6 / 3600.0, "up_e": 12e6 / 3600.0, "down_h": -10e6 / 3600.0, "up_h": 10e6 / 3600.0},
         "cost": {"eta0": 0.0, "eta1": per_mwh(42.0, dt), "eta2": per_mwh(0.4, dt) * 1e-6,
                  "eta3": per_mwh(6.0, dt), "eta4": per_mwh(0.2, dt) * 1e-6, "eta5": per_mwh(0.05, dt) * 1e-6}},
        {"id": "GB1", "kind": "gas_boiler", "heat_node": "1",
         "polytope": [{"B": 0.0, "K": 1.0, "v": 14e6}, {"B": 0.0, "K": -1.0, "v": 0.0}] + NO_POWER,
         "cost": {"eta3": per_mwh(55.0, dt), "eta4": per_mwh(0.3, dt) * 1e-6}},
        {"id": "W1", "kind": "wind", "bus": "b2",
         "polytope": [{"B": 1.0, "K": 0.0, "v": 20e6}, {"B": -1.0, "K": 0.0, "v": 0.0}] + NO_HEAT,
         "cost": {"eta1": 0.0},
         "renewable": {"available": wind(n, 14e6), "curtailment_penalty": 1e-4}},
        {"id": "GRID", "kind": "grid", "bus": "b3",
         "polytope": [{"B": 1.0, "K": 0.0, "v": 40e6}, {"B": -1.0, "K": 0.0, "v": 0.0}] + NO_HEAT,
         "cost": {"eta1": grid_price(n, dt), "eta2": per_mwh(0.2, dt) * 1e-6}},
    ]

    flows = {p[0]: 0.5 * (p[5] + p[6]) for p in pipes}
    supply = [pipe(*p) for p in pipes]
    ret = [pipe("R" + p[0][1:], p[2], p[1], *p[3:]) for p in pipes]
    flows.update({"R" + p[0][1:]: 0.5 * (p[5] + p[6]) for p in pipes})
    return {
        "name": "six_node" + ("_degenerate" if degenerate else "") + ("" if n == 24 else f"_{n}"),
        "description": "Synthetic six-node combined heat and power test system. All values are synthetic.",
        "horizon": {"N": n, "dt": dt, "dx": 250.0},
        "physics": {"rho": 1000.0, "cp": 4182.0},
        "heat_network": {"nodes": nodes, "supply_pipes": supply, "return_pipes": ret},
        "electric_network": {
            "buses": [{"id": "b1", "demand": electric_demand(6e6, n)}, {"id": "b2", "demand": electric_demand(8e6, n)},
                      {"id": "b3", "demand": electric_demand(10e6, n)}],
            "lines": [{"id": "L12", "from": "b1", "to": "b2", "reactance": 0.08, "limit": 40e6},
                      {"id": "L23", "from": "b2", "to": "b3", "reactance": 0.10, "limit": 40e6},
                      {"id": "L13", "from": "b1", "to": "b3", "reactance": 0.12, "limit": 40e6}],
            "slack_bus": "b3"},
        "sources": sources,
        "initial_temperatures": {"steady_state": {"supply_temperature": {"1": 70.0}, "flows": flows}},
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, n, degenerate in [("six_node.json", 24, False), ("six_node_96.json", 96, False),
                                ("six_node_degenerate.json", 24, True)]:
        (out / name).write_text(json.dumps(build(n, degenerate), indent=2) + "\n")


if __name__ == "__main__":
    main()
