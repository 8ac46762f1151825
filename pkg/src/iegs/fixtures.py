"""Deterministic synthetic test systems.

``two_block`` is a 6-node power / 7-node gas system split into one power
region plus the gas block. ``four_block`` is a 118-node power / 48-node gas
system with three power regions and a radial passive gas network (the
compressors close the only loops). Both are generated from fixed seeds, so the
bundled YAML copies can be regenerated bit for bit.
"""

from __future__ import annotations

from collections import defaultdict, deque

import numpy as np

from .model import (
    CoalGenerator,
    GasCompressor,
    GasFiredGenerator,
    GasNode,
    GasPipeline,
    GasWell,
    IegsSystem,
    Load,
    PowerLine,
    PowerNode,
)


def _r(v, nd=4):
    return float(round(float(v), nd))


def two_block() -> IegsSystem:
    th = 0.5
    pn = [PowerNode("1", 0.0, 0.0, "A")] + [PowerNode(str(i), -th, th, "A") for i in range(2, 7)]
    lines = [
        PowerLine("L1", "1", "2", 0.10, 200.0),
        PowerLine("L2", "1", "3", 0.12, 200.0),
        PowerLine("L3", "2", "3", 0.08, 200.0),
        PowerLine("L4", "3", "4", 0.15, 150.0),
        PowerLine("L5", "4", "5", 0.10, 200.0),
        PowerLine("L6", "4", "6", 0.12, 200.0),
        PowerLine("L7", "5", "6", 0.08, 200.0),
    ]
    coal = [
        CoalGenerator("C1", "1", 0.0, 250.0, 0.012, 18.0, 150.0),
        CoalGenerator("C2", "4", 0.0, 200.0, 0.018, 22.0, 120.0),
    ]
    gfg = [
        GasFiredGenerator("GF1", "2", "3", 0.0, 150.0, 0.2),
        GasFiredGenerator("GF2", "5", "6", 0.0, 150.0, 0.2),
    ]
    gn = [GasNode("1", 2500.0, 4900.0)] + [GasNode(str(i), 900.0, 4900.0) for i in range(2, 7)]
    gn.append(GasNode("7", 900.0, 4900.0))
    # radial and fed from node 1 only; node 4 hangs off the compressor.
    # W is sized so each exact drop at peak flow stays near a third of the
    # pressure range
    pipes = [
        GasPipeline("P1", "1", "2", 20.0),
        GasPipeline("P2", "2", "3", 5.0),
        GasPipeline("P3", "2", "6", 4.0),
        GasPipeline("P4", "6", "5", 1.0),
        GasPipeline("P5", "6", "7", 0.5),
    ]
    comps = [GasCompressor("K1", "3", "4", 1.3, 50.0)]
    # two suppliers at one terminal
    wells = [GasWell("W1", "1", 0.0, 80.0, 85.0), GasWell("W2", "1", 0.0, 60.0, 95.0)]
    loads = [
        Load("D1", "2", "power", 70.0),
        Load("D2", "3", "power", 90.0),
        Load("D3", "5", "power", 80.0),
        Load("D4", "6", "power", 100.0),
        Load("D5", "3", "gas", 10.0),
        Load("D6", "4", "gas", 8.0),
        Load("D7", "5", "gas", 12.0),
        Load("D8", "7", "gas", 6.0),
    ]
    # single power region: the only coupling is through the gas-fired units
    return IegsSystem(
        tuple(pn), tuple(lines), tuple(coal), tuple(gfg), tuple(gn), tuple(pipes), tuple(comps),
        tuple(wells), tuple(loads), base_mva=100.0, name="two-block",
    )


def _tree_depths(parent):
    depth = {0: 0}
    for i in range(1, len(parent)):
        depth[i] = depth[parent[i]] + 1
    return depth


def four_block(seed: int = 7) -> IegsSystem:
    """118-node power / 48-node gas system in three power regions.

    The gas network is a tree rooted at the main well; five tree edges are
    compressors, the rest passive pipelines. Pipeline constants are sized so
    the pressure drop along any root path stays inside the pressure boxes at
    the heaviest load the fixture is meant for.
    """
    rng = np.random.default_rng(seed)
    sizes = (40, 39, 39)
    regions = []
    nid = 1
    for r, n in enumerate(sizes):
        regions.append([str(nid + k) for k in range(n)])
        nid += n

    th = 0.6
    pnodes = []
    for r, ids in enumerate(regions):
        for i in ids:
            lo, hi = (0.0, 0.0) if i == "1" else (-th, th)
            pnodes.append(PowerNode(i, lo, hi, str(r + 1)))

    lines = []
    seen = set()

    def add_line(a, b, cap):
        key = (min(a, b, key=int), max(a, b, key=int))
        if a == b or key in seen:
            return
        seen.add(key)
        lines.append(PowerLine(f"L{len(lines) + 1}", key[0], key[1], _r(rng.uniform(0.04, 0.12)), cap))

    for ids in regions:
        n = len(ids)
        for k in range(n):
            add_line(ids[k], ids[(k + 1) % n], 400.0)
        for _ in range(n // 2):
            a, b = rng.choice(n, 2, replace=False)
            add_line(ids[a], ids[b], 400.0)
    for ra, rb in ((0, 1), (1, 2), (0, 2)):
        for _ in range(2):
            add_line(regions[ra][rng.integers(len(regions[ra]))], regions[rb][rng.integers(len(regions[rb]))], 300.0)

    coal = []
    gfg = []
    gas_ids = [str(i) for i in range(1, 49)]
    gen_gas_nodes = rng.choice(np.arange(12, 48), 6, replace=False)
    for r, ids in enumerate(regions):
        at = rng.choice(len(ids), 7, replace=False)
        for k in range(5):
            coal.append(
                CoalGenerator(
                    f"C{len(coal) + 1}", ids[at[k]], 0.0, _r(rng.uniform(150, 300), 0),
                    _r(rng.uniform(0.004, 0.02)), _r(rng.uniform(16, 28), 2), _r(rng.uniform(150, 400), 0),
                )
            )
        for k in range(5, 7):
            gfg.append(
                GasFiredGenerator(
                    f"GF{len(gfg) + 1}", ids[at[k]], gas_ids[gen_gas_nodes[len(gfg)]], 0.0,
                    _r(rng.uniform(50, 75), 0), _r(rng.uniform(0.18, 0.22), 3),
                )
            )

    loads = []
    for ids in regions:
        for i in ids:
            if rng.random() < 0.7:
                loads.append(Load(f"D{len(loads) + 1}", i, "power", _r(rng.uniform(12, 40), 1)))

    # radial gas network
    ng = 48
    parent = [-1] + [int(rng.integers(max(0, i - 5), i)) for i in range(1, ng)]
    depth = _tree_depths(parent)
    well_data = [(150.0, 70.0), (75.0, 75.0), (60.0, 80.0)]
    gas_load = np.zeros(ng)
    for i in range(3, ng):
        if rng.random() < 0.6:
            gas_load[i] = _r(rng.uniform(3, 9), 1)
    for i in range(ng):
        if gas_load[i] > 0:
            loads.append(Load(f"D{len(loads) + 1}", gas_ids[i], "gas", float(gas_load[i])))
    # subtree demand at the heaviest intended load, generators at full output
    peak = 1.3 * gas_load.copy()
    for g in gfg:
        peak[gas_ids.index(g.gas_node)] += g.chi * g.g_max
    sub = peak.copy()
    for i in range(ng - 1, 0, -1):
        sub[parent[i]] += sub[i]
    children = defaultdict(list)
    for i in range(1, ng):
        children[parent[i]].append(i)
    # compressors on five edges below the wells
    cand = [i for i in range(ng) if depth[i] >= 3 and sub[i] > 10]
    comp_child = set(int(c) for c in rng.choice(cand, 5, replace=False))

    pi_lo, pi_hi = 1600.0, 4900.0
    max_depth = max(depth.values())
    budget = 0.8 * (pi_hi - pi_lo) / max_depth
    gnodes = [GasNode(gas_ids[i], pi_hi * 0.7 if i == 0 else pi_lo, pi_hi) for i in range(ng)]
    pipes = []
    comps = []
    for i in range(1, ng):
        a, b = gas_ids[parent[i]], gas_ids[i]
        if i in comp_child:
            comps.append(GasCompressor(f"K{len(comps) + 1}", a, b, 1.4, _r(1.5 * sub[i], 1)))
        else:
            pipes.append(GasPipeline(f"P{len(pipes) + 1}", a, b, _r(max(sub[i], 1.0) ** 2 / budget, 4)))
    # all wells feed the root, so every flow is fixed by the nodal demands
    wells = [GasWell(f"W{k + 1}", gas_ids[0], 0.0, cap, cost) for k, (cap, cost) in enumerate(well_data)]
    return IegsSystem(
        tuple(pnodes), tuple(lines), tuple(coal), tuple(gfg), tuple(gnodes), tuple(pipes), tuple(comps),
        tuple(wells), tuple(loads), base_mva=100.0, name="four-block",
    )
