"""Domain types for integrated electricity-gas systems and the constraint builders
of the power and gas blocks.

All quantities are in physical units: MW for power, Sm3/h for gas, bar^2 for
pressure squares, radians for phase angles and per-unit reactance on
``base_mva``.
"""

from __future__ import annotations

import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp


def id_key(cid):
    """Natural sort key so that ``"10"`` sorts after ``"9"`` and ``"L10"`` after ``"L9"``."""
    parts = re.split(r"(\d+)", str(cid))
    return tuple((0, int(t), "") if t.isdigit() else (1, 0, t) for t in parts if t)


# --------------------------------------------------------------------------
# components
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerNode:
    id: str
    theta_min: float
    theta_max: float
    region: Optional[str] = None
    is_virtual: bool = False
    mirror_of: Optional[str] = None


@dataclass(frozen=True)
class PowerLine:
    id: str
    from_node: str
    to_node: str
    x: float
    p_cap: float


@dataclass(frozen=True)
class CoalGenerator:
    id: str
    node: str
    p_min: float
    p_max: float
    c1: float
    c2: float
    c3: float = 0.0

    def cost(self, p):
        return self.c1 * p * p + self.c2 * p + self.c3


@dataclass(frozen=True)
class GasFiredGenerator:
    id: str
    power_node: str
    gas_node: str
    g_min: float
    g_max: float
    chi: float
    is_virtual: bool = False
    mirror_of: Optional[str] = None


@dataclass(frozen=True)
class GasNode:
    id: str
    pi_min: float
    pi_max: float


@dataclass(frozen=True)
class GasPipeline:
    id: str
    from_node: str
    to_node: str
    weymouth: float
    g_cap_min: Optional[float] = None
    g_cap_max: Optional[float] = None
    fixed_direction: bool = False


@dataclass(frozen=True)
class GasCompressor:
    id: str
    from_node: str
    to_node: str
    alpha: float
    g_cap: float


@dataclass(frozen=True)
class GasWell:
    id: str
    node: str
    g_min: float
    g_max: float
    cost: float


@dataclass(frozen=True)
class Load:
    id: str
    node: str
    kind: str  # "power" | "gas"
    amount: float


@dataclass(frozen=True)
class IegsSystem:
    power_nodes: tuple[PowerNode, ...] = ()
    power_lines: tuple[PowerLine, ...] = ()
    coal_generators: tuple[CoalGenerator, ...] = ()
    gas_fired_generators: tuple[GasFiredGenerator, ...] = ()
    gas_nodes: tuple[GasNode, ...] = ()
    pipelines: tuple[GasPipeline, ...] = ()
    compressors: tuple[GasCompressor, ...] = ()
    wells: tuple[GasWell, ...] = ()
    loads: tuple[Load, ...] = ()
    base_mva: float = 100.0
    name: str = ""

    @property
    def regions(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for n in self.power_nodes:
            if n.region is not None:
                out[n.region].append(n.id)
        return {r: out[r] for r in sorted(out, key=id_key)}

    def power_load(self, node_id) -> float:
        return sum(d.amount for d in self.loads if d.kind == "power" and d.node == node_id)

    def gas_load(self, node_id) -> float:
        return sum(d.amount for d in self.loads if d.kind == "gas" and d.node == node_id)

    def scaled_loads(self, factor: float) -> "IegsSystem":
        from dataclasses import replace

        loads = tuple(replace(d, amount=d.amount * factor) for d in self.loads)
        return replace(self, loads=loads)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def validate_system(sys: IegsSystem, require_regions: bool = True) -> list[str]:
    """Return a list of human-readable problems; empty when the system is valid."""
    issues: list[str] = []

    def dupes(kind, items):
        seen = set()
        for it in items:
            if it.id in seen:
                issues.append(f"duplicate {kind} id {it.id}")
            seen.add(it.id)
        return seen

    pnodes = dupes("power node", sys.power_nodes)
    gnodes = dupes("gas node", sys.gas_nodes)
    for kind, coll in [
        ("power line", sys.power_lines),
        ("coal generator", sys.coal_generators),
        ("gas-fired generator", sys.gas_fired_generators),
        ("pipeline", sys.pipelines),
        ("compressor", sys.compressors),
        ("well", sys.wells),
        ("load", sys.loads),
    ]:
        dupes(kind, coll)

    def need_power(ref, owner):
        if ref not in pnodes:
            issues.append(f"{owner}: unresolved power node {ref}")

    def need_gas(ref, owner):
        if ref not in gnodes:
            issues.append(f"{owner}: unresolved gas node {ref}")

    def bounds(lo, hi, owner, what):
        if not lo <= hi:
            issues.append(f"{owner}: inverted {what} bounds ({lo} > {hi})")

    if sys.base_mva <= 0:
        issues.append(f"base_mva must be positive, got {sys.base_mva}")
    for n in sys.power_nodes:
        bounds(n.theta_min, n.theta_max, f"power node {n.id}", "theta")
        if require_regions and n.region is None:
            issues.append(f"power node {n.id}: no region assigned")
    for l in sys.power_lines:
        need_power(l.from_node, f"power line {l.id}")
        need_power(l.to_node, f"power line {l.id}")
        if l.from_node == l.to_node:
            issues.append(f"power line {l.id}: both ends at node {l.from_node}")
        if not l.x > 0:
            issues.append(f"power line {l.id}: reactance must be positive, got {l.x}")
        if not l.p_cap > 0:
            issues.append(f"power line {l.id}: thermal limit must be positive, got {l.p_cap}")
    for g in sys.coal_generators:
        need_power(g.node, f"coal generator {g.id}")
        if g.p_min < 0:
            issues.append(f"coal generator {g.id}: negative p_min {g.p_min}")
        bounds(g.p_min, g.p_max, f"coal generator {g.id}", "output")
        if g.c1 < 0:
            issues.append(f"coal generator {g.id}: c1 must be >= 0 for a convex cost, got {g.c1}")
    for g in sys.gas_fired_generators:
        need_power(g.power_node, f"gas-fired generator {g.id}")
        need_gas(g.gas_node, f"gas-fired generator {g.id}")
        if g.g_min < 0:
            issues.append(f"gas-fired generator {g.id}: negative g_min {g.g_min}")
        bounds(g.g_min, g.g_max, f"gas-fired generator {g.id}", "output")
        if not g.chi > 0:
            issues.append(f"gas-fired generator {g.id}: chi must be positive, got {g.chi}")
    for n in sys.gas_nodes:
        if n.pi_min < 0:
            issues.append(f"gas node {n.id}: negative pi_min {n.pi_min}")
        bounds(n.pi_min, n.pi_max, f"gas node {n.id}", "pressure-square")
    for p in sys.pipelines:
        need_gas(p.from_node, f"pipeline {p.id}")
        need_gas(p.to_node, f"pipeline {p.id}")
        if p.from_node == p.to_node:
            issues.append(f"pipeline {p.id}: both ends at node {p.from_node}")
        if not p.weymouth > 0:
            issues.append(f"pipeline {p.id}: Weymouth constant must be positive, got {p.weymouth}")
        if p.g_cap_min is not None and p.g_cap_min > 0:
            issues.append(f"pipeline {p.id}: g_cap_min must be <= 0, got {p.g_cap_min}")
        if p.g_cap_max is not None and p.g_cap_max < 0:
            issues.append(f"pipeline {p.id}: g_cap_max must be >= 0, got {p.g_cap_max}")
    for c in sys.compressors:
        need_gas(c.from_node, f"compressor {c.id}")
        need_gas(c.to_node, f"compressor {c.id}")
        if c.alpha < 1:
            issues.append(f"compressor {c.id}: alpha must be >= 1, got {c.alpha}")
        if not c.g_cap > 0:
            issues.append(f"compressor {c.id}: g_cap must be positive, got {c.g_cap}")
    for w in sys.wells:
        need_gas(w.node, f"well {w.id}")
        if w.g_min < 0:
            issues.append(f"well {w.id}: negative g_min {w.g_min}")
        bounds(w.g_min, w.g_max, f"well {w.id}", "output")
        if w.cost < 0:
            issues.append(f"well {w.id}: negative cost {w.cost}")
    for d in sys.loads:
        if d.kind == "power":
            need_power(d.node, f"load {d.id}")
        elif d.kind == "gas":
            need_gas(d.node, f"load {d.id}")
        else:
            issues.append(f"load {d.id}: unknown kind {d.kind!r}")
        if d.amount < 0:
            issues.append(f"load {d.id}: negative amount {d.amount}")

    if sys.power_nodes and not any("unresolved" in s for s in issues):
        adj = defaultdict(set)
        for l in sys.power_lines:
            adj[l.from_node].add(l.to_node)
            adj[l.to_node].add(l.from_node)
        start = sys.power_nodes[0].id
        seen = {start}
        todo = deque([start])
        while todo:
            for nb in adj[todo.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        if len(seen) != len(pnodes):
            issues.append(f"power network is not connected ({len(seen)} of {len(pnodes)} nodes reachable)")
    return issues


# --------------------------------------------------------------------------
# block views
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerBlock:
    """One decoupled power block; virtual nodes carry no balance row."""

    index: int
    region: str
    nodes: tuple[PowerNode, ...]
    lines: tuple[PowerLine, ...]
    coal_generators: tuple[CoalGenerator, ...]
    gas_fired_generators: tuple[GasFiredGenerator, ...]
    loads: tuple[Load, ...]
    base_mva: float = 100.0

    kind = "power"


@dataclass(frozen=True)
class GasBlock:
    index: int
    nodes: tuple[GasNode, ...]
    pipelines: tuple[GasPipeline, ...]
    compressors: tuple[GasCompressor, ...]
    wells: tuple[GasWell, ...]
    virtual_generators: tuple[GasFiredGenerator, ...]
    loads: tuple[Load, ...]

    kind = "gas"


# --------------------------------------------------------------------------
# constraint sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Parabola:
    """``g^2 <= W * (pi_from - pi_to)`` on three variable indices."""

    flow: int
    pi_from: int
    pi_to: int
    weymouth: float


@dataclass(frozen=True)
class ConstraintSet:
    """Variables, bounds, objective and rows of one block in physical units.

    The objective is ``0.5 x'Hx + lin'x + const``; rows are
    ``a_eq x = b_eq`` and ``a_in x <= b_in``.
    """

    names: tuple[tuple[str, str], ...]
    lb: np.ndarray
    ub: np.ndarray
    hess: sp.csr_matrix
    lin: np.ndarray
    const: float
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    eq_labels: tuple[str, ...]
    a_in: sp.csr_matrix
    b_in: np.ndarray
    in_labels: tuple[str, ...]
    parabolas: tuple[Parabola, ...] = ()
    _index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index.update({nm: i for i, nm in enumerate(self.names)})
        for arr in (self.lb, self.ub, self.lin, self.b_eq, self.b_in):
            arr.flags.writeable = False

    @classmethod
    def generic(cls, hess, lin, lb=None, ub=None, a_eq=None, b_eq=None, a_in=None, b_in=None, const=0.0, parabolas=()):
        """A block of anonymous variables ``("x", "0"), ("x", "1"), ...``."""
        lin = np.asarray(lin, dtype=float)
        n = lin.shape[0]
        a_eq = sp.csr_matrix((0, n)) if a_eq is None else sp.csr_matrix(a_eq)
        a_in = sp.csr_matrix((0, n)) if a_in is None else sp.csr_matrix(a_in)
        return cls(
            names=tuple(("x", str(i)) for i in range(n)),
            lb=np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float).copy(),
            ub=np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).copy(),
            hess=sp.csr_matrix(hess),
            lin=lin.copy(),
            const=float(const),
            a_eq=a_eq,
            b_eq=np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).copy(),
            eq_labels=tuple(f"eq:{i}" for i in range(a_eq.shape[0])),
            a_in=a_in,
            b_in=np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float).copy(),
            in_labels=tuple(f"in:{i}" for i in range(a_in.shape[0])),
            parabolas=tuple(parabolas),
        )

    @property
    def n(self) -> int:
        return len(self.names)

    def index(self, kind: str, cid) -> int:
        return self._index[(kind, str(cid))]

    def has(self, kind: str, cid) -> bool:
        return (kind, str(cid)) in self._index

    def value(self, x, kind: str, cid) -> float:
        return float(x[self.index(kind, cid)])

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.hess @ x) + self.lin @ x + self.const)

    def violations(self, x, skip_prefix: Sequence[str] = ()) -> dict[str, float]:
        """Absolute violation of every bound and row, keyed by label."""
        x = np.asarray(x, dtype=float)
        out: dict[str, float] = {}
        for i, nm in enumerate(self.names):
            out[f"bound:{nm[0]}:{nm[1]}"] = max(self.lb[i] - x[i], x[i] - self.ub[i], 0.0)
        req = self.a_eq @ x - self.b_eq
        skip = tuple(skip_prefix)
        for lab, r in zip(self.eq_labels, req):
            if not (skip and lab.startswith(skip)):
                out[lab] = abs(float(r))
        rin = self.a_in @ x - self.b_in
        for lab, r in zip(self.in_labels, rin):
            if not (skip and lab.startswith(skip)):
                out[lab] = max(float(r), 0.0)
        for p in self.parabolas:
            g, t = x[p.flow], x[p.pi_from] - x[p.pi_to]
            out[f"cap:{self.names[p.flow][1]}"] = max(g * g - p.weymouth * t, 0.0)
        return out


class _Rows:
    """Small COO accumulator for building sparse rows."""

    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []
        self.labels: list[str] = []

    def add(self, coeffs: Mapping[int, float], rhs: float, label: str):
        r = len(self.rhs)
        for c, v in coeffs.items():
            if v != 0.0:
                self.rows.append(r)
                self.cols.append(c)
                self.vals.append(float(v))
        self.rhs.append(float(rhs))
        self.labels.append(label)

    def matrix(self, n: int) -> sp.csr_matrix:
        m = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), n))
        return m.tocsr()


def _check_box(lb, ub, names):
    bad = [f"{k}:{c}" for (k, c), lo, hi in zip(names, lb, ub) if lo > hi]
    if bad:
        raise ValueError(f"infeasible bounds (min > max) for {', '.join(bad)}")


def power_block_constraints(block: PowerBlock) -> ConstraintSet:
    """DC-OPF rows of one power block.

    Variables are ``theta`` per node (actual and virtual), ``p`` per line,
    ``pg`` per coal generator and ``gg`` per gas-fired generator. Balance rows
    are emitted for actual nodes only.
    """
    names: list[tuple[str, str]] = []
    lb: list[float] = []
    ub: list[float] = []

    def var(kind, cid, lo, hi):
        names.append((kind, str(cid)))
        lb.append(lo)
        ub.append(hi)
        return len(names) - 1

    th = {n.id: var("theta", n.id, n.theta_min, n.theta_max) for n in block.nodes}
    pl = {l.id: var("p", l.id, -l.p_cap, l.p_cap) for l in block.lines}
    pg = {g.id: var("pg", g.id, g.p_min, g.p_max) for g in block.coal_generators}
    gg = {g.id: var("gg", g.id, g.g_min, g.g_max) for g in block.gas_fired_generators}
    n = len(names)
    _check_box(lb, ub, names)

    eq = _Rows()
    for l in block.lines:
        # x * p / base = theta_from - theta_to
        eq.add({pl[l.id]: l.x / block.base_mva, th[l.from_node]: -1.0, th[l.to_node]: 1.0}, 0.0, f"dcflow:{l.id}")
    for node in block.nodes:
        if node.is_virtual:
            continue
        coeffs: dict[int, float] = defaultdict(float)
        for g in block.coal_generators:
            if g.node == node.id:
                coeffs[pg[g.id]] += 1.0
        for g in block.gas_fired_generators:
            if g.power_node == node.id:
                coeffs[gg[g.id]] += 1.0
        for l in block.lines:
            if l.to_node == node.id:
                coeffs[pl[l.id]] += 1.0
            if l.from_node == node.id:
                coeffs[pl[l.id]] -= 1.0
        demand = sum(d.amount for d in block.loads if d.kind == "power" and d.node == node.id)
        eq.add(coeffs, demand, f"balance:{node.id}")

    hdiag = np.zeros(n)
    lin = np.zeros(n)
    const = 0.0
    for g in block.coal_generators:
        hdiag[pg[g.id]] = 2.0 * g.c1
        lin[pg[g.id]] = g.c2
        const += g.c3
    empty = _Rows()
    return ConstraintSet(
        names=tuple(names),
        lb=np.array(lb, dtype=float),
        ub=np.array(ub, dtype=float),
        hess=sp.diags(hdiag).tocsr(),
        lin=lin,
        const=const,
        a_eq=eq.matrix(n),
        b_eq=np.array(eq.rhs),
        eq_labels=tuple(eq.labels),
        a_in=empty.matrix(n),
        b_in=np.zeros(0),
        in_labels=(),
    )


def gas_block_constraints(block: GasBlock, relaxation: Mapping) -> ConstraintSet:
    """Gas block rows with each Weymouth equation replaced by its ECH rows.

    ``relaxation`` maps pipeline id to an :class:`iegs.ech.EchConstraintSet`.
    Variables are ``pi`` per node, ``gl`` per pipeline, ``gc`` per compressor,
    ``gw`` per well and ``gv`` per virtual gas-fired generator.
    """
    missing = [p.id for p in block.pipelines if p.id not in relaxation]
    if missing:
        raise KeyError(f"no ECH relaxation for pipeline(s) {', '.join(missing)}")

    names: list[tuple[str, str]] = []
    lb: list[float] = []
    ub: list[float] = []

    def var(kind, cid, lo, hi):
        names.append((kind, str(cid)))
        lb.append(lo)
        ub.append(hi)
        return len(names) - 1

    pi = {nd.id: var("pi", nd.id, nd.pi_min, nd.pi_max) for nd in block.nodes}
    gl = {}
    for p in block.pipelines:
        e = relaxation[p.id]
        gl[p.id] = var("gl", p.id, e.g_min, e.g_max)
    gc = {c.id: var("gc", c.id, 0.0, c.g_cap) for c in block.compressors}
    gw = {w.id: var("gw", w.id, w.g_min, w.g_max) for w in block.wells}
    gv = {g.id: var("gv", g.id, g.g_min, g.g_max) for g in block.virtual_generators}
    n = len(names)
    _check_box(lb, ub, names)

    eq = _Rows()
    for nd in block.nodes:
        coeffs: dict[int, float] = defaultdict(float)
        for w in block.wells:
            if w.node == nd.id:
                coeffs[gw[w.id]] += 1.0
        for p in block.pipelines:
            if p.to_node == nd.id:
                coeffs[gl[p.id]] += 1.0
            if p.from_node == nd.id:
                coeffs[gl[p.id]] -= 1.0
        for c in block.compressors:
            if c.to_node == nd.id:
                coeffs[gc[c.id]] += 1.0
            if c.from_node == nd.id:
                coeffs[gc[c.id]] -= 1.0
        for g in block.virtual_generators:
            if g.gas_node == nd.id:
                coeffs[gv[g.id]] -= g.chi
        demand = sum(d.amount for d in block.loads if d.kind == "gas" and d.node == nd.id)
        eq.add(coeffs, demand, f"balance:{nd.id}")

    ineq = _Rows()
    for c in block.compressors:
        ineq.add({pi[c.to_node]: 1.0, pi[c.from_node]: -c.alpha}, 0.0, f"compressor:{c.id}")
    parabolas = []
    for p in block.pipelines:
        e = relaxation[p.id]
        i, j, g = pi[p.from_node], pi[p.to_node], gl[p.id]
        # a_L * dpi + b_L <= g
        ineq.add({i: e.a_L, j: -e.a_L, g: -1.0}, -e.b_L, f"ech:lower:{p.id}")
        if e.has_parabolic_cap:
            parabolas.append(Parabola(g, i, j, e.weymouth))
        else:
            ineq.add({g: 1.0, i: -e.a_U, j: e.a_U}, e.b_U, f"ech:upper:{p.id}")

    lin = np.zeros(n)
    for w in block.wells:
        lin[gw[w.id]] = w.cost
    return ConstraintSet(
        names=tuple(names),
        lb=np.array(lb, dtype=float),
        ub=np.array(ub, dtype=float),
        hess=sp.csr_matrix((n, n)),
        lin=lin,
        const=0.0,
        a_eq=eq.matrix(n),
        b_eq=np.array(eq.rhs),
        eq_labels=tuple(eq.labels),
        a_in=ineq.matrix(n),
        b_in=np.array(ineq.rhs),
        in_labels=tuple(ineq.labels),
        parabolas=tuple(parabolas),
    )


# --------------------------------------------------------------------------
# residual evaluators
# --------------------------------------------------------------------------


def weymouth_residual(pipeline, g_l: float, pi_i: float, pi_j: float) -> float:
    """Signed Weymouth residual ``g^2 sgn(pi_i, pi_j) - W (pi_i - pi_j)``.

    ``sgn`` is +1 when ``pi_i >= pi_j``. ``pipeline`` may be a
    :class:`GasPipeline` or a bare Weymouth constant.
    """
    w = pipeline.weymouth if hasattr(pipeline, "weymouth") else float(pipeline)
    sgn = 1.0 if pi_i >= pi_j else -1.0
    return g_l * g_l * sgn - w * (pi_i - pi_j)


@dataclass
class Dispatch:
    """Physical operating point of the un-partitioned system.

    ``g_gen_gas`` is the gas-side view of each gas-fired generator's output;
    it defaults to ``g_gen`` and differs only when coupling is inexact.
    ``line_views`` holds, per tie-line, what the to-side block sees: its own
    flow copy ``p_to_side`` plus both blocks' mirrors of the far phase angle
    (``theta_to_mirror`` in the from-side block, ``theta_from_mirror`` in the
    to-side block).
    """

    theta: dict = field(default_factory=dict)
    p_line: dict = field(default_factory=dict)
    p_coal: dict = field(default_factory=dict)
    g_gen: dict = field(default_factory=dict)
    pi: dict = field(default_factory=dict)
    g_pipe: dict = field(default_factory=dict)
    g_comp: dict = field(default_factory=dict)
    g_well: dict = field(default_factory=dict)
    g_gen_gas: Optional[dict] = None
    line_views: Optional[dict] = None

    def objective(self, sys: IegsSystem) -> float:
        total = sum(g.cost(self.p_coal.get(g.id, 0.0)) for g in sys.coal_generators)
        total += sum(w.cost * self.g_well.get(w.id, 0.0) for w in sys.wells)
        return float(total)


def balance_residuals(sys: IegsSystem, sol: Dispatch) -> dict[tuple[str, str], float]:
    """Nodal supply minus demand for every power and gas node.

    Keys are ``("power", node_id)`` and ``("gas", node_id)``.
    """
    out: dict[tuple[str, str], float] = {}
    res = defaultdict(float)
    for g in sys.coal_generators:
        res[g.node] += sol.p_coal.get(g.id, 0.0)
    for g in sys.gas_fired_generators:
        res[g.power_node] += sol.g_gen.get(g.id, 0.0)
    views = sol.line_views or {}
    for l in sys.power_lines:
        f = sol.p_line.get(l.id, 0.0)
        res[l.to_node] += views[l.id]["p_to_side"] if l.id in views else f
        res[l.from_node] -= f
    for d in sys.loads:
        if d.kind == "power":
            res[d.node] -= d.amount
    for n in sys.power_nodes:
        out[("power", n.id)] = res[n.id]

    gres = defaultdict(float)
    gas_side = sol.g_gen_gas if sol.g_gen_gas is not None else sol.g_gen
    for w in sys.wells:
        gres[w.node] += sol.g_well.get(w.id, 0.0)
    for p in sys.pipelines:
        f = sol.g_pipe.get(p.id, 0.0)
        gres[p.to_node] += f
        gres[p.from_node] -= f
    for c in sys.compressors:
        f = sol.g_comp.get(c.id, 0.0)
        gres[c.to_node] += f
        gres[c.from_node] -= f
    for g in sys.gas_fired_generators:
        gres[g.gas_node] -= g.chi * gas_side.get(g.id, 0.0)
    for d in sys.loads:
        if d.kind == "gas":
            gres[d.node] -= d.amount
    for n in sys.gas_nodes:
        out[("gas", n.id)] = gres[n.id]
    return out
