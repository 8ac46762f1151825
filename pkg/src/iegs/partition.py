"""Block partitioning, coupling constraints and the compact multi-block form.

Power nodes are grouped into regions, each region becomes one power block and
the whole gas network forms the last block. Tie-lines between regions are
split through virtual power nodes; every gas-fired generator gets a virtual
twin at its gas node. Each virtual component is tied to its actual twin by one
equality coupling row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import ech
from .model import (
    ConstraintSet,
    Dispatch,
    GasBlock,
    IegsSystem,
    PowerBlock,
    PowerNode,
    gas_block_constraints,
    id_key,
    power_block_constraints,
)
from .qp import ConvexBlockProblem


@dataclass(frozen=True)
class VirtualNode:
    block: int
    id: str
    actual_id: str
    actual_block: int


@dataclass(frozen=True)
class BlockPartition:
    system: IegsSystem
    blocks: tuple  # PowerBlock..., GasBlock
    virtual_nodes: tuple[VirtualNode, ...]
    virtual_generators: dict  # virtual id -> actual id
    node_block: dict  # actual power node id -> block index

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def gas_index(self) -> int:
        return len(self.blocks) - 1


@dataclass(frozen=True)
class CouplingConstraint:
    """``scale * left = scale * right`` between two blocks' variables.

    ``left`` and ``right`` are ``(block, kind, id)`` triples.
    """

    kind: str  # "phase" | "gas"
    left: tuple
    right: tuple
    scale: float = 1.0


@dataclass(frozen=True)
class ScalingPlan:
    factors: tuple[float, ...]


def decouple(sys: IegsSystem, regions: Optional[Mapping] = None) -> BlockPartition:
    """Split ``sys`` into one block per power region plus the gas block.

    ``regions`` maps power node id to region id; when omitted the regions
    stored on the nodes are used.
    """
    pnode_ids = {n.id for n in sys.power_nodes}
    gnode_ids = {n.id for n in sys.gas_nodes}
    if regions is None:
        regions = {n.id: n.region for n in sys.power_nodes}
    else:
        regions = {str(k): (None if v is None else str(v)) for k, v in regions.items()}
        stray = [k for k in regions if k not in pnode_ids]
        if stray:
            gas = [k for k in stray if k in gnode_ids]
            if gas:
                raise ValueError(f"the gas network is a single block; region given for gas node(s) {', '.join(gas)}")
            raise ValueError(f"region given for unknown power node(s) {', '.join(stray)}")
    missing = [n.id for n in sys.power_nodes if regions.get(n.id) is None]
    if missing:
        raise ValueError(f"power node(s) without region: {', '.join(missing)}")
    for g in sys.gas_fired_generators:
        if g.gas_node not in gnode_ids:
            raise ValueError(f"gas-fired generator {g.id}: gas node {g.gas_node} does not exist")
    region_ids = sorted({regions[n.id] for n in sys.power_nodes}, key=id_key)
    if not region_ids:
        raise ValueError("empty region map: no power nodes to partition")
    block_of_region = {r: i for i, r in enumerate(region_ids)}
    node_block = {n.id: block_of_region[regions[n.id]] for n in sys.power_nodes}
    node_by_id = {n.id: n for n in sys.power_nodes}

    vnodes: list[VirtualNode] = []
    blocks: list = []
    for r in region_ids:
        b = block_of_region[r]
        nodes = [replace(n, region=r) for n in sys.power_nodes if node_block[n.id] == b]
        if not nodes:
            raise ValueError(f"region {r} is empty")
        virtual: dict[str, PowerNode] = {}
        lines = []
        for l in sys.power_lines:
            fb, tb = node_block[l.from_node], node_block[l.to_node]
            if fb == b and tb == b:
                lines.append(l)
            elif fb == b or tb == b:
                far = l.to_node if fb == b else l.from_node
                vid = f"{far}'"
                if vid not in virtual:
                    src = node_by_id[far]
                    virtual[vid] = PowerNode(vid, src.theta_min, src.theta_max, r, True, far)
                    vnodes.append(VirtualNode(b, vid, far, node_block[far]))
                lines.append(replace(l, to_node=vid) if fb == b else replace(l, from_node=vid))
        blocks.append(
            PowerBlock(
                index=b,
                region=r,
                nodes=tuple(nodes) + tuple(virtual[k] for k in sorted(virtual, key=id_key)),
                lines=tuple(lines),
                coal_generators=tuple(g for g in sys.coal_generators if node_block[g.node] == b),
                gas_fired_generators=tuple(g for g in sys.gas_fired_generators if node_block[g.power_node] == b),
                loads=tuple(d for d in sys.loads if d.kind == "power" and node_block[d.node] == b),
                base_mva=sys.base_mva,
            )
        )
    vgens = tuple(
        replace(g, id=f"{g.id}'", is_virtual=True, mirror_of=g.id) for g in sys.gas_fired_generators
    )
    blocks.append(
        GasBlock(
            index=len(region_ids),
            nodes=sys.gas_nodes,
            pipelines=sys.pipelines,
            compressors=sys.compressors,
            wells=sys.wells,
            virtual_generators=vgens,
            loads=tuple(d for d in sys.loads if d.kind == "gas"),
        )
    )
    return BlockPartition(
        system=sys,
        blocks=tuple(blocks),
        virtual_nodes=tuple(vnodes),
        virtual_generators={g.id: g.mirror_of for g in vgens},
        node_block=node_block,
    )


def coupling_constraints(part: BlockPartition, scaling: Optional[ScalingPlan] = None) -> list[CouplingConstraint]:
    """Phase-angle rows for virtual nodes, then gas-generator rows."""
    out = []
    for v in part.virtual_nodes:
        out.append(CouplingConstraint("phase", (v.actual_block, "theta", v.actual_id), (v.block, "theta", v.id)))
    gas = part.gas_index
    for vid, gid in part.virtual_generators.items():
        gen = next(g for g in part.system.gas_fired_generators if g.id == gid)
        out.append(CouplingConstraint("gas", (part.node_block[gen.power_node], "gg", gid), (gas, "gv", vid)))
    if scaling is not None:
        if len(scaling.factors) != len(out):
            raise ValueError(f"scaling plan has {len(scaling.factors)} factors for {len(out)} coupling rows")
        out = [replace(c, scale=f) for c, f in zip(out, scaling.factors)]
    return out


def default_scaling(part: BlockPartition, sys: Optional[IegsSystem] = None) -> ScalingPlan:
    """Scale each coupling row by the reciprocal bound magnitude of its variables."""
    sys = part.system if sys is None else sys
    nodes = {n.id: n for n in sys.power_nodes}
    gens = {g.id: g for g in sys.gas_fired_generators}
    factors = []
    for c in coupling_constraints(part):
        if c.kind == "phase":
            n = nodes[c.left[2]]
            mag = max(abs(n.theta_min), abs(n.theta_max))
        else:
            mag = abs(gens[c.left[2]].g_max)
        factors.append(1.0 / mag if mag > 0 and math.isfinite(mag) else 1.0)
    return ScalingPlan(tuple(factors))


def price_scale(part: BlockPartition, couplings: Sequence[CouplingConstraint]) -> float:
    """Power of two near the largest expected coupling price, in cost units.

    A unit of a scaled coupling row moves roughly ``1 / scale`` MW of
    generation (gas-generator rows) or ``base_mva / (scale * x)`` MW of
    tie-line flow (phase rows, ``x`` the smallest reactance at the virtual
    node). Priced at the mean marginal generation cost this estimates the
    multipliers; dividing the objective by it keeps them of order one, so the
    penalty ``d`` acts on comparable magnitudes in every system.
    """
    sys = part.system
    marg = [2.0 * g.c1 * 0.5 * (g.p_min + g.p_max) + g.c2 for g in sys.coal_generators]
    if not marg:
        marg = [w.cost for w in sys.wells]
    price = float(np.mean(np.abs(marg))) if marg else 1.0
    reach: dict = {}
    for blk in part.blocks[:-1]:
        for l in blk.lines:
            for n in (l.from_node, l.to_node):
                if n.endswith("'") and l.x > 0:
                    reach[(blk.index, n)] = min(reach.get((blk.index, n), math.inf), l.x)
    biggest = 0.0
    for c in couplings:
        mw = 1.0 / c.scale
        if c.kind == "phase":
            x = reach.get((c.right[0], c.right[2]))
            if x is not None:
                mw *= sys.base_mva / x
        biggest = max(biggest, mw)
    v = price * biggest
    if not (v > 1 and math.isfinite(v)):
        return 1.0
    return 2.0 ** round(math.log2(v))


def _pow2_scale(v: float) -> float:
    if not math.isfinite(v) or v <= 0:
        return 1.0
    return 2.0 ** math.ceil(math.log2(v))


def solver_scales(model: ConstraintSet) -> np.ndarray:
    """Power-of-two magnitude of every variable's box, for inner solves.

    All pressure squares share one scale so the cone rows keep their form.
    """
    mag = np.maximum(np.abs(np.where(np.isfinite(model.lb), model.lb, 0.0)),
                     np.abs(np.where(np.isfinite(model.ub), model.ub, 0.0)))
    s = np.array([_pow2_scale(v) for v in mag])
    is_pi = np.array([k == "pi" for k, _ in model.names], dtype=bool)
    if is_pi.any():
        s[is_pi] = s[is_pi].max()
    return s


@dataclass(frozen=True)
class CompactForm:
    """``min sum f_r(x_r)  s.t.  sum A_r x_r = c,  x_r in Omega_r``.

    Block vectors ``x_r`` are in physical units. The objectives handed to
    solvers are ``f_r / cost_scale``; :meth:`objective` reports physical cost.
    ``solver_scale`` holds power-of-two variable magnitudes that inner solves
    may use to equilibrate; converting with them is exact.
    """

    partition: BlockPartition
    couplings: tuple[CouplingConstraint, ...]
    models: tuple[ConstraintSet, ...]
    A: tuple[sp.csr_matrix, ...]
    c: np.ndarray
    solver_scale: tuple[np.ndarray, ...] = ()
    relaxation: dict = field(default_factory=dict)
    cost_scale: float = 1.0

    @property
    def n_blocks(self) -> int:
        return len(self.models)

    @property
    def n_rows(self) -> int:
        return self.c.shape[0]

    def local_problem(self, r: int) -> ConvexBlockProblem:
        """``f_r / cost_scale`` over ``Omega_r``."""
        m = self.models[r]
        k = 1.0 / self.cost_scale
        return ConvexBlockProblem(
            hess=(k * m.hess).tocsr(),
            lin=k * m.lin,
            const=k * m.const,
            a_eq=m.a_eq,
            b_eq=np.asarray(m.b_eq),
            a_in=m.a_in,
            b_in=np.asarray(m.b_in),
            lb=m.lb,
            ub=m.ub,
            parabolas=m.parabolas,
        )

    def objective(self, xs: Sequence) -> float:
        """Total physical cost of the block vectors."""
        return float(sum(m.objective(x) for m, x in zip(self.models, xs)))

    def coupling_residual(self, xs: Sequence) -> np.ndarray:
        out = -self.c.copy()
        for A, x in zip(self.A, xs):
            out += A @ x
        return out

    def initial_point(self, r: int) -> np.ndarray:
        """Midpoint of the box, the finite bound when one side is open, else 0."""
        m = self.models[r]
        lo = np.where(np.isfinite(m.lb), m.lb, 0.0)
        hi = np.where(np.isfinite(m.ub), m.ub, 0.0)
        both = np.isfinite(m.lb) & np.isfinite(m.ub)
        return np.where(both, 0.5 * (lo + hi), np.where(np.isfinite(m.lb), lo, np.where(np.isfinite(m.ub), hi, 0.0)))

    def dispatch(self, xs: Sequence) -> Dispatch:
        """Merge block vectors into one operating point of the original system."""
        part = self.partition
        sys = part.system
        d = Dispatch(g_gen_gas={})
        for r, blk in enumerate(part.blocks[:-1]):
            m, x = self.models[r], xs[r]
            for n in blk.nodes:
                if not n.is_virtual:
                    d.theta[n.id] = m.value(x, "theta", n.id)
            for g in blk.coal_generators:
                d.p_coal[g.id] = m.value(x, "pg", g.id)
            for g in blk.gas_fired_generators:
                d.g_gen[g.id] = m.value(x, "gg", g.id)
        d.line_views = {}
        for l in sys.power_lines:
            b = part.node_block[l.from_node]
            d.p_line[l.id] = self.models[b].value(xs[b], "p", l.id)
            tb = part.node_block[l.to_node]
            if tb != b:
                d.line_views[l.id] = {
                    "p_to_side": self.models[tb].value(xs[tb], "p", l.id),
                    "theta_to_mirror": self.models[b].value(xs[b], "theta", f"{l.to_node}'"),
                    "theta_from_mirror": self.models[tb].value(xs[tb], "theta", f"{l.from_node}'"),
                }
        gi = part.gas_index
        m, x = self.models[gi], xs[gi]
        for n in sys.gas_nodes:
            d.pi[n.id] = m.value(x, "pi", n.id)
        for p in sys.pipelines:
            d.g_pipe[p.id] = m.value(x, "gl", p.id)
        for c in sys.compressors:
            d.g_comp[c.id] = m.value(x, "gc", c.id)
        for w in sys.wells:
            d.g_well[w.id] = m.value(x, "gw", w.id)
        for vid, gid in part.virtual_generators.items():
            d.g_gen_gas[gid] = m.value(x, "gv", vid)
        return d


def assemble_compact(
    part: BlockPartition,
    couplings: Optional[Sequence[CouplingConstraint]] = None,
    scaling: Optional[ScalingPlan] = None,
    relaxation: Optional[Mapping] = None,
    cost_scale: Optional[float] = None,
) -> CompactForm:
    """Build every block's constraint set and the coupling matrices.

    Row ``i`` of ``sum A_r x_r`` is ``scale_i * (left - right)``. Without
    explicit couplings the rows get :func:`default_scaling`; without a cost
    scale :func:`price_scale` picks one.
    """
    if couplings is None:
        couplings = coupling_constraints(part, scaling if scaling is not None else default_scaling(part))
    elif scaling is not None:
        if len(scaling.factors) != len(couplings):
            raise ValueError(f"scaling plan has {len(scaling.factors)} factors for {len(couplings)} coupling rows")
        couplings = [replace(c, scale=f) for c, f in zip(couplings, scaling.factors)]
    couplings = tuple(couplings)
    if cost_scale is None:
        cost_scale = price_scale(part, couplings)
    if not (cost_scale > 0 and math.isfinite(cost_scale)):
        raise ValueError(f"cost_scale must be positive and finite, got {cost_scale}")
    if relaxation is None:
        relaxation = ech.build_relaxation(part.system)
    models = []
    for blk in part.blocks:
        if blk.kind == "power":
            models.append(power_block_constraints(blk))
        else:
            models.append(gas_block_constraints(blk, relaxation))
    nrow = len(couplings)
    trip = [([], [], []) for _ in models]
    for i, cc in enumerate(couplings):
        if not cc.scale > 0 or not math.isfinite(cc.scale):
            raise ValueError(f"coupling row {i}: scale must be positive and finite")
        if cc.left[0] == cc.right[0]:
            raise ValueError(f"coupling row {i} links two variables of block {cc.left[0]}")
        for (b, kind, cid), sign in ((cc.left, 1.0), (cc.right, -1.0)):
            if not 0 <= b < len(models):
                raise KeyError(f"coupling row {i}: no block {b}")
            m = models[b]
            if not m.has(kind, cid):
                raise KeyError(f"coupling row {i}: block {b} has no variable {kind}:{cid}")
            trip[b][0].append(i)
            trip[b][1].append(m.index(kind, cid))
            trip[b][2].append(sign * cc.scale)
    A = tuple(sp.csr_matrix((v, (r, c)), shape=(nrow, m.n)) for (r, c, v), m in zip(trip, models))
    return CompactForm(
        partition=part,
        couplings=couplings,
        models=tuple(models),
        A=A,
        c=np.zeros(nrow),
        solver_scale=tuple(solver_scales(m) for m in models),
        relaxation=dict(relaxation),
        cost_scale=float(cost_scale),
    )


def compact_from_blocks(models: Sequence[ConstraintSet], A: Sequence, c=None, cost_scale: float = 1.0) -> CompactForm:
    """Compact form over arbitrary block models, without a network behind it."""
    A = tuple(sp.csr_matrix(a, dtype=float) for a in A)
    if len(A) != len(models):
        raise ValueError(f"{len(A)} coupling matrices for {len(models)} blocks")
    rows = {a.shape[0] for a in A}
    if len(rows) > 1:
        raise ValueError("coupling matrices disagree on the number of rows")
    for r, (a, m) in enumerate(zip(A, models)):
        if a.shape[1] != m.n:
            raise ValueError(f"block {r}: coupling matrix has {a.shape[1]} columns for {m.n} variables")
    nrow = rows.pop() if rows else 0
    c = np.zeros(nrow) if c is None else np.asarray(c, dtype=float)
    return CompactForm(
        partition=None,
        couplings=(),
        models=tuple(models),
        A=A,
        c=c,
        solver_scale=tuple(solver_scales(m) for m in models),
        cost_scale=float(cost_scale),
    )

