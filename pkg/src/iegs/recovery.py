"""Feasibility check and recovery of an exact gas-flow solution.

The convexified solution fixes every pipeline flow. If pressure squares exist
that satisfy the exact Weymouth relation for those flows inside the node
bounds, swapping them in gives a solution of the original problem with the same
cost. The slack LP below looks for such pressures; its optimal slack measures
how far the bounds must be widened otherwise.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import Dispatch, IegsSystem, balance_residuals, weymouth_residual
from .qp import INFEASIBLE, ConvexBlockProblem, solve_block

RECOVERED = "recovered"
SLACK_POSITIVE = "slack_positive"
LP_INFEASIBLE = "infeasible"

LOWER_BOUND_NOTE = "the convexified optimum is a lower bound on the optimum of the original problem"
# ridge of the LP, relative to the normalised variables
LP_RIDGE = 1e-8


def pressure_drop(g: float, w: float) -> float:
    """``sgn(g) g^2 / W`` with ``sgn(0) = +1``."""
    return (1.0 if g >= 0 else -1.0) * g * g / w


@dataclass
class RecoveryProblem:
    """``min sum(d+) + sum(d-)`` over pressures ``pi`` and node slacks.

    Variables are ordered ``[pi, d+, d-]``; rows use pressures divided by
    ``scale``.
    """

    node_ids: tuple
    pi_min: np.ndarray
    pi_max: np.ndarray
    drop: dict  # pipeline id -> fixed pi_from - pi_to
    pipes: tuple  # (id, from index, to index)
    compressors: tuple  # (id, from index, to index, alpha)
    scale: float
    zero_lower: np.ndarray  # nodes whose lower bound is 0 and use an additive slack
    problem: ConvexBlockProblem = field(repr=False, default=None)

    @property
    def m(self) -> int:
        return len(self.node_ids)


def _mean_bound(lo, hi) -> float:
    vals = np.abs(np.concatenate([lo, hi]))
    vals = vals[vals > 0]
    return float(vals.mean()) if vals.size else 1.0


def build_recovery_lp(sys: IegsSystem, g_pipe: dict) -> RecoveryProblem:
    nodes = tuple(n.id for n in sys.gas_nodes)
    idx = {n: i for i, n in enumerate(nodes)}
    lo = np.array([n.pi_min for n in sys.gas_nodes], float)
    hi = np.array([n.pi_max for n in sys.gas_nodes], float)
    m = len(nodes)
    S = _mean_bound(lo, hi)
    zero = lo == 0.0
    drop = {}
    pipes = []
    for p in sys.pipelines:
        g = float(g_pipe[p.id])
        if not math.isfinite(g):
            raise ValueError(f"pipeline {p.id}: flow is not finite")
        drop[p.id] = pressure_drop(g, p.weymouth)
        pipes.append((p.id, idx[p.from_node], idx[p.to_node]))
    comps = tuple((c.id, idx[c.from_node], idx[c.to_node], c.alpha) for c in sys.compressors)

    n = 3 * m
    eq_r, eq_c, eq_v, b_eq = [], [], [], []
    for k, (pid, i, j) in enumerate(pipes):
        eq_r += [k, k]
        eq_c += [i, j]
        eq_v += [1.0, -1.0]
        b_eq.append(drop[pid] / S)
    in_r, in_c, in_v, b_in = [], [], [], []
    row = 0
    for i in range(m):
        # pi <= (1 + d+) pi_max
        in_r += [row, row]
        in_c += [i, m + i]
        in_v += [1.0, -hi[i] / S]
        b_in.append(hi[i] / S)
        row += 1
        # pi >= (1 - d-) pi_min, or pi >= -S d- when pi_min is zero
        in_r += [row, row]
        in_c += [i, 2 * m + i]
        in_v += [-1.0, -(1.0 if zero[i] else lo[i] / S)]
        b_in.append(0.0 if zero[i] else -lo[i] / S)
        row += 1
    for _, i, j, alpha in comps:
        in_r += [row, row]
        in_c += [j, i]
        in_v += [1.0, -alpha]
        b_in.append(0.0)
        row += 1
    lin = np.concatenate([np.zeros(m), np.ones(2 * m)])
    lb = np.concatenate([np.full(m, -np.inf), np.zeros(2 * m)])
    prob = ConvexBlockProblem(
        hess=LP_RIDGE * sp.identity(n, format="csr"),
        lin=lin,
        a_eq=sp.csr_matrix((eq_v, (eq_r, eq_c)), shape=(len(pipes), n)),
        b_eq=np.array(b_eq),
        a_in=sp.csr_matrix((in_v, (in_r, in_c)), shape=(row, n)),
        b_in=np.array(b_in),
        lb=lb,
        ub=np.full(n, np.inf),
        strictly_convex=True,
    )
    return RecoveryProblem(nodes, lo, hi, drop, tuple(pipes), comps, S, zero, prob)


def _propagate(rp: RecoveryProblem, anchor: Optional[np.ndarray] = None):
    """Pressures that meet every pipeline drop exactly, or ``None`` on a cycle clash.

    Each pipeline-connected component is laid out from its first node and then
    shifted so its mean matches ``anchor`` (or zero). With an anchor, the shift
    is clamped into the range that keeps the component inside its pressure
    boxes whenever that range is nonempty.
    """
    m = rp.m
    adj = defaultdict(list)
    for pid, i, j in rp.pipes:
        d = rp.drop[pid]
        adj[i].append((j, -d))  # pi_j = pi_i - d
        adj[j].append((i, d))
    pi = np.full(m, np.nan)
    comps = []
    for s in range(m):
        if not math.isnan(pi[s]):
            continue
        pi[s] = 0.0
        comp = [s]
        todo = deque([s])
        while todo:
            u = todo.popleft()
            for v, delta in adj[u]:
                val = pi[u] + delta
                if math.isnan(pi[v]):
                    pi[v] = val
                    comp.append(v)
                    todo.append(v)
                elif abs(pi[v] - val) > 1e-9 * max(1.0, abs(val), rp.scale):
                    return None
        comps.append(np.array(comp))
    if anchor is not None:
        for c in comps:
            shift = float(np.mean(anchor[c] - pi[c]))
            lo = float(np.max(rp.pi_min[c] - pi[c]))
            hi = float(np.min(rp.pi_max[c] - pi[c]))
            if lo <= hi:
                shift = min(max(shift, lo), hi)
            pi[c] += shift
    return pi


@dataclass
class RecoveryOutcome:
    status: str
    objective: float
    pi: Optional[dict] = None  # recovered pressure squares
    delta_plus: dict = field(default_factory=dict)
    delta_minus: dict = field(default_factory=dict)
    additive_slack_nodes: tuple = ()
    dispatch: Optional[Dispatch] = None
    note: str = LOWER_BOUND_NOTE
    threshold: float = 0.0

    @property
    def recovered(self) -> bool:
        return self.status == RECOVERED


def zero_threshold(sys: IegsSystem) -> float:
    lo = np.array([n.pi_min for n in sys.gas_nodes], float)
    hi = np.array([n.pi_max for n in sys.gas_nodes], float)
    return 1e-6 * max(1.0, _mean_bound(lo, hi))


def check_and_recover(sol: Dispatch, sys: IegsSystem) -> RecoveryOutcome:
    """Solve the slack LP for the flows of ``sol`` and substitute the pressures."""
    rp = build_recovery_lp(sys, sol.g_pipe)
    thr = zero_threshold(sys)
    m = rp.m
    if _propagate(rp) is None:
        return RecoveryOutcome(LP_INFEASIBLE, math.inf, threshold=thr)
    rep = solve_block(rp.problem, tol=1e-10, max_iter=200_000)
    if rep.status == INFEASIBLE:
        return RecoveryOutcome(LP_INFEASIBLE, math.inf, threshold=thr)
    x = rep.x
    dp = np.maximum(x[m : 2 * m], 0.0)
    dm = np.maximum(x[2 * m :], 0.0)
    obj = float(dp.sum() + dm.sum())
    pi_lp = x[:m] * rp.scale
    ids = rp.node_ids
    extra = tuple(ids[i] for i in np.flatnonzero(rp.zero_lower))
    report = dict(
        delta_plus={ids[i]: float(dp[i]) for i in range(m)},
        delta_minus={ids[i]: float(dm[i]) for i in range(m)},
        additive_slack_nodes=extra,
        threshold=thr,
    )
    # re-lay the pressures along the pipelines so every drop is met exactly;
    # the slack this witness needs is an upper bound on the LP optimum, so a
    # small value certifies recovery even when the LP solve stopped early
    exact = _propagate(rp, anchor=pi_lp)
    w_plus, w_minus, comp_ok = _witness_slack(rp, exact)
    w_obj = float(w_plus.sum() + w_minus.sum())
    if comp_ok and w_obj <= thr:
        pi = {ids[i]: float(exact[i]) for i in range(m)}
        report.update(
            delta_plus={ids[i]: float(w_plus[i]) for i in range(m)},
            delta_minus={ids[i]: float(w_minus[i]) for i in range(m)},
        )
        return RecoveryOutcome(RECOVERED, w_obj, pi, dispatch=replace(sol, pi=pi), **report)
    return RecoveryOutcome(SLACK_POSITIVE, obj, {ids[i]: float(pi_lp[i]) for i in range(m)}, **report)


def _witness_slack(rp: RecoveryProblem, pi: np.ndarray):
    """Per-node slacks ``pi`` needs under the LP's bound rows, and whether compressor rows hold."""
    hi, lo = rp.pi_max, rp.pi_min
    plus = np.where(hi > 0, np.maximum(pi / np.where(hi > 0, hi, 1.0) - 1.0, 0.0), np.maximum(pi - hi, 0.0) / rp.scale)
    minus = np.where(rp.zero_lower, np.maximum(-pi, 0.0) / rp.scale, np.maximum(1.0 - pi / np.where(lo != 0, lo, 1.0), 0.0))
    ok = all(pi[j] <= alpha * pi[i] + 1e-6 * max(1.0, abs(pi[j])) for _, i, j, alpha in rp.compressors)
    return plus, minus, ok


# --------------------------------------------------------------------------
# verification against the original model
# --------------------------------------------------------------------------


@dataclass
class VerifyReport:
    passed: bool
    violations: dict  # label -> violation beyond tolerance (only failing rows)
    worst: dict  # category -> largest raw violation
    max_weymouth: float
    weymouth: dict = field(default_factory=dict)


def verify_original(
    sol: Dispatch,
    sys: IegsSystem,
    tol: float = 1e-6,
    coupling_tol: Optional[float] = None,
    weymouth_tol: float = 1e-6,
) -> VerifyReport:
    """Check every constraint of the original (unrelaxed) model.

    Linear rows and bounds pass when the violation is at most
    ``tol * max(1, magnitude of the row's terms)``; the exact Weymouth
    residuals must not exceed ``weymouth_tol`` in absolute value. Twin
    consistency (virtual against actual phase angles and gas-fired outputs),
    relative to the twin's bound magnitude, is held to ``coupling_tol``.
    """
    ctol = tol if coupling_tol is None else coupling_tol
    fails: dict = {}
    worst: dict = defaultdict(float)

    def check(cat, label, viol, mag=1.0, t=tol):
        viol = float(viol)
        worst[cat] = max(worst[cat], viol)
        lim = t * max(1.0, abs(mag))
        if not viol <= lim:
            fails[label] = viol

    def box(cat, label, v, lo, hi):
        check(cat, label, max(lo - v, v - hi, 0.0), max(abs(lo), abs(hi)) if math.isfinite(hi) else abs(lo))

    for n in sys.power_nodes:
        box("bounds", f"theta:{n.id}", sol.theta[n.id], n.theta_min, n.theta_max)
    far = sol.line_views or {}
    pnodes = {n.id: n for n in sys.power_nodes}
    for l in sys.power_lines:
        p = sol.p_line[l.id]
        check("bounds", f"line-cap:{l.id}", max(abs(p) - l.p_cap, 0.0), l.p_cap)
        if l.id in far:
            v = far[l.id]
            ti, tj = sol.theta[l.from_node], sol.theta[l.to_node]
            # each block's row against its mirror of the far node
            r1 = l.x * p / sys.base_mva - (ti - v["theta_to_mirror"])
            r2 = l.x * v["p_to_side"] / sys.base_mva - (v["theta_from_mirror"] - tj)
            check("dcflow", f"dcflow:{l.id}", abs(r1), l.x * abs(p) / sys.base_mva)
            check("dcflow", f"dcflow:{l.id}:to-side", abs(r2), l.x * abs(v["p_to_side"]) / sys.base_mva)
            check("bounds", f"line-cap:{l.id}:to-side", max(abs(v["p_to_side"]) - l.p_cap, 0.0), l.p_cap)
            for mirror, actual in ((v["theta_to_mirror"], l.to_node), (v["theta_from_mirror"], l.from_node)):
                nd = pnodes[actual]
                mag = max(abs(nd.theta_min), abs(nd.theta_max))
                rel = abs(mirror - sol.theta[actual]) / (mag if mag > 0 else 1.0)
                check("coupling", f"phase:{actual}:{l.id}", rel, 1.0, ctol)
        else:
            r = l.x * p / sys.base_mva - (sol.theta[l.from_node] - sol.theta[l.to_node])
            check("dcflow", f"dcflow:{l.id}", abs(r), l.x * abs(p) / sys.base_mva)
    for g in sys.coal_generators:
        box("bounds", f"coal:{g.id}", sol.p_coal[g.id], g.p_min, g.p_max)
    gas_side = sol.g_gen_gas if sol.g_gen_gas is not None else sol.g_gen
    for g in sys.gas_fired_generators:
        box("bounds", f"gas-fired:{g.id}", sol.g_gen[g.id], g.g_min, g.g_max)
        box("bounds", f"gas-fired:{g.id}:gas-side", gas_side[g.id], g.g_min, g.g_max)
        mag = g.g_max if g.g_max > 0 else 1.0
        check("coupling", f"gas-gen:{g.id}", abs(sol.g_gen[g.id] - gas_side[g.id]) / mag, 1.0, ctol)
    for n in sys.gas_nodes:
        box("bounds", f"pi:{n.id}", sol.pi[n.id], n.pi_min, n.pi_max)
    for w in sys.wells:
        box("bounds", f"well:{w.id}", sol.g_well[w.id], w.g_min, w.g_max)
    for c in sys.compressors:
        f = sol.g_comp[c.id]
        box("bounds", f"compressor-flow:{c.id}", f, 0.0, c.g_cap)
        v = sol.pi[c.to_node] - c.alpha * sol.pi[c.from_node]
        check("compressor", f"compressor:{c.id}", max(v, 0.0), sol.pi[c.to_node])
    wres = {}
    for p in sys.pipelines:
        g = sol.g_pipe[p.id]
        lo = -math.inf if p.g_cap_min is None else p.g_cap_min
        hi = math.inf if p.g_cap_max is None else p.g_cap_max
        check("bounds", f"pipe-cap:{p.id}", max(lo - g, g - hi, 0.0), max(abs(g), 1.0))
        r = weymouth_residual(p, g, sol.pi[p.from_node], sol.pi[p.to_node])
        wres[p.id] = r
        worst["weymouth"] = max(worst["weymouth"], abs(r))
        if not abs(r) <= weymouth_tol:
            fails[f"weymouth:{p.id}"] = abs(r)

    bal = balance_residuals(sys, sol)
    mags = _balance_magnitudes(sys, sol)
    for key, r in bal.items():
        check("balance", f"balance:{key[0]}:{key[1]}", abs(r), mags.get(key, 1.0))

    return VerifyReport(
        passed=not fails,
        violations=fails,
        worst=dict(worst),
        max_weymouth=max((abs(v) for v in wres.values()), default=0.0),
        weymouth=wres,
    )


def _balance_magnitudes(sys: IegsSystem, sol: Dispatch) -> dict:
    mags: dict = defaultdict(float)
    for g in sys.coal_generators:
        mags[("power", g.node)] += abs(sol.p_coal[g.id])
    for g in sys.gas_fired_generators:
        mags[("power", g.power_node)] += abs(sol.g_gen[g.id])
    for l in sys.power_lines:
        mags[("power", l.from_node)] += abs(sol.p_line[l.id])
        mags[("power", l.to_node)] += abs(sol.p_line[l.id])
    for d in sys.loads:
        mags[(d.kind, d.node)] += abs(d.amount)
    for w in sys.wells:
        mags[("gas", w.node)] += abs(sol.g_well[w.id])
    for p in sys.pipelines:
        mags[("gas", p.from_node)] += abs(sol.g_pipe[p.id])
        mags[("gas", p.to_node)] += abs(sol.g_pipe[p.id])
    for c in sys.compressors:
        mags[("gas", c.from_node)] += abs(sol.g_comp[c.id])
        mags[("gas", c.to_node)] += abs(sol.g_comp[c.id])
    return mags
