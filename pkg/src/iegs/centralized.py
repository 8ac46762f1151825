"""Reference solves of the whole relaxed problem in one piece."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import Parabola
from .partition import CompactForm
from .qp import ConvexBlockProblem, SolveReport, solve_block

# tiny ridge that makes linear-cost blocks strictly convex; it is applied per
# unit of each variable's box magnitude, so its pull on the optimum stays far
# below solver tolerance
RIDGE = 1e-8


@dataclass
class CentralResult:
    xs: list  # scaled block vectors
    objective: float
    report: SolveReport
    elapsed: float

    @property
    def ok(self) -> bool:
        return self.report.status == "optimal"


def _stack(problems, ridge):
    """Block-diagonal union of ``problems``; ``ridge`` is a diagonal vector."""
    offs = np.cumsum([0] + [p.n for p in problems])
    hess = sp.block_diag([p.hess for p in problems], format="csr") + sp.diags(ridge, format="csr")
    a_eq = sp.block_diag([p.a_eq for p in problems], format="csr")
    a_in = sp.block_diag([p.a_in for p in problems], format="csr")
    pars = []
    for o, p in zip(offs, problems):
        pars += [Parabola(q.flow + o, q.pi_from + o, q.pi_to + o, q.weymouth) for q in p.parabolas]
    return offs, ConvexBlockProblem(
        hess=hess,
        lin=np.concatenate([p.lin for p in problems]),
        const=sum(p.const for p in problems),
        a_eq=a_eq,
        b_eq=np.concatenate([p.b_eq for p in problems]),
        a_in=a_in,
        b_in=np.concatenate([p.b_in for p in problems]),
        lb=np.concatenate([p.lb for p in problems]),
        ub=np.concatenate([p.ub for p in problems]),
        parabolas=tuple(pars),
        strictly_convex=True,
    )


def solve_centralized(cf: CompactForm, tol: float = 1e-10, max_iter: int = 1_000_000) -> CentralResult:
    """All blocks and coupling rows in a single QP."""
    t0 = time.perf_counter()
    problems = [cf.local_problem(r) for r in range(cf.n_blocks)]
    svec = np.concatenate(cf.solver_scale)
    offs, p = _stack(problems, RIDGE / svec**2)
    coup = sp.hstack(list(cf.A), format="csr")
    p = ConvexBlockProblem(
        hess=p.hess,
        lin=p.lin,
        const=p.const,
        a_eq=sp.vstack([p.a_eq, coup], format="csr"),
        b_eq=np.concatenate([p.b_eq, cf.c]),
        a_in=p.a_in,
        b_in=p.b_in,
        lb=p.lb,
        ub=p.ub,
        parabolas=p.parabolas,
        strictly_convex=True,
    )
    rep = solve_block(p, tol=tol, max_iter=max_iter, var_scale=svec)
    xs = [rep.x[offs[r]:offs[r + 1]].copy() for r in range(cf.n_blocks)]
    return CentralResult(xs, cf.objective(xs), rep, time.perf_counter() - t0)


def solve_monolithic(cf: CompactForm, tol: float = 1e-10, max_iter: int = 1_000_000) -> CentralResult:
    """Un-partitioned equivalent: every coupled pair is one shared variable.

    Instead of coupling rows, the columns of coupled variables are merged, which
    is the original model before virtual components were introduced.
    """
    t0 = time.perf_counter()
    phys = [cf.local_problem(r) for r in range(cf.n_blocks)]
    offs = np.cumsum([0] + [p.n for p in phys])
    n = int(offs[-1])
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for cc in cf.couplings:
        i = offs[cc.left[0]] + cf.models[cc.left[0]].index(cc.left[1], cc.left[2])
        j = offs[cc.right[0]] + cf.models[cc.right[0]].index(cc.right[1], cc.right[2])
        a, b = find(i), find(j)
        if a != b:
            parent[max(a, b)] = min(a, b)
    roots = sorted({find(i) for i in range(n)})
    col = {r: k for k, r in enumerate(roots)}
    cls = np.array([col[find(i)] for i in range(n)])
    M = sp.csr_matrix((np.ones(n), (np.arange(n), cls)), shape=(n, len(roots)))

    _, big = _stack(phys, np.zeros(n))
    lb = np.full(len(roots), -np.inf)
    ub = np.full(len(roots), np.inf)
    np.maximum.at(lb, cls, big.lb)
    np.minimum.at(ub, cls, big.ub)
    svec = np.ones(len(roots))
    svec[cls] = np.concatenate(cf.solver_scale)
    merged = ConvexBlockProblem(
        hess=(M.T @ big.hess @ M).tocsr() + sp.diags(RIDGE / svec**2, format="csr"),
        lin=M.T @ big.lin,
        const=big.const,
        a_eq=(big.a_eq @ M).tocsr(),
        b_eq=big.b_eq,
        a_in=(big.a_in @ M).tocsr(),
        b_in=big.b_in,
        lb=lb,
        ub=ub,
        parabolas=tuple(Parabola(int(cls[a.flow]), int(cls[a.pi_from]), int(cls[a.pi_to]), a.weymouth) for a in big.parabolas),
        strictly_convex=True,
    )
    rep = solve_block(merged, tol=tol, max_iter=max_iter, var_scale=svec)
    full = rep.x[cls]
    xs = [full[offs[r]:offs[r + 1]].copy() for r in range(cf.n_blocks)]
    return CentralResult(xs, cf.objective(xs), rep, time.perf_counter() - t0)
