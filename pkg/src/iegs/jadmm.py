"""Jacobi-proximal ADMM over the blocks of a :class:`CompactForm`.

Each iteration solves every block against a frozen snapshot of the other
blocks (concurrently in jacobi mode, in sequence with the freshest iterates in
gauss mode), then takes a damped multiplier step on the coupling residual.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

from .partition import CompactForm
from .qp import INFEASIBLE, ConvexBlockProblem, QPSolver, SolverSettings

JACOBI = "jacobi"
GAUSS = "gauss_seidel"
MODES = (JACOBI, GAUSS)

CONVERGED = "converged"
MAX_ITER = "max-iter"
TIME_LIMIT = "time-limit"


class BlockInfeasibleError(RuntimeError):
    def __init__(self, block: int, iteration: int):
        super().__init__(f"block {block} subproblem is infeasible (iteration {iteration})")
        self.block = block
        self.iteration = iteration


@dataclass(frozen=True)
class JadmmConfig:
    d: float = 4.0
    gamma: float = 1.0
    p_factor: float = 1.1
    eps_primal: float = 1e-4
    eps_dual: float = 1e-4
    k_max: int = 1000
    eps_r: Optional[tuple] = None
    mode: str = JACOBI
    inner_tol: float = 1e-9

    def validate(self, n_blocks: Optional[int] = None) -> "JadmmConfig":
        if not (self.d > 0 and math.isfinite(self.d)):
            raise ValueError(f"penalty d must be positive, got {self.d}")
        if not 0 < self.gamma < 2:
            raise ValueError(f"damping gamma must lie in (0, 2), got {self.gamma}")
        if not self.p_factor > 1:
            raise ValueError(f"p_factor must exceed 1, got {self.p_factor}")
        if not (self.eps_primal > 0 and self.eps_dual > 0 and self.inner_tol > 0):
            raise ValueError("stopping tolerances must be positive")
        if int(self.k_max) < 1:
            raise ValueError(f"k_max must be at least 1, got {self.k_max}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eps_r is not None:
            eps = [float(e) for e in self.eps_r]
            if any(e <= 0 for e in eps):
                raise ValueError("per-block eps_r must be positive")
            if n_blocks is not None and len(eps) != n_blocks:
                raise ValueError(f"{len(eps)} eps_r values for {n_blocks} blocks")
            if not sum(eps) < 2 - self.gamma:
                raise ValueError(f"sum of eps_r ({sum(eps):g}) must stay below 2 - gamma = {2 - self.gamma:g}")
        return self

    def block_eps(self, n_blocks: int) -> tuple:
        if self.eps_r is not None:
            return tuple(float(e) for e in self.eps_r)
        return (0.99 * (2 - self.gamma) / n_blocks,) * n_blocks


@dataclass
class IterateState:
    xs: list
    lam: np.ndarray
    k: int = 0

    def copy(self) -> "IterateState":
        return IterateState([x.copy() for x in self.xs], self.lam.copy(), self.k)


@dataclass
class ResidualTrace:
    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)  # one tuple of per-block values per iteration
    elapsed_ms: list = field(default_factory=list)

    def __len__(self):
        return len(self.primal)

    def append(self, primal: float, dual: Sequence[float], elapsed_ms: float):
        self.primal.append(float(primal))
        self.dual.append(tuple(float(v) for v in dual))
        self.elapsed_ms.append(float(elapsed_ms))

    def rows(self):
        for k, (p, d, t) in enumerate(zip(self.primal, self.dual, self.elapsed_ms), start=1):
            yield (k, p, *d, t)

    def write_csv(self, path):
        n = len(self.dual[0]) if self.dual else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "primal", *[f"dual_{r + 1}" for r in range(n)], "elapsed_ms"])
            for row in self.rows():
                w.writerow([row[0], *(repr(v) for v in row[1:])])


@dataclass
class JadmmResult:
    state: IterateState
    trace: ResidualTrace
    status: str
    elapsed: float
    objective: float

    @property
    def iterations(self) -> int:
        return self.state.k

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def proximal_matrices(cf: CompactForm, cfg: JadmmConfig) -> list:
    """``p_factor * d * (N / (2 - gamma) - 1) * A_r'A_r`` plus a small ridge."""
    if not cfg.gamma < 2:
        raise ValueError(f"damping gamma must be below 2, got {cfg.gamma}")
    n = cf.n_blocks
    coef = cfg.p_factor * cfg.d * (n / (2.0 - cfg.gamma) - 1.0)
    sigma = 1e-8 * cfg.d
    out = []
    for A in cf.A:
        P = coef * (A.T @ A) + sigma * sp.identity(A.shape[1])
        out.append(sp.csr_matrix(P))
    return out


def _frozen_sum(cf: CompactForm, xs: Sequence, skip: int) -> np.ndarray:
    v = -cf.c.copy()
    for j, (A, x) in enumerate(zip(cf.A, xs)):
        if j != skip:
            v += A @ x
    return v


def _augmented_terms(r, cf, cfg, P, lam, others, xk):
    """Linear term and constant of the block objective beyond ``f_r``."""
    A = cf.A[r]
    v = others - lam / cfg.d
    lin = cfg.d * (A.T @ v) - P @ xk
    const = 0.5 * cfg.d * float(v @ v) + 0.5 * float(xk @ (P @ xk))
    return lin, const


def block_subproblem(r: int, state: IterateState, cf: CompactForm, cfg: JadmmConfig, P, xs_other=None) -> ConvexBlockProblem:
    """The proximal augmented-Lagrangian subproblem of block ``r``.

    Other blocks are taken from ``xs_other`` when given (freshest iterates),
    otherwise from the iteration snapshot ``state``.
    """
    base = cf.local_problem(r)
    xs = state.xs if xs_other is None else xs_other
    others = _frozen_sum(cf, xs, r)
    xk = state.xs[r]
    A = cf.A[r]
    lin, const = _augmented_terms(r, cf, cfg, P, state.lam, others, xk)
    hess = sp.csr_matrix(base.hess + cfg.d * (A.T @ A) + P)
    return ConvexBlockProblem(
        hess=hess,
        lin=base.lin + lin,
        const=base.const + const,
        a_eq=base.a_eq,
        b_eq=base.b_eq,
        a_in=base.a_in,
        b_in=base.b_in,
        lb=base.lb,
        ub=base.ub,
        parabolas=base.parabolas,
        strictly_convex=bool(P.shape[0] == 0 or P.diagonal().min() > 0),
    )


def multiplier_update(state: IterateState, cf: CompactForm, cfg: JadmmConfig, xs_new: Sequence) -> np.ndarray:
    """``lambda - gamma * d * (sum A_r x_r - c)`` on the fresh iterates."""
    return state.lam - cfg.gamma * cfg.d * cf.coupling_residual(xs_new)


def check_stop(xs_new: Sequence, xs_old: Sequence, cf: CompactForm, cfg: JadmmConfig):
    """``(stop, primal, duals)`` with squared residual norms."""
    res = cf.coupling_residual(xs_new)
    primal = float(res @ res)
    duals = tuple(cfg.d * float(np.sum((a - b) ** 2)) for a, b in zip(xs_new, xs_old))
    stop = primal <= cfg.eps_primal and max(duals, default=0.0) <= cfg.eps_dual
    return stop, primal, duals


class _Block:
    """Persistent solver of one block; only its linear term changes."""

    def __init__(self, r, cf, cfg, P):
        self.r = r
        self.base = cf.local_problem(r)
        self.P = P
        A = cf.A[r]
        prob = ConvexBlockProblem(
            hess=sp.csr_matrix(self.base.hess + cfg.d * (A.T @ A) + P),
            lin=self.base.lin.copy(),
            const=self.base.const,
            a_eq=self.base.a_eq,
            b_eq=self.base.b_eq,
            a_in=self.base.a_in,
            b_in=self.base.b_in,
            lb=self.base.lb,
            ub=self.base.ub,
            parabolas=self.base.parabolas,
            strictly_convex=True,
        )
        tol = cfg.inner_tol
        settings = SolverSettings(eps_abs=tol, eps_rel=tol, max_iter=50_000)
        self.solver = QPSolver(prob, settings, cf.solver_scale[r] if cf.solver_scale else None)

    def solve(self, cf, cfg, lam, others, xk, first):
        lin, const = _augmented_terms(self.r, cf, cfg, self.P, lam, others, xk)
        self.solver.update_linear(self.base.lin + lin, self.base.const + const)
        if first:
            self.solver.warm_start(xk)
        return self.solver.solve()


def run(
    cf: CompactForm,
    cfg: JadmmConfig,
    workers: Optional[int] = None,
    time_limit: Optional[float] = None,
    x0: Optional[Sequence] = None,
    callback: Optional[Callable] = None,
    order: Optional[Sequence[int]] = None,
) -> JadmmResult:
    """Iterate until both residuals meet their tolerances or ``k_max``.

    ``workers`` sets the thread count of jacobi mode (default: one per block).
    Block updates read only the iteration snapshot, so results do not depend
    on it, nor on ``order``, the sequence in which jacobi mode visits blocks.
    """
    cfg.validate(cf.n_blocks)
    t0 = time.perf_counter()
    nb = cf.n_blocks
    P = proximal_matrices(cf, cfg)
    blocks = [_Block(r, cf, cfg, P[r]) for r in range(nb)]
    xs = [cf.initial_point(r) for r in range(nb)] if x0 is None else [np.asarray(x, float).copy() for x in x0]
    state = IterateState(xs, np.zeros(cf.n_rows), 0)
    trace = ResidualTrace()
    order = list(range(nb)) if order is None else [int(r) for r in order]
    if sorted(order) != list(range(nb)):
        raise ValueError(f"order must be a permutation of 0..{nb - 1}")
    workers = nb if workers is None else max(1, int(workers))
    pool = ThreadPoolExecutor(max_workers=workers) if cfg.mode == JACOBI and workers > 1 else None
    status = MAX_ITER

    def solve_one(r, xs_view, first):
        rep = blocks[r].solve(cf, cfg, state.lam, _frozen_sum(cf, xs_view, r), state.xs[r], first)
        if rep.status == INFEASIBLE:
            raise BlockInfeasibleError(r, state.k + 1)
        return rep.x

    try:
        # BLAS threads would only compete with the block threads
        with threadpool_limits(limits=1):
            for k in range(int(cfg.k_max)):
                first = k == 0
                if cfg.mode == JACOBI:
                    snap = state.xs
                    new = [None] * nb
                    if pool is not None:
                        for r, x in zip(order, pool.map(lambda r: solve_one(r, snap, first), order)):
                            new[r] = x
                    else:
                        for r in order:
                            new[r] = solve_one(r, snap, first)
                else:
                    new = list(state.xs)
                    for r in range(nb):
                        new[r] = solve_one(r, new, first)
                stop, primal, duals = check_stop(new, state.xs, cf, cfg)
                lam = multiplier_update(state, cf, cfg, new)
                state = IterateState(new, lam, k + 1)
                trace.append(primal, duals, 1e3 * (time.perf_counter() - t0))
                if callback is not None:
                    callback(state, trace)
                if stop or cf.n_rows == 0:
                    status = CONVERGED
                    break
                if time_limit is not None and time.perf_counter() - t0 > time_limit:
                    status = TIME_LIMIT
                    break
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    return JadmmResult(state, trace, status, time.perf_counter() - t0, cf.objective(state.xs))
