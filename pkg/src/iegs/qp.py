"""Block subproblem solver.

A first-order operator-splitting method for strictly convex quadratic programs
with linear rows, variable boxes and parabolic cones ``g^2 <= W (pi_i - pi_j)``.
The problem is equilibrated, iterated with a cached Cholesky factorisation and
optionally polished by an equality-constrained solve on the detected active
set. The factorisation and the iterates are kept between solves, so a sequence
of problems that differ only in the linear term is warm-started.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .model import Parabola

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible-detected"


@dataclass(frozen=True)
class ConvexBlockProblem:
    """``min 0.5 x'Hx + lin'x + const`` over rows, boxes and parabolic cones."""

    hess: sp.csr_matrix
    lin: np.ndarray
    const: float = 0.0
    a_eq: Optional[sp.csr_matrix] = None
    b_eq: Optional[np.ndarray] = None
    a_in: Optional[sp.csr_matrix] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    parabolas: tuple[Parabola, ...] = ()
    strictly_convex: bool = False

    @property
    def n(self) -> int:
        return self.lin.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.hess @ x) + self.lin @ x + self.const)

    def max_violation(self, x) -> float:
        """Largest absolute violation of any row, bound or cone."""
        v = 0.0
        if self.a_eq is not None and self.a_eq.shape[0]:
            v = max(v, float(np.max(np.abs(self.a_eq @ x - self.b_eq))))
        if self.a_in is not None and self.a_in.shape[0]:
            v = max(v, float(np.max(self.a_in @ x - self.b_in, initial=0.0)))
        if self.lb is not None and len(x):
            v = max(v, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        for p in self.parabolas:
            g, t = x[p.flow], x[p.pi_from] - x[p.pi_to]
            gp, tp = project_parabola((g, t), p.weymouth)
            v = max(v, math.hypot(g - gp, t - tp))
        return v


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    max_violation: float
    kkt_residual: float
    iterations: int
    status: str
    y: Optional[np.ndarray] = field(default=None, repr=False)
    polished: bool = False


@dataclass(frozen=True)
class SolverSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_pinf: float = 1e-6
    max_iter: int = 20_000
    sigma: float = 1e-6
    rho: float = 0.1
    alpha: float = 1.6
    check_every: int = 5
    adapt_every: int = 50
    scaling_iters: int = 10
    polish: bool = True


def project_parabola(point, w: float):
    """Nearest point of ``{(g, t): g^2 <= w t}`` to ``point = (g0, t0)``."""
    if not w > 0:
        raise ValueError(f"parabola constant must be positive, got {w}")
    g, t = _kernels.proj_parabola(float(point[0]), float(point[1]), float(w))
    return float(g), float(t)


def scale_variables(p: ConvexBlockProblem, s) -> ConvexBlockProblem:
    """The same problem in ``u = x / s``; parabolas need one scale per cone's pressures."""
    s = np.asarray(s, float)
    S = sp.diags(s)
    pars = []
    for q in p.parabolas:
        if s[q.pi_from] != s[q.pi_to]:
            raise ValueError("both pressure variables of a parabola need the same scale")
        pars.append(Parabola(q.flow, q.pi_from, q.pi_to, q.weymouth * s[q.pi_from] / s[q.flow] ** 2))
    mat = lambda a: None if a is None else (sp.csr_matrix(a) @ S).tocsr()
    return ConvexBlockProblem(
        hess=(S @ sp.csr_matrix(p.hess) @ S).tocsr(),
        lin=s * np.asarray(p.lin, float),
        const=p.const,
        a_eq=mat(p.a_eq),
        b_eq=p.b_eq,
        a_in=mat(p.a_in),
        b_in=p.b_in,
        lb=None if p.lb is None else np.asarray(p.lb, float) / s,
        ub=None if p.ub is None else np.asarray(p.ub, float) / s,
        parabolas=tuple(pars),
        strictly_convex=p.strictly_convex,
    )


def _ruiz(P: sp.csr_matrix, C: sp.csr_matrix, q: np.ndarray, iters: int):
    n, m = P.shape[0], C.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, Cs = P.copy(), C.copy()
    for _ in range(iters):
        colP = np.asarray(abs(Ps).max(axis=0).todense()).ravel() if n else np.zeros(0)
        colC = np.asarray(abs(Cs).max(axis=0).todense()).ravel() if m else np.zeros(n)
        rowC = np.asarray(abs(Cs).max(axis=1).todense()).ravel() if m else np.zeros(0)
        dn = np.maximum(colP, colC)
        dn = np.where(dn < 1e-4, 1.0, np.clip(dn, 1e-4, 1e4))
        em = np.where(rowC < 1e-4, 1.0, np.clip(rowC, 1e-4, 1e4))
        d = 1.0 / np.sqrt(dn)
        e = 1.0 / np.sqrt(em)
        Dd = sp.diags(d)
        Ps = (Dd @ Ps @ Dd).tocsr()
        Cs = (sp.diags(e) @ Cs @ Dd).tocsr()
        D *= d
        E *= e
    colP = np.asarray(abs(Ps).max(axis=0).todense()).ravel() if n else np.zeros(0)
    qn = np.max(np.abs(D * q), initial=0.0)
    base = max(float(np.mean(colP)) if n else 0.0, qn)
    c = 1.0 / min(max(base, 1e-4), 1e4) if base > 0 else 1.0
    return D, E, c, Ps, Cs


class QPSolver:
    """Reusable solver bound to one problem structure.

    Only the linear term may change between :meth:`solve` calls
    (see :meth:`update_linear`); the factorisation and iterates are reused.
    With ``var_scale`` the iteration runs on ``x / var_scale`` while inputs and
    results stay in the caller's units; tolerances then refer to the scaled
    variables.
    """

    def __init__(self, prob: ConvexBlockProblem, settings: SolverSettings = SolverSettings(), var_scale=None):
        self.user_prob = prob
        self.vs = np.ones(prob.n) if var_scale is None else np.asarray(var_scale, float)
        if var_scale is not None:
            prob = scale_variables(prob, self.vs)
        self.prob = prob
        self.settings = settings
        n = prob.n
        self.n = n
        H = sp.csr_matrix(prob.hess, dtype=float)
        blocks, lo, hi = [], [], []
        if prob.a_eq is not None and prob.a_eq.shape[0]:
            blocks.append(sp.csr_matrix(prob.a_eq))
            lo.append(np.asarray(prob.b_eq, float))
            hi.append(np.asarray(prob.b_eq, float))
        if prob.a_in is not None and prob.a_in.shape[0]:
            blocks.append(sp.csr_matrix(prob.a_in))
            lo.append(np.full(prob.a_in.shape[0], -np.inf))
            hi.append(np.asarray(prob.b_in, float))
        lb = np.full(n, -np.inf) if prob.lb is None else np.asarray(prob.lb, float)
        ub = np.full(n, np.inf) if prob.ub is None else np.asarray(prob.ub, float)
        boxed = np.flatnonzero(np.isfinite(lb) | np.isfinite(ub))
        if boxed.size:
            blocks.append(sp.csr_matrix((np.ones(boxed.size), (np.arange(boxed.size), boxed)), shape=(boxed.size, n)))
            lo.append(lb[boxed])
            hi.append(ub[boxed])
        m_lin = sum(b.shape[0] for b in blocks)
        par_rows = []
        for k, p in enumerate(prob.parabolas):
            if len({p.flow, p.pi_from, p.pi_to}) != 3:
                raise ValueError(f"parabola {k} must reference three distinct variables")
            par_rows.append(sp.csr_matrix(([1.0], ([0], [p.flow])), shape=(1, n)))
            par_rows.append(sp.csr_matrix(([1.0, -1.0], ([0, 0], [p.pi_from, p.pi_to])), shape=(1, n)))
        if par_rows:
            blocks.extend(par_rows)
            lo.append(np.full(len(par_rows), -np.inf))
            hi.append(np.full(len(par_rows), np.inf))
        C = sp.vstack(blocks).tocsr() if blocks else sp.csr_matrix((0, n))
        self.C = C
        self.l = np.concatenate(lo) if lo else np.zeros(0)
        self.u = np.concatenate(hi) if hi else np.zeros(0)
        self.m = C.shape[0]
        npar = len(prob.parabolas)
        self.par_g = np.array([m_lin + 2 * k for k in range(npar)], dtype=np.int64)
        self.par_t = np.array([m_lin + 2 * k + 1 for k in range(npar)], dtype=np.int64)
        self.par_w_raw = np.array([p.weymouth for p in prob.parabolas], dtype=float)
        self.H = H

        D, E, c, Ps, Cs = _ruiz(H, C, np.asarray(prob.lin, float), settings.scaling_iters)
        self.D, self.E, self.c = D, E, c
        self.Ps = (c * Ps).tocsr()
        self.Cs = Cs.tocsr()
        self.CsT = Cs.T.tocsr()
        self.ls = E * self.l
        self.us = E * self.u
        self.par_w = self.par_w_raw * E[self.par_g] ** 2 / E[self.par_t] if npar else np.zeros(0)
        self._lin = np.asarray(prob.lin, float)
        self.qs = c * D * self._lin
        self.const = float(prob.const)

        self.eq_rows = np.isfinite(self.l) & (self.l == self.u)
        free = ~np.isfinite(self.l) & ~np.isfinite(self.u)
        if npar:
            free[self.par_g] = False
            free[self.par_t] = False
        self.free_rows = free
        self._set_rho(settings.rho)

        self.x = np.zeros(n)
        self.z = np.zeros(self.m)
        self.y = np.zeros(self.m)
        self.total_iterations = 0

    # ------------------------------------------------------------------
    def _set_rho(self, rho: float):
        self.rho = float(rho)
        rv = np.full(self.m, self.rho)
        rv[self.eq_rows] = 1e3 * self.rho
        rv[self.free_rows] = 1e-6
        self.rho_vec = rv
        K = self.Ps + self.settings.sigma * sp.identity(self.n) + self.CsT @ sp.diags(rv) @ self.Cs
        K = K.toarray()
        try:
            self.L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise ValueError("KKT matrix is not positive definite; is the objective convex?") from exc

    def update_linear(self, lin, const: Optional[float] = None):
        lin = self.vs * np.asarray(lin, float)
        self.qs = self.c * self.D * lin
        self._lin = lin
        if const is not None:
            self.const = float(const)

    def warm_start(self, x):
        """Initialise primal iterates from a point in caller units; duals untouched."""
        x = np.asarray(x, float) / self.vs
        self.x = x / self.D
        cx = self.Cs @ self.x
        z = np.empty_like(cx)
        _kernels._project(cx, self.ls, self.us, self.par_g, self.par_t, self.par_w, z)
        self.z = z

    # ------------------------------------------------------------------
    def _residuals(self, xs, zs, ys):
        cx = self.Cs @ xs
        prim = np.max(np.abs((cx - zs) / self.E), initial=0.0)
        pscale = max(np.max(np.abs(cx / self.E), initial=0.0), np.max(np.abs(zs / self.E), initial=0.0))
        px = self.Ps @ xs
        cty = self.CsT @ ys
        k = 1.0 / (self.D * self.c)
        dual = np.max(np.abs((px + self.qs + cty) * k), initial=0.0)
        dscale = max(
            np.max(np.abs(px * k), initial=0.0),
            np.max(np.abs(cty * k), initial=0.0),
            np.max(np.abs(self.qs * k), initial=0.0),
        )
        return prim, pscale, dual, dscale

    def solve(self, max_iter: Optional[int] = None, eps: Optional[float] = None) -> SolveReport:
        s = self.settings
        max_iter = s.max_iter if max_iter is None else int(max_iter)
        eps_abs = s.eps_abs if eps is None else eps
        eps_rel = s.eps_rel if eps is None else eps
        info = np.zeros(4)
        done = 0
        status = _kernels.RUNNING
        # each rho change doubles the wait before the next one, so rho settles
        # and the fixed-rho convergence guarantee applies
        interval = s.adapt_every
        while done < max_iter:
            steps = min(interval, max_iter - done)
            status, it = _kernels.admm_steps(
                self.L,
                self.Cs.indptr, self.Cs.indices, self.Cs.data,
                self.CsT.indptr, self.CsT.indices, self.CsT.data,
                self.Ps.indptr, self.Ps.indices, self.Ps.data,
                self.qs, self.ls, self.us, self.rho_vec, s.sigma, s.alpha,
                self.par_g, self.par_t, self.par_w,
                self.D, self.E, self.c,
                self.x, self.z, self.y,
                steps, s.check_every, eps_abs, eps_rel, s.eps_pinf,
                info,
            )
            done += it
            if status != _kernels.RUNNING:
                break
            prim, pscale, dual, dscale = info
            if prim > 0 and dual > 0:
                ratio = math.sqrt((prim / max(pscale, 1e-30)) / (dual / max(dscale, 1e-30)))
                new_rho = min(max(self.rho * ratio, 1e-6), 1e6)
                if new_rho > 5 * self.rho or new_rho < self.rho / 5:
                    self._set_rho(new_rho)
                    interval *= 2
        self.total_iterations += done

        if status == _kernels.PRIMAL_INFEASIBLE:
            x = self.D * self.x
            return SolveReport(self.vs * x, math.nan, self.prob.max_violation(x), math.nan, done, INFEASIBLE)

        polished = False
        if s.polish and status == _kernels.CONVERGED:
            polished = self._polish()
        x = self.D * self.x
        y = self.E * self.y / self.c
        prim, pscale, dual, dscale = self._residuals(self.x, self.z, self.y)
        ok = status == _kernels.CONVERGED or polished
        return SolveReport(
            x=self.vs * x,
            objective=float(0.5 * x @ (self.H @ x) + self._lin @ x + self.const),
            max_violation=self.prob.max_violation(x),
            kkt_residual=float(dual),
            iterations=done,
            status=OPTIMAL if ok else MAX_ITER,
            y=y,
            polished=polished,
        )

    # ------------------------------------------------------------------
    def _polish(self, rounds: int = 12) -> bool:
        """Refine on the active set; keep the result only if it is no worse.

        The active set guessed from the iterates is corrected for a few rounds:
        violated rows are added, rows whose multiplier has the wrong sign are
        dropped, and the equality-constrained problem is solved again.
        """
        xs, zs, ys = self.x, self.z, self.y
        m, n = self.m, self.n
        par = np.zeros(m, dtype=bool)
        par[self.par_g] = True
        par[self.par_t] = True
        lin = ~par
        fin_l = np.isfinite(self.ls)
        fin_u = np.isfinite(self.us)
        low = lin & ((zs - self.ls < -ys) | self.eq_rows) & fin_l
        upp = lin & (self.us - zs < ys) & fin_u & ~self.eq_rows
        npar = len(self.par_g)
        cone = np.zeros(npar, dtype=bool)
        g0s = np.zeros(npar)
        for k, (ig, itt) in enumerate(zip(self.par_g, self.par_t)):
            vg, vt = zs[ig] + ys[ig], zs[itt] + ys[itt]
            if vg * vg > self.par_w[k] * vt * (1 + 1e-12) + 1e-14:
                cone[k] = True
                g0s[k], _ = _kernels.proj_parabola(zs[ig], zs[itt], self.par_w[k])
        Cs = self.Cs
        Ps = self.Ps.tocsc()
        tol_l = 1e-9 * np.maximum(1.0, np.abs(np.where(fin_l, self.ls, 0.0)))
        tol_u = 1e-9 * np.maximum(1.0, np.abs(np.where(fin_u, self.us, 0.0)))
        xp = ya = None
        for _ in range(rounds):
            il, iu, ic = np.flatnonzero(low), np.flatnonzero(upp), np.flatnonzero(cone)
            blocks = [Cs[il], Cs[iu]]
            rhs = [self.ls[il], self.us[iu]]
            if ic.size:
                g0 = g0s[ic]
                G = sp.diags(2.0 * g0) @ Cs[self.par_g[ic]] - sp.diags(self.par_w[ic]) @ Cs[self.par_t[ic]]
                blocks.append(G)
                rhs.append(g0 * g0)
            A = sp.vstack(blocks).tocsr()
            b = np.concatenate(rhs)
            na = A.shape[0]
            sol = _kkt_solve(Ps, A, -self.qs, b)
            if sol is None:
                return False
            xp, ya = sol[:n], sol[n:]
            scale = max(1.0, np.max(np.abs(ya), initial=0.0))
            yl, yu, yc = ya[: il.size], ya[il.size : il.size + iu.size], ya[il.size + iu.size :]
            wrong_l = il[(yl > 1e-9 * scale) & ~self.eq_rows[il]]
            wrong_u = iu[yu < -1e-9 * scale]
            wrong_c = ic[yc < -1e-9 * scale]
            cx = Cs @ xp
            add_l = np.flatnonzero(lin & ~low & fin_l & (cx < self.ls - tol_l))
            add_u = np.flatnonzero(lin & ~upp & fin_u & (cx > self.us + tol_u))
            add_c = []
            for k in np.flatnonzero(~cone):
                g, t = cx[self.par_g[k]], cx[self.par_t[k]]
                if g * g > self.par_w[k] * t * (1 + 1e-10) + 1e-12:
                    add_c.append(k)
                    g0s[k], _ = _kernels.proj_parabola(g, t, self.par_w[k])
            if not (wrong_l.size or wrong_u.size or wrong_c.size or add_l.size or add_u.size or add_c):
                break
            low[wrong_l] = False
            upp[wrong_u] = False
            cone[wrong_c] = False
            low[add_l] = True
            upp[add_u] = True
            cone[add_c] = True
        else:
            return False
        il, iu, ic = np.flatnonzero(low), np.flatnonzero(upp), np.flatnonzero(cone)
        yp = np.zeros(m)
        yp[il] = ya[: il.size]
        yp[iu] = ya[il.size : il.size + iu.size]
        mu = ya[il.size + iu.size :]
        if ic.size:
            yp[self.par_g[ic]] = 2.0 * g0s[ic] * mu
            yp[self.par_t[ic]] = -self.par_w[ic] * mu
        cx = Cs @ xp
        zp = np.empty(m)
        _kernels._project(cx, self.ls, self.us, self.par_g, self.par_t, self.par_w, zp)
        before = self._residuals(xs, zs, ys)
        after = self._residuals(xp, zp, yp)
        s = self.settings
        tol_p = s.eps_abs + s.eps_rel * before[1]
        tol_d = s.eps_abs + s.eps_rel * before[3]
        if after[0] <= max(before[0], 1e-3 * tol_p) and after[2] <= max(before[2], 1e-3 * tol_d):
            self.x, self.z, self.y = xp, zp, yp
            return True
        return False


def _kkt_solve(P, A, q, b, delta: float = 1e-7, refine: int = 8):
    """``[P A'; A 0] [x; y] = [q; b]`` by a regularised LU with refinement."""
    n, na = P.shape[0], A.shape[0]
    if na:
        K = sp.bmat([[P, A.T], [A, None]], format="csc")
        Kreg = (K + sp.block_diag([delta * sp.identity(n), -delta * sp.identity(na)])).tocsc()
    else:
        K = P
        Kreg = (P + delta * sp.identity(n)).tocsc()
    rhs = np.concatenate([q, b])
    try:
        lu = spla.splu(Kreg)
    except RuntimeError:
        return None
    sol = lu.solve(rhs)
    for _ in range(refine):
        sol = sol + lu.solve(rhs - K @ sol)
    return sol if np.all(np.isfinite(sol)) else None


def solve_block(
    p: ConvexBlockProblem,
    tol: float = 1e-6,
    max_iter: int = 20_000,
    polish: bool = True,
    x0: Optional[Sequence[float]] = None,
    var_scale=None,
) -> SolveReport:
    """Solve one strictly convex block problem from a cold start.

    Raises ``ValueError`` when the problem is not certified strictly convex and
    its Hessian is not positive definite either.
    """
    if not p.strictly_convex:
        try:
            np.linalg.cholesky(sp.csr_matrix(p.hess).toarray())
        except np.linalg.LinAlgError:
            raise ValueError("block problem is not strictly convex; add a proximal term") from None
    settings = SolverSettings(eps_abs=tol, eps_rel=tol, max_iter=max_iter, polish=polish)
    solver = QPSolver(p, settings, var_scale)
    solver.update_linear(p.lin, p.const)
    if x0 is not None:
        solver.warm_start(x0)
    return solver.solve()
