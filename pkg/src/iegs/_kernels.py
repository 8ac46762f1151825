"""Compiled inner loops of the operator-splitting QP solver.

Everything here works on the equilibrated problem and releases the GIL so
independent block solves can run on separate threads.
"""

import math

import numpy as np
from numba import njit

RUNNING = 0
CONVERGED = 1
PRIMAL_INFEASIBLE = 2


@njit(cache=True, nogil=True)
def proj_parabola(g0, t0, w):
    """Euclidean projection of ``(g0, t0)`` onto ``{(g, t): g^2 <= w t}``."""
    if g0 * g0 <= w * t0:
        return g0, t0
    h = abs(g0)
    if h == 0.0:
        return 0.0, 0.0
    a = 2.0 / (w * w)
    b = 1.0 - 2.0 * t0 / w
    # root of a g^3 + b g - h on (0, h]; f is convex there and f(h) > 0, so
    # Newton from the right decreases monotonically onto the root
    g = h
    for _ in range(200):
        f = a * g * g * g + b * g - h
        fp = 3.0 * a * g * g + b
        if fp <= 0.0:
            break
        gn = g - f / fp
        if not gn < g or gn <= 0.0:
            break
        g = gn
    t = g * g / w
    if g * g > w * t:
        t = np.nextafter(t, np.inf)
    return math.copysign(g, g0), t


@njit(cache=True, nogil=True)
def _csr_matvec(indptr, indices, data, x, out):
    for i in range(out.shape[0]):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc


@njit(cache=True, nogil=True)
def _chol_solve(L, b, out):
    n = b.shape[0]
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * out[k]
        out[i] = acc / L[i, i]
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for k in range(i + 1, n):
            acc -= L[k, i] * out[k]
        out[i] = acc / L[i, i]


@njit(cache=True, nogil=True)
def _project(v, l, u, par_g, par_t, par_w, out):
    for i in range(v.shape[0]):
        out[i] = min(max(v[i], l[i]), u[i])
    for k in range(par_g.shape[0]):
        g, t = proj_parabola(v[par_g[k]], v[par_t[k]], par_w[k])
        out[par_g[k]] = g
        out[par_t[k]] = t


@njit(cache=True, nogil=True)
def _inf_norm(v):
    r = 0.0
    for i in range(v.shape[0]):
        a = abs(v[i])
        if a > r:
            r = a
    return r


@njit(cache=True, nogil=True)
def admm_steps(
    L,
    Cp, Ci, Cx,
    Tp, Ti, Tx,
    Pp, Pi, Px,
    q, l, u, rho, sigma, alpha,
    par_g, par_t, par_w,
    D, E, cscale,
    x, z, y,
    steps, check_every, eps_abs, eps_rel, eps_pinf,
    info,
):
    """Run up to ``steps`` ADMM iterations in place on ``x, z, y``.

    ``info`` receives ``[prim, prim_scale, dual, dual_scale]`` in unscaled units
    from the last termination check. Returns ``(status, iterations)``.
    """
    n = x.shape[0]
    m = z.shape[0]
    rhs = np.empty(n)
    xt = np.empty(n)
    zt = np.empty(m)
    tmp_m = np.empty(m)
    tmp_n = np.empty(n)
    cx = np.empty(m)
    px = np.empty(n)
    cty = np.empty(n)
    y_prev = np.empty(m)
    dy = np.empty(m)

    for it in range(1, steps + 1):
        check = (it % check_every) == 0 or it == steps
        if check:
            for i in range(m):
                y_prev[i] = y[i]
        # x-tilde from the cached factorisation
        for i in range(m):
            tmp_m[i] = rho[i] * z[i] - y[i]
        _csr_matvec(Tp, Ti, Tx, tmp_m, tmp_n)
        for i in range(n):
            rhs[i] = sigma * x[i] - q[i] + tmp_n[i]
        _chol_solve(L, rhs, xt)
        _csr_matvec(Cp, Ci, Cx, xt, zt)
        for i in range(n):
            x[i] = alpha * xt[i] + (1.0 - alpha) * x[i]
        for i in range(m):
            zt[i] = alpha * zt[i] + (1.0 - alpha) * z[i]
            tmp_m[i] = zt[i] + y[i] / rho[i]
        _project(tmp_m, l, u, par_g, par_t, par_w, z)
        for i in range(m):
            y[i] = y[i] + rho[i] * (zt[i] - z[i])

        if not check:
            continue

        _csr_matvec(Cp, Ci, Cx, x, cx)
        _csr_matvec(Pp, Pi, Px, x, px)
        _csr_matvec(Tp, Ti, Tx, y, cty)
        prim = 0.0
        ax_n = 0.0
        z_n = 0.0
        for i in range(m):
            e = 1.0 / E[i]
            r = abs((cx[i] - z[i]) * e)
            if r > prim:
                prim = r
            a = abs(cx[i] * e)
            if a > ax_n:
                ax_n = a
            a = abs(z[i] * e)
            if a > z_n:
                z_n = a
        dual = 0.0
        px_n = 0.0
        aty_n = 0.0
        q_n = 0.0
        for i in range(n):
            di = 1.0 / (D[i] * cscale)
            r = abs((px[i] + q[i] + cty[i]) * di)
            if r > dual:
                dual = r
            a = abs(px[i] * di)
            if a > px_n:
                px_n = a
            a = abs(cty[i] * di)
            if a > aty_n:
                aty_n = a
            a = abs(q[i] * di)
            if a > q_n:
                q_n = a
        prim_scale = max(ax_n, z_n)
        dual_scale = max(px_n, max(aty_n, q_n))
        info[0] = prim
        info[1] = prim_scale
        info[2] = dual
        info[3] = dual_scale
        if prim <= eps_abs + eps_rel * prim_scale and dual <= eps_abs + eps_rel * dual_scale:
            return CONVERGED, it

        # primal infeasibility certificate from the multiplier increment
        for i in range(m):
            dy[i] = y[i] - y_prev[i]
        dy_n = 0.0
        for i in range(m):
            a = abs(dy[i] * E[i])
            if a > dy_n:
                dy_n = a
        if dy_n > 1e-30:
            _csr_matvec(Tp, Ti, Tx, dy, cty)
            at_n = 0.0
            for i in range(n):
                a = abs(cty[i] / D[i])
                if a > at_n:
                    at_n = a
            if at_n <= eps_pinf * dy_n:
                supp = 0.0
                bounded = True
                is_par = np.zeros(m, dtype=np.bool_)
                for k in range(par_g.shape[0]):
                    is_par[par_g[k]] = True
                    is_par[par_t[k]] = True
                    a = dy[par_g[k]]
                    b = dy[par_t[k]]
                    small = eps_pinf * 1e-3 * dy_n
                    if b < -small:
                        supp += -a * a * par_w[k] / (4.0 * b)
                    elif abs(a) > small or b > small:
                        bounded = False
                for i in range(m):
                    if is_par[i]:
                        continue
                    if dy[i] > 0.0:
                        if u[i] == np.inf:
                            if dy[i] * E[i] > eps_pinf * 1e-3 * dy_n:
                                bounded = False
                        else:
                            supp += u[i] * dy[i]
                    elif dy[i] < 0.0:
                        if l[i] == -np.inf:
                            if -dy[i] * E[i] > eps_pinf * 1e-3 * dy_n:
                                bounded = False
                        else:
                            supp += l[i] * dy[i]
                if bounded and supp < -eps_pinf * dy_n:
                    return PRIMAL_INFEASIBLE, it
    return RUNNING, steps
