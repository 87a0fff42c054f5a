# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Frisch-Newton kernel for the weighted fixed-effects QR program.

Same iteration as ``feqrboot._ipm`` with the elementwise passes fused into
flat loops over raw buffers. The iteration runs without the GIL so bootstrap
replicates can be solved on worker threads.
"""

import numpy as np
from libc.math cimport sqrt, fabs, INFINITY

DEF BIG = 1e20
DEF NBUF = 11

cdef enum:
    STATUS_CONVERGED = 0
    STATUS_MAX_ITER = 1
    STATUS_SINGULAR = 2


cdef struct Work:
    int n, T, p, N
    double* w       # n
    double* ys      # N
    double* xs      # N * p, row-major (obs, k)
    double* x
    double* s
    double* z
    double* wu
    double* q
    double* r
    double* xinv
    double* sinv
    double* dx
    double* dz
    double* dw
    double* D       # n
    double* m       # n * p
    double* S       # p * p
    double* rb      # p
    double* ra      # n
    double* yb      # p
    double* ya      # n
    double* dyb     # p
    double* dya     # n


cdef int _factor(double* S, int p) noexcept nogil:
    # in-place lower Cholesky of a row-major p x p matrix; nonzero on failure
    cdef int i, j, k
    cdef double acc, scale = 0.0
    for i in range(p):
        if fabs(S[i * p + i]) > scale:
            scale = fabs(S[i * p + i])
    if not (scale > 0.0) or scale == INFINITY:
        return 1
    for j in range(p):
        acc = S[j * p + j]
        for k in range(j):
            acc -= S[j * p + k] * S[j * p + k]
        if acc <= 1e-13 * scale:
            return 1
        S[j * p + j] = sqrt(acc)
        for i in range(j + 1, p):
            acc = S[i * p + j]
            for k in range(j):
                acc -= S[i * p + k] * S[j * p + k]
            S[i * p + j] = acc / S[j * p + j]
    return 0


cdef void _chol_solve(const double* L, double* b, int p) noexcept nogil:
    cdef int i, k
    cdef double acc
    for i in range(p):
        acc = b[i]
        for k in range(i):
            acc -= L[i * p + k] * b[k]
        b[i] = acc / L[i * p + i]
    for i in range(p - 1, -1, -1):
        acc = b[i]
        for k in range(i + 1, p):
            acc -= L[k * p + i] * b[k]
        b[i] = acc / L[i * p + i]


cdef int _factor_normal(Work* wk) noexcept nogil:
    """Form D, m and the Schur complement for the current q and factor it."""
    cdef int n = wk.n, T = wk.T, p = wk.p
    cdef int i, t, k, l, j
    cdef double qi, wi, acc
    cdef double* xr
    cdef double* mi
    for k in range(p * p):
        wk.S[k] = 0.0
    for i in range(n):
        wi = wk.w[i]
        acc = 0.0
        mi = wk.m + i * p
        for k in range(p):
            mi[k] = 0.0
        for t in range(T):
            j = i * T + t
            qi = wk.q[j]
            acc += qi
            xr = wk.xs + j * p
            for k in range(p):
                mi[k] += qi * xr[k]
                for l in range(k + 1):
                    wk.S[k * p + l] += qi * xr[k] * xr[l]
        acc *= wi * wi
        if not (acc > 0.0) or acc == INFINITY:
            return 1
        wk.D[i] = acc
        for k in range(p):
            mi[k] *= wi
        for k in range(p):
            for l in range(k + 1):
                wk.S[k * p + l] -= mi[k] * mi[l] / acc
    for k in range(p):
        for l in range(k + 1, p):
            wk.S[k * p + l] = wk.S[l * p + k]
    if p == 0:
        return 0
    return _factor(wk.S, p)


cdef void _solve_normal(Work* wk, double* outb, double* outa) noexcept nogil:
    # rhs is read from wk.rb / wk.ra
    cdef int n = wk.n, p = wk.p
    cdef int i, k
    cdef double acc
    for k in range(p):
        acc = wk.rb[k]
        for i in range(n):
            acc -= wk.m[i * p + k] * wk.ra[i] / wk.D[i]
        outb[k] = acc
    if p > 0:
        _chol_solve(wk.S, outb, p)
    for i in range(n):
        acc = wk.ra[i]
        for k in range(p):
            acc -= wk.m[i * p + k] * outb[k]
        outa[i] = acc / wk.D[i]


cdef inline double _bound(double v, double dv, double cur) noexcept nogil:
    # smallest ratio -v/dv over dv < 0, avoiding the division when it cannot win
    if dv < 0.0 and v < -cur * dv:
        return -v / dv
    return cur


cdef void _accumulate_rhs(Work* wk, const double* v) noexcept nogil:
    # rb, ra <- Zs' v
    cdef int n = wk.n, T = wk.T, p = wk.p
    cdef int i, t, k, j
    cdef double acc
    cdef double* xr
    for k in range(p):
        wk.rb[k] = 0.0
    for i in range(n):
        acc = 0.0
        for t in range(T):
            j = i * T + t
            acc += v[j]
            xr = wk.xs + j * p
            for k in range(p):
                wk.rb[k] += xr[k] * v[j]
        wk.ra[i] = wk.w[i] * acc


cdef void _accumulate_rhs_q(Work* wk) noexcept nogil:
    # rb, ra <- Zs' (q * r)
    cdef int n = wk.n, T = wk.T, p = wk.p
    cdef int i, t, k, j
    cdef double acc, v
    cdef double* xr
    for k in range(p):
        wk.rb[k] = 0.0
    for i in range(n):
        acc = 0.0
        for t in range(T):
            j = i * T + t
            v = wk.q[j] * wk.r[j]
            acc += v
            xr = wk.xs + j * p
            for k in range(p):
                wk.rb[k] += xr[k] * v
        wk.ra[i] = wk.w[i] * acc


cdef double _gap(Work* wk, double tau, double sum_ys, double abs_scale) noexcept nogil:
    # relative duality gap: primal QR objective at the current multipliers
    # minus the dual objective at the current dual-feasible point
    cdef int n = wk.n, T = wk.T, p = wk.p
    cdef int i, t, k, j
    cdef double primal = 0.0, dual = 0.0, res, zdot, wi_ai, v
    cdef double* xr
    for i in range(n):
        wi_ai = wk.w[i] * wk.ya[i]
        for t in range(T):
            j = i * T + t
            zdot = wi_ai
            xr = wk.xs + j * p
            for k in range(p):
                zdot += xr[k] * wk.yb[k]
            # multipliers are negated coefficients, so ys + Zs y is the residual
            res = wk.ys[j] + zdot
            if res > 0.0:
                primal += tau * res
            else:
                primal += (tau - 1.0) * res
            dual += wk.ys[j] * wk.x[j]
    dual -= (1.0 - tau) * sum_ys
    v = primal - dual
    if v < 0.0:
        v = 0.0
    return v / (primal if primal > abs_scale else abs_scale)


cdef int _predictor_system(Work* wk, double* mu_out) noexcept nogil:
    # one pass: q, r, complementarity, normal-matrix blocks and rhs Zs'(q r)
    cdef int n = wk.n, T = wk.T, p = wk.p
    cdef int i, t, k, l, j
    cdef double xj, sj, zj, wj, qj, v, wi, dsum, rsum, mu = 0.0
    cdef double* xr
    cdef double* mi
    for k in range(p * p):
        wk.S[k] = 0.0
    for k in range(p):
        wk.rb[k] = 0.0
    for i in range(n):
        wi = wk.w[i]
        mi = wk.m + i * p
        for k in range(p):
            mi[k] = 0.0
        dsum = 0.0
        rsum = 0.0
        for t in range(T):
            j = i * T + t
            xj = wk.x[j]
            sj = wk.s[j]
            zj = wk.z[j]
            wj = wk.wu[j]
            wk.xinv[j] = 1.0 / xj
            wk.sinv[j] = 1.0 / sj
            qj = 1.0 / (zj * wk.xinv[j] + wj * wk.sinv[j])
            wk.q[j] = qj
            wk.r[j] = zj - wj
            mu += zj * xj + wj * sj
            v = qj * (zj - wj)
            dsum += qj
            rsum += v
            xr = wk.xs + j * p
            for k in range(p):
                mi[k] += qj * xr[k]
                wk.rb[k] += xr[k] * v
                for l in range(k + 1):
                    wk.S[k * p + l] += qj * xr[k] * xr[l]
        dsum *= wi * wi
        if not (dsum > 0.0) or dsum == INFINITY:
            return 1
        wk.D[i] = dsum
        wk.ra[i] = wi * rsum
        for k in range(p):
            mi[k] *= wi
        for k in range(p):
            for l in range(k + 1):
                wk.S[k * p + l] -= mi[k] * mi[l] / dsum
    for k in range(p):
        for l in range(k + 1, p):
            wk.S[k * p + l] = wk.S[l * p + k]
    mu_out[0] = mu
    if p == 0:
        return 0
    return _factor(wk.S, p)


cdef int _run(Work* wk, double tau, double tol, int max_iter, double step,
              int* iters, double* gap_out) noexcept nogil:
    cdef int n = wk.n, T = wk.T, p = wk.p, N = wk.N
    cdef int i, t, k, j, it = 0, status = STATUS_MAX_ITER
    cdef double v, rel_gap = INFINITY
    cdef double fx, fs, fw, fz, fp, fd, mu, g, ratio, a1, a2, a3
    cdef double xj, sj, zj, wj, dxj, dzj, dwj, xij, dxdz, dsdw, zdot, wi_ai
    cdef double abs_scale = 0.0, sum_ys = 0.0, absr = 0.0, delta
    cdef double* xr
    cdef double* vbuf = wk.dz

    for j in range(N):
        abs_scale += fabs(wk.ys[j])
        sum_ys += wk.ys[j]
        wk.x[j] = 1.0 - tau
        wk.s[j] = tau
        wk.q[j] = 1.0
    abs_scale = 1e-9 * abs_scale + 1e-300

    # least-squares start for the multipliers: (Zs'Zs) y = Zs'c with c = -ys
    if _factor_normal(wk) != 0:
        gap_out[0] = INFINITY
        iters[0] = 0
        return STATUS_SINGULAR
    for j in range(N):
        vbuf[j] = -wk.ys[j]
    _accumulate_rhs(wk, vbuf)
    _solve_normal(wk, wk.yb, wk.ya)
    for i in range(n):
        wi_ai = wk.w[i] * wk.ya[i]
        for t in range(T):
            j = i * T + t
            zdot = wi_ai
            xr = wk.xs + j * p
            for k in range(p):
                zdot += xr[k] * wk.yb[k]
            v = -wk.ys[j] - zdot
            # r is kept in z for the second pass
            wk.z[j] = v
            absr += fabs(v)
    # start strictly inside where the least-squares fit interpolates, keeping
    # z - wu = r exactly so dual feasibility is not perturbed
    delta = 1e-3 * absr / N
    if delta == 0.0:
        delta = 1e-3
    for j in range(N):
        v = wk.z[j]
        if v > 0.0:
            wk.wu[j] = 0.0
        elif v < 0.0:
            wk.z[j] = 0.0
            wk.wu[j] = -v
        else:
            wk.z[j] = delta
            wk.wu[j] = delta
    rel_gap = _gap(wk, tau, sum_ys, abs_scale)

    while True:
        if rel_gap <= tol:
            status = STATUS_CONVERGED
            break
        if it >= max_iter:
            break
        it += 1

        # predictor
        if _predictor_system(wk, &mu) != 0:
            status = STATUS_SINGULAR
            break
        _solve_normal(wk, wk.dyb, wk.dya)

        fx = BIG
        fs = BIG
        fw = BIG
        fz = BIG
        a1 = 0.0
        a2 = 0.0
        a3 = 0.0
        for i in range(n):
            wi_ai = wk.w[i] * wk.dya[i]
            for t in range(T):
                j = i * T + t
                zdot = wi_ai
                xr = wk.xs + j * p
                for k in range(p):
                    zdot += xr[k] * wk.dyb[k]
                xj = wk.x[j]
                sj = wk.s[j]
                zj = wk.z[j]
                wj = wk.wu[j]
                dxj = wk.q[j] * (zdot - wk.r[j])
                dzj = -zj * (dxj * wk.xinv[j] + 1.0)
                dwj = -wj * (1.0 - dxj * wk.sinv[j])
                wk.dx[j] = dxj
                wk.dz[j] = dzj
                wk.dw[j] = dwj
                # pieces of the complementarity after a trial step (fp, fd)
                a1 += (zj - wj) * dxj
                a2 += dzj * xj + dwj * sj
                a3 += (dzj - dwj) * dxj
                fx = _bound(xj, dxj, fx)
                fs = _bound(sj, -dxj, fs)
                fw = _bound(wj, dwj, fw)
                fz = _bound(zj, dzj, fz)
        fp = step * (fx if fx < fs else fs)
        fd = step * (fw if fw < fz else fz)
        if fp > 1.0:
            fp = 1.0
        if fd > 1.0:
            fd = 1.0

        if fp < 1.0 or fd < 1.0:
            # corrector; the normal matrix is unchanged so its factor is reused
            g = mu + fp * a1 + fd * a2 + fp * fd * a3
            ratio = g / mu
            mu = mu * ratio * ratio * ratio / (2.0 * N)
            for j in range(N):
                dxj = wk.dx[j]
                dxdz = dxj * wk.dz[j]
                dsdw = -dxj * wk.dw[j]
                xij = mu * (wk.xinv[j] - wk.sinv[j])
                wk.dz[j] = dxdz
                wk.dw[j] = dsdw
                wk.r[j] = wk.r[j] - xij + dxdz - dsdw
            _accumulate_rhs_q(wk)
            _solve_normal(wk, wk.dyb, wk.dya)
            fx = BIG
            fs = BIG
            fw = BIG
            fz = BIG
            for i in range(n):
                wi_ai = wk.w[i] * wk.dya[i]
                for t in range(T):
                    j = i * T + t
                    zdot = wi_ai
                    xr = wk.xs + j * p
                    for k in range(p):
                        zdot += xr[k] * wk.dyb[k]
                    dxdz = wk.dz[j]
                    dsdw = wk.dw[j]
                    zj = wk.z[j]
                    wj = wk.wu[j]
                    dxj = wk.q[j] * (zdot - wk.r[j])
                    dzj = (mu - zj * dxj) * wk.xinv[j] - zj - dxdz
                    dwj = (mu + wj * dxj) * wk.sinv[j] - wj - dsdw
                    wk.dx[j] = dxj
                    wk.dz[j] = dzj
                    wk.dw[j] = dwj
                    fx = _bound(wk.x[j], dxj, fx)
                    fs = _bound(wk.s[j], -dxj, fs)
                    fw = _bound(wj, dwj, fw)
                    fz = _bound(zj, dzj, fz)
            fp = step * (fx if fx < fs else fs)
            fd = step * (fw if fw < fz else fz)
            if fp > 1.0:
                fp = 1.0
            if fd > 1.0:
                fd = 1.0

        for j in range(N):
            wk.x[j] += fp * wk.dx[j]
            wk.s[j] -= fp * wk.dx[j]
            wk.wu[j] += fd * wk.dw[j]
            wk.z[j] += fd * wk.dz[j]
        for k in range(p):
            wk.yb[k] += fd * wk.dyb[k]
        for i in range(n):
            wk.ya[i] += fd * wk.dya[i]
        rel_gap = _gap(wk, tau, sum_ys, abs_scale)

    iters[0] = it
    gap_out[0] = rel_gap
    return status


def solve(y, X, w, double tau, double tol=1e-7, int max_iter=200, double step=0.9995):
    """Compiled counterpart of ``feqrboot._ipm.solve`` with the same return tuple."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cdef int n = y.shape[0], T = y.shape[1], p = X.shape[2]
    cdef int N = n * T, pp = max(p, 1)
    cdef int status, iters = 0
    cdef double gap = INFINITY

    # owned numpy buffers; raw pointers into them are used inside the kernel
    cdef double[::1] wv = w.copy()
    cdef double[::1] ysv = (w[:, None] * y).ravel()
    cdef double[::1] xsv = (w[:, None, None] * X).reshape(-1).copy() if p else np.zeros(1)
    cdef double[:, ::1] big = np.zeros((NBUF, N))
    cdef double[::1] small_n = np.zeros(6 * n + n * pp)
    cdef double[::1] small_p = np.zeros(pp * pp + 3 * pp)

    cdef Work wk
    wk.n = n
    wk.T = T
    wk.p = p
    wk.N = N
    wk.w = &wv[0]
    wk.ys = &ysv[0]
    wk.xs = &xsv[0]
    wk.x = &big[0, 0]
    wk.s = &big[1, 0]
    wk.z = &big[2, 0]
    wk.wu = &big[3, 0]
    wk.q = &big[4, 0]
    wk.r = &big[5, 0]
    wk.xinv = &big[6, 0]
    wk.sinv = &big[7, 0]
    wk.dx = &big[8, 0]
    wk.dz = &big[9, 0]
    wk.dw = &big[10, 0]
    wk.D = &small_n[0]
    wk.ra = &small_n[n]
    wk.ya = &small_n[2 * n]
    wk.dya = &small_n[3 * n]
    wk.m = &small_n[6 * n]
    wk.S = &small_p[0]
    wk.rb = &small_p[pp * pp]
    wk.yb = &small_p[pp * pp + pp]
    wk.dyb = &small_p[pp * pp + 2 * pp]

    with nogil:
        status = _run(&wk, tau, tol, max_iter, step, &iters, &gap)

    if status == STATUS_SINGULAR and iters == 0:
        return np.full(p, np.nan), np.full(n, np.nan), 0, float(gap), int(status)
    beta = -np.asarray(small_p[pp * pp + pp: pp * pp + pp + p]).copy()
    alpha = -np.asarray(small_n[2 * n: 3 * n]).copy()
    return beta, alpha, iters, float(gap), int(status)
