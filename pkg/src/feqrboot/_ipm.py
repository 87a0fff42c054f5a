"""Pure numpy Frisch-Newton kernel for the weighted fixed-effects QR program.

This is the fallback used when the compiled extension is unavailable. Both
kernels solve the same bounded dual linear program

    max  ys'a - (1 - tau) * 1'ys   s.t.  Zs'a = (1 - tau) Zs'1,  0 <= a <= 1

where ``Zs = diag(w) [X | unit indicators]`` and ``ys = diag(w) y``, by a
primal-dual predictor-corrector iteration. The Lagrange multipliers of the
equality constraint are the (negated) regression coefficients.

The normal-equations matrix ``Zs' Q Zs`` has a diagonal block for the unit
intercepts, which is eliminated so each Newton step costs one p x p solve.
"""

from __future__ import annotations

import numpy as np

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_SINGULAR = 2

_BIG = 1e20


class _Singular(Exception):
    pass


def _cholesky_solve(S, rhs):
    p = S.shape[0]
    if p == 0:
        return np.zeros(0)
    scale = np.max(np.abs(np.diag(S)))
    if not np.isfinite(scale) or scale <= 0.0:
        raise _Singular
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise _Singular from None
    d = np.diag(L)
    if d.min() ** 2 <= 1e-13 * scale:
        raise _Singular
    u = np.linalg.solve(L, rhs)
    return np.linalg.solve(L.T, u)


class _Design:
    """Row-scaled design ``Zs`` stored as (xs, w) without the indicator block."""

    def __init__(self, xs, w):
        self.xs = xs
        self.w = w
        self.p = xs.shape[2]

    def apply(self, v):
        # Zs' v, split into slope and intercept parts
        vb = np.einsum("itk,it->k", self.xs, v) if self.p else np.zeros(0)
        va = self.w * v.sum(axis=1)
        return vb, va

    def apply_t(self, yb, ya):
        # Zs (yb, ya)
        out = np.repeat((self.w * ya)[:, None], self.xs.shape[1], axis=1)
        if self.p:
            out += self.xs @ yb
        return out

    def normal_solve(self, q, rb, ra):
        """Solve (Zs' diag(q) Zs) [db; da] = [rb; ra] by block elimination."""
        w = self.w
        D = w * w * q.sum(axis=1)
        if np.any(D <= 0.0) or not np.all(np.isfinite(D)):
            raise _Singular
        if self.p:
            xq = self.xs * q[:, :, None]
            m = w[:, None] * xq.sum(axis=1)
            Mbb = np.einsum("itk,itl->kl", xq, self.xs)
            mD = m / D[:, None]
            S = Mbb - mD.T @ m
            db = _cholesky_solve(S, rb - mD.T @ ra)
            da = (ra - m @ db) / D
        else:
            db = np.zeros(0)
            da = ra / D
        return db, da


def _step_bound(v, dv):
    neg = dv < 0.0
    if not np.any(neg):
        return _BIG
    return float(np.min(-v[neg] / dv[neg]))


def _objective(ys, des, beta, alpha, tau):
    r = ys - des.apply_t(beta, alpha)
    return float(np.sum(np.where(r > 0.0, tau * r, (tau - 1.0) * r)))


def solve(y, X, w, tau, tol=1e-7, max_iter=200, step=0.9995):
    """Run the interior-point iteration.

    Parameters
    ----------
    y : (n, T) array
    X : (n, T, p) array
    w : (n,) array of positive unit weights
    tau : quantile level in (0, 1)

    Returns
    -------
    beta, alpha, iterations, rel_gap, status
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n, T = y.shape
    p = X.shape[2]
    N = n * T

    ys = w[:, None] * y
    des = _Design(w[:, None, None] * X, w)
    c = -ys
    abs_scale = 1e-9 * float(np.abs(ys).sum()) + 1e-300

    x = np.full((n, T), 1.0 - tau)
    s = np.full((n, T), tau)

    try:
        yb, ya = des.normal_solve(np.ones((n, T)), *des.apply(c))
    except _Singular:
        return np.full(p, np.nan), np.full(n, np.nan), 0, np.inf, STATUS_SINGULAR
    r = c - des.apply_t(yb, ya)
    # start strictly inside where the least-squares fit interpolates, keeping
    # z - wu = r exactly so dual feasibility is not perturbed
    delta = 1e-3 * float(np.abs(r).mean()) or 1e-3
    z = np.where(r > 0.0, r, 0.0)
    wu = z - r
    tie = r == 0.0
    z[tie] = delta
    wu[tie] = delta

    status = STATUS_MAX_ITER
    rel_gap = np.inf
    it = 0
    sum_ys = float(ys.sum())
    while True:
        # duality gap certificate: primal QR objective at the current
        # multipliers minus the dual objective at the feasible point x
        primal = _objective(ys, des, -yb, -ya, tau)
        dual = float(np.sum(ys * x)) - (1.0 - tau) * sum_ys
        rel_gap = max(primal - dual, 0.0) / max(primal, abs_scale)
        if rel_gap <= tol:
            status = STATUS_CONVERGED
            break
        if it >= max_iter:
            break
        it += 1

        q = 1.0 / (z / x + wu / s)
        r = z - wu
        try:
            dyb, dya = des.normal_solve(q, *des.apply(q * r))
        except _Singular:
            status = STATUS_SINGULAR
            break
        dx = q * (des.apply_t(dyb, dya) - r)
        ds = -dx
        dz = -z * (dx / x + 1.0)
        dw = -wu * (ds / s + 1.0)
        fp = min(step * min(_step_bound(x, dx), _step_bound(s, ds)), 1.0)
        fd = min(step * min(_step_bound(wu, dw), _step_bound(z, dz)), 1.0)

        if min(fp, fd) < 1.0:
            mu = float(np.sum(z * x) + np.sum(wu * s))
            g = float(np.sum((z + fd * dz) * (x + fp * dx)) + np.sum((wu + fd * dw) * (s + fp * ds)))
            mu = mu * (g / mu) ** 3 / (2.0 * N)
            dxdz = dx * dz
            dsdw = ds * dw
            xinv = 1.0 / x
            sinv = 1.0 / s
            xi = mu * (xinv - sinv)
            try:
                dyb, dya = des.normal_solve(q, *des.apply(q * (r + dxdz - dsdw - xi)))
            except _Singular:
                status = STATUS_SINGULAR
                break
            dx = q * (des.apply_t(dyb, dya) + xi - r - dxdz + dsdw)
            ds = -dx
            dz = mu * xinv - z - xinv * z * dx - dxdz
            dw = mu * sinv - wu - sinv * wu * ds - dsdw
            fp = min(step * min(_step_bound(x, dx), _step_bound(s, ds)), 1.0)
            fd = min(step * min(_step_bound(wu, dw), _step_bound(z, dz)), 1.0)

        x = x + fp * dx
        s = s + fp * ds
        yb = yb + fd * dyb
        ya = ya + fd * dya
        wu = wu + fd * dw
        z = z + fd * dz

    return -yb, -ya, it, rel_gap, status
