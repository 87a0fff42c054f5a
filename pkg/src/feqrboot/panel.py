"""Balanced panel data model and the (weighted) fixed-effects QR fit."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._ipm import STATUS_CONVERGED, STATUS_SINGULAR
from .errors import DegenerateDesign, DimensionMismatch, NotConverged, NotConvergedWarning

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200

# callables invoked with (fit, data) after every fit; used for auditing
_fit_observers: list = []


def add_fit_observer(callback) -> None:
    _fit_observers.append(callback)


def remove_fit_observer(callback) -> None:
    _fit_observers.remove(callback)


# slack for the subgradient inequalities; the scores are ratios of small integers
# but the aggregate covariate score is a floating-point sum
_BOUND_SLACK = 1e-10


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel: ``y`` is (n, T) and ``X`` is (n, T, p).

    Arrays are copied and made read-only on construction.
    """

    y: np.ndarray
    X: np.ndarray
    unit_labels: tuple = ()
    time_labels: tuple = ()
    covariate_names: tuple = ()

    def __post_init__(self):
        y = _frozen(self.y)
        if y.ndim != 2 or y.shape[0] < 1 or y.shape[1] < 1:
            raise DimensionMismatch(f"y must be a non-empty (n, T) matrix, got shape {y.shape}")
        n, T = y.shape
        X = self.X
        if X is None:
            X = np.zeros((n, T, 0))
        X = _frozen(X)
        if X.ndim == 2 and X.shape == (n, T):
            X = _frozen(X[:, :, None])
        if X.ndim != 3 or X.shape[:2] != (n, T):
            raise DimensionMismatch(f"X must have shape (n, T, p) = ({n}, {T}, p), got {X.shape}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("panel contains non-finite values")
        p = X.shape[2]
        units = tuple(str(u) for u in self.unit_labels) or tuple(str(i) for i in range(n))
        times = tuple(str(t) for t in self.time_labels) or tuple(str(t) for t in range(T))
        names = tuple(str(c) for c in self.covariate_names) or tuple(f"x{k + 1}" for k in range(p))
        if len(units) != n or len(times) != T or len(names) != p:
            raise DimensionMismatch("label lengths must match (n, T, p)")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "unit_labels", units)
        object.__setattr__(self, "time_labels", times)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    @property
    def nobs(self) -> int:
        return self.y.size

    def with_response(self, y) -> "PanelDataset":
        return PanelDataset(y, self.X, self.unit_labels, self.time_labels, self.covariate_names)

    def with_covariates(self, X) -> "PanelDataset":
        return PanelDataset(self.y, X, self.unit_labels, self.time_labels, self.covariate_names)


@dataclass(frozen=True)
class SubgradientReport:
    per_unit_score: np.ndarray
    per_unit_bound: np.ndarray
    aggregate_score_norm: float
    aggregate_bound: float
    satisfied: bool


@dataclass(frozen=True)
class SolverDiagnostics:
    iterations: int
    duality_gap: float
    converged: bool
    subgradient_report: SubgradientReport
    vertex: bool = False
    backend: str = ""


@dataclass(frozen=True)
class QuantileFit:
    tau: float
    alpha: np.ndarray
    beta: np.ndarray
    residuals: np.ndarray
    objective: float
    diagnostics: SolverDiagnostics = field(repr=False)

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


def check_tau(tau) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    return tau


def check_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise DimensionMismatch(f"weights must have length n={n}, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise ValueError("weights must be finite and strictly positive")
    return w


def check_loss(tau, u):
    """Check function ``u * (tau - 1{u <= 0})``; vectorized over ``u``."""
    tau = check_tau(tau)
    u = np.asarray(u, dtype=np.float64)
    out = np.where(u > 0.0, tau * u, (tau - 1.0) * u)
    return float(out) if out.ndim == 0 else out


def score(tau, u):
    """Subgradient ``tau - 1{u <= 0}`` of the check function."""
    tau = check_tau(tau)
    u = np.asarray(u, dtype=np.float64)
    out = np.where(u > 0.0, tau, tau - 1.0)
    return float(out) if out.ndim == 0 else out


def _residuals(data: PanelDataset, alpha, beta):
    # evaluated left to right as y - alpha - X beta so callers can recompute it bit for bit
    r = data.y - alpha[:, None]
    if data.p:
        r = r - data.X @ beta
    return r


def evaluate_objective(data: PanelDataset, tau, weights, alpha, beta) -> float:
    """Weighted FE-QR objective ``(1/nT) sum_i w_i sum_t rho_tau(y - alpha_i - x'beta)``."""
    tau = check_tau(tau)
    w = check_weights(weights, data.n)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if alpha.shape != (data.n,) or beta.shape != (data.p,):
        raise DimensionMismatch(
            f"expected alpha of length {data.n} and beta of length {data.p}, "
            f"got {alpha.shape} and {beta.shape}"
        )
    r = _residuals(data, alpha, beta)
    return float(np.sum(w[:, None] * check_loss(tau, r)) / data.nobs)


def verify_subgradient(fit: QuantileFit, data: PanelDataset, tau, weights=None) -> SubgradientReport:
    """Check the general-position subgradient bounds at a fitted solution.

    Per unit, ``|(1/T) sum_t psi(e_it)|`` is at most ``min(n + p, T) / T``; the
    weighted covariate score ``(1/nT) sum_i w_i sum_t x_it psi(e_it)`` has norm
    at most ``(n + p)/(nT) * max_i w_i * max_it ||x_it||``.
    """
    tau = check_tau(tau)
    w = check_weights(weights, data.n)
    if fit.residuals.shape != data.y.shape or fit.beta.shape != (data.p,):
        raise DimensionMismatch("fit does not match the dataset dimensions")
    n, T, p = data.n, data.T, data.p
    psi = score(tau, fit.residuals)
    per_unit = psi.mean(axis=1)
    per_unit_bound = np.full(n, min(n + p, T) / T)
    if p:
        agg = np.einsum("i,itk,it->k", w, data.X, psi) / (n * T)
        agg_norm = float(np.linalg.norm(agg))
        xmax = float(np.max(np.linalg.norm(data.X, axis=2)))
    else:
        agg_norm, xmax = 0.0, 0.0
    agg_bound = (n + p) / (n * T) * float(w.max()) * xmax
    satisfied = bool(
        np.all(np.abs(per_unit) <= per_unit_bound + _BOUND_SLACK)
        and agg_norm <= agg_bound * (1.0 + _BOUND_SLACK) + _BOUND_SLACK
    )
    return SubgradientReport(
        per_unit_score=per_unit,
        per_unit_bound=per_unit_bound,
        aggregate_score_norm=agg_norm,
        aggregate_bound=agg_bound,
        satisfied=satisfied,
    )


def _vertex_polish(data: PanelDataset, tau, w, alpha, beta):
    """Snap a near-optimal point to the adjacent basic solution and certify it.

    The basis is one observation per unit (smallest absolute residual) plus the
    ``p`` next-smallest residuals overall. Returns ``(alpha, beta, rel_gap)`` for
    a vertex whose basic dual values lie in ``[tau - 1, tau]``, else ``None``.
    """
    y, X = data.y, data.X
    n, T, p = data.n, data.T, data.p
    rows = np.arange(n)
    a = np.abs(_residuals(data, alpha, beta))
    anchor = np.argmin(a, axis=1)
    basic = np.zeros((n, T), dtype=bool)
    basic[rows, anchor] = True
    x0 = X[rows, anchor]
    y0 = y[rows, anchor]
    if p:
        cand = np.where(basic, np.inf, a).ravel()
        extra = np.argpartition(cand, p)[:p] if p < cand.size else np.arange(cand.size)
        extra = extra[np.lexsort((extra, cand[extra]))]
        ei, et = np.unravel_index(extra, (n, T))
        E = X[ei, et] - x0[ei]
        try:
            b = np.linalg.solve(E, y[ei, et] - y0[ei])
        except np.linalg.LinAlgError:
            return None
        basic[ei, et] = True
    else:
        b = np.zeros(0)
    al = y0 - x0 @ b
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(al))):
        return None

    r = _residuals(data, al, b)
    r[basic] = 0.0
    psi = np.where(r > 0.0, tau, tau - 1.0)
    psi[basic] = 0.0
    # basic dual values d solve: sum_t d_it = c_i per unit and
    # sum_i w_i sum_t x_it d_it = g over the basic observations
    c = -psi.sum(axis=1)
    d = np.empty((n, T))
    d[:] = psi
    if p:
        g = -np.einsum("i,itk,it->k", w, X, psi)
        M = (w[ei][:, None] * E).T
        try:
            v_extra = np.linalg.solve(M, g - (w[:, None] * x0 * c[:, None]).sum(axis=0))
        except np.linalg.LinAlgError:
            return None
        v_anchor = c.copy()
        np.add.at(v_anchor, ei, -v_extra)
        d[ei, et] = v_extra
    else:
        v_anchor = c
        v_extra = np.zeros(0)
    d[rows, anchor] = v_anchor
    vs = np.concatenate([v_anchor, v_extra])
    eps = 1e-9
    if not (np.all(vs >= tau - 1.0 - eps) and np.all(vs <= tau + eps)):
        return None
    wy = w[:, None] * y
    primal = float(np.sum(w[:, None] * check_loss(tau, r)))
    dual = float(np.sum(wy * d))
    scale = max(primal, 1e-9 * float(np.abs(wy).sum()), 1e-300)
    return al, b, max(primal - dual, 0.0) / scale


def fit_weighted_feqr(
    data: PanelDataset,
    tau,
    weights=None,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    backend: str | None = None,
    polish: bool = True,
    strict: bool = False,
) -> QuantileFit:
    """Fit the weighted fixed-effects quantile regression.

    Minimizes ``(1/nT) sum_i w_i sum_t rho_tau(y_it - alpha_i - x_it' beta)``
    with an interior-point method; ``weights=None`` means all ones.

    A converged interior-point solution is snapped to the adjacent vertex when
    the vertex's dual certificate holds, so generic problems return an exact
    basic solution. Non-convergence yields ``converged=False`` and a
    :class:`NotConvergedWarning`, or raises :class:`NotConverged` when
    ``strict`` is set.
    """
    tau = check_tau(tau)
    w = check_weights(weights, data.n)
    n, T, p = data.n, data.T, data.p
    if n * T <= n + p:
        raise DegenerateDesign(f"need more observations than parameters: nT={n * T}, n+p={n + p}")
    name = _backend.DEFAULT if backend is None else backend
    kernel = _backend.get_kernel(name)

    beta, alpha, iters, gap, status = kernel(data.y, data.X, w, tau, tol=tol, max_iter=max_iter)
    if status == STATUS_SINGULAR and iters == 0:
        raise DegenerateDesign(
            "normal equations are singular: a covariate is collinear with the unit intercepts"
        )
    beta = np.asarray(beta, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(alpha))):
        raise DegenerateDesign("interior point produced non-finite coefficients")
    converged = status == STATUS_CONVERGED
    vertex = False
    if polish:
        snapped = _vertex_polish(data, tau, w, alpha, beta)
        if snapped is not None:
            al, b, vgap = snapped
            # accept only if it does not lose objective value
            if evaluate_objective(data, tau, w, al, b) <= evaluate_objective(data, tau, w, alpha, beta) * (
                1.0 + 1e-12
            ) + 1e-300 or vgap <= tol:
                alpha, beta, gap, vertex = al, b, vgap, True
                converged = converged or vgap <= tol

    residuals = _residuals(data, alpha, beta)
    objective = float(np.sum(w[:, None] * check_loss(tau, residuals)) / (n * T))
    for arr in (alpha, beta, residuals):
        arr.setflags(write=False)
    partial = QuantileFit(tau, alpha, beta, residuals, objective, diagnostics=None)
    report = verify_subgradient(partial, data, tau, w)
    diag = SolverDiagnostics(
        iterations=int(iters),
        duality_gap=float(gap),
        converged=bool(converged),
        subgradient_report=report,
        vertex=vertex,
        backend=name,
    )
    if not converged:
        msg = f"interior point stopped after {iters} iterations with relative gap {gap:.3g} > {tol:g}"
        if strict:
            raise NotConverged(msg)
        warnings.warn(msg, NotConvergedWarning, stacklevel=2)
    fit = QuantileFit(tau, alpha, beta, residuals, objective, diagnostics=diag)
    for cb in tuple(_fit_observers):
        cb(fit, data)
    return fit


def fit_feqr(data: PanelDataset, tau, **kwargs) -> QuantileFit:
    """Unweighted FE-QR fit (all unit weights equal to one)."""
    return fit_weighted_feqr(data, tau, None, **kwargs)
