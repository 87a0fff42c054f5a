"""Random-weighted (multiplier) bootstrap for fixed-effects QR.

Each replicate reweights every unit's whole time series by one positive weight
with mean and variance one, refits, and records the slope vector. Confidence
intervals and the covariance estimate are built from the centered replicates.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from . import rng as _rng
from .errors import (
    BootstrapFailure,
    DimensionMismatch,
    FeqrError,
    InsufficientReplicates,
    NegativeDiagonal,
    NonpositiveSE,
    SingularRestriction,
)
from .panel import DEFAULT_MAX_ITER, DEFAULT_TOL, PanelDataset, QuantileFit, check_tau, fit_weighted_feqr

DEFAULT_B = 999
MAX_FAIL_FRACTION = 0.01

_LOG2 = math.log(2.0)


class WeightKind(enum.Enum):
    EXPONENTIAL_UNIT = "exp"
    LOGNORMAL_UNIT = "lognormal"
    ALL_ONES = "all-ones"


@dataclass(frozen=True)
class WeightScheme:
    kind: WeightKind

    @property
    def descriptor(self) -> str:
        return {
            WeightKind.EXPONENTIAL_UNIT: "Exponential(1)",
            WeightKind.LOGNORMAL_UNIT: "LogNormal(mu=-ln(2)/2, sigma^2=ln(2))",
            WeightKind.ALL_ONES: "AllOnes",
        }[self.kind]

    @property
    def name(self) -> str:
        return self.kind.value

    @classmethod
    def parse(cls, value) -> "WeightScheme":
        if isinstance(value, WeightScheme):
            return value
        if isinstance(value, WeightKind):
            return cls(value)
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"exponential": "exp", "ones": "all-ones", "allones": "all-ones"}
        key = aliases.get(key, key)
        for kind in WeightKind:
            if kind.value == key:
                return cls(kind)
        raise ValueError(f"unknown weight scheme {value!r}; expected one of exp, lognormal, all-ones")


EXPONENTIAL = WeightScheme(WeightKind.EXPONENTIAL_UNIT)
LOGNORMAL = WeightScheme(WeightKind.LOGNORMAL_UNIT)
ALL_ONES = WeightScheme(WeightKind.ALL_ONES)


def draw_weights(n: int, scheme, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. positive unit weights with mean 1 and variance 1.

    The lognormal parameters ``mu = -ln(2)/2`` and ``sigma^2 = ln(2)`` are the
    unique pair giving mean and variance one. ``AllOnes`` consumes no draws.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    scheme = WeightScheme.parse(scheme)
    if scheme.kind is WeightKind.EXPONENTIAL_UNIT:
        w = rng.standard_exponential(n)
    elif scheme.kind is WeightKind.LOGNORMAL_UNIT:
        w = rng.lognormal(mean=-0.5 * _LOG2, sigma=math.sqrt(_LOG2), size=n)
    else:
        return np.ones(n)
    # an exact zero has probability ~2^-53 per draw; keep weights strictly positive
    return np.maximum(w, np.finfo(float).tiny)


def replicate_weights(n: int, scheme, seed: int, b: int) -> np.ndarray:
    """Weights for replicate ``b``; depends only on ``(seed, b)``."""
    return draw_weights(n, scheme, _rng.stream(seed, _rng.BOOTSTRAP, b))


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate slope vectors and the point fit.

    ``replicates`` has one row per requested replicate; rows of failed
    replicates are NaN and flagged in ``failed``.
    """

    point_fit: QuantileFit
    replicates: np.ndarray
    B: int
    scheme: WeightScheme
    seed: int
    failed: np.ndarray = field(repr=False, default=None)
    replicate_ses: Optional[np.ndarray] = field(repr=False, default=None)
    replicate_alphas: Optional[np.ndarray] = field(repr=False, default=None)

    @property
    def replicate_alphas_stored(self) -> bool:
        return self.replicate_alphas is not None

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum()) if self.failed is not None else 0

    @property
    def B_used(self) -> int:
        return self.B - self.n_failed

    def valid_replicates(self) -> np.ndarray:
        if self.failed is None:
            return self.replicates
        return self.replicates[~self.failed]

    def centered(self) -> np.ndarray:
        return self.valid_replicates() - self.point_fit.beta


def run_bootstrap(
    data: PanelDataset,
    tau,
    B: int = DEFAULT_B,
    scheme=EXPONENTIAL,
    seed: int = 0,
    *,
    threads: int = 1,
    point_fit: QuantileFit | None = None,
    replicate_se: Callable | None = None,
    store_alphas: bool = False,
    backend: str | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> BootstrapResult:
    """Run ``B`` weighted re-fits.

    Parameters
    ----------
    replicate_se : callable, optional
        ``f(data, fit, tau, weights) -> (p,) array`` evaluated on every
        replicate fit, e.g. a kernel standard error for percentile-t intervals.
    threads : int
        Worker threads. Results do not depend on this value.

    A replicate that does not converge, hits a degenerate design, or whose
    ``replicate_se`` fails is flagged and excluded downstream. More than 1%
    failures raise :class:`BootstrapFailure`.
    """
    tau = check_tau(tau)
    if int(B) != B or B < 2:
        raise ValueError(f"B must be an integer >= 2, got {B!r}")
    B = int(B)
    seed = _rng.check_seed(seed)
    scheme = WeightScheme.parse(scheme)
    n, p = data.n, data.p
    if point_fit is None:
        point_fit = fit_weighted_feqr(data, tau, None, tol=tol, max_iter=max_iter, backend=backend)

    def one(b):
        w = replicate_weights(n, scheme, seed, b)
        if scheme.kind is WeightKind.ALL_ONES:
            # identical objective: the point fit is the replicate
            fit = point_fit
        else:
            try:
                fit = fit_weighted_feqr(data, tau, w, tol=tol, max_iter=max_iter, backend=backend, strict=True)
            except FeqrError:
                return None
        se = None
        if replicate_se is not None:
            try:
                se = np.asarray(replicate_se(data, fit, tau, w), dtype=np.float64)
            except FeqrError:
                return None
            if se.shape != (p,) or not np.all(np.isfinite(se)) or np.any(se <= 0.0):
                return None
        return fit.beta, fit.alpha, se

    if threads <= 1:
        outs = [one(b) for b in range(B)]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            outs = list(ex.map(one, range(B)))

    reps = np.full((B, p), np.nan)
    failed = np.zeros(B, dtype=bool)
    ses = np.full((B, p), np.nan) if replicate_se is not None else None
    alphas = np.full((B, n), np.nan) if store_alphas else None
    for b, out in enumerate(outs):
        if out is None:
            failed[b] = True
            continue
        reps[b] = out[0]
        if alphas is not None:
            alphas[b] = out[1]
        if ses is not None:
            ses[b] = out[2]
    n_failed = int(failed.sum())
    if n_failed > MAX_FAIL_FRACTION * B:
        raise BootstrapFailure(f"{n_failed} of {B} replicates failed (limit {MAX_FAIL_FRACTION:.0%})")
    if B - n_failed < 2:
        raise InsufficientReplicates("fewer than two usable replicates")
    for a in (reps, failed, ses, alphas):
        if a is not None:
            a.setflags(write=False)
    return BootstrapResult(
        point_fit=point_fit,
        replicates=reps,
        B=B,
        scheme=scheme,
        seed=seed,
        failed=failed,
        replicate_ses=ses,
        replicate_alphas=alphas,
    )


class CIMethod(enum.Enum):
    PERCENTILE = "Percentile"
    BOOT_SE = "BootSE"
    T_REF = "TRef"
    AT = "AT"


@dataclass(frozen=True)
class ConfidenceInterval:
    method: CIMethod
    level: float
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.shape != hi.shape:
            raise DimensionMismatch("lower and upper must have the same length")
        if np.any(lo > hi):
            raise ValueError("interval has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        return (self.lower <= value) & (value <= self.upper)


class CovarianceSource(enum.Enum):
    BOOTSTRAP = "bootstrap"
    KERNEL_SANDWICH = "kernel-sandwich"


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma: np.ndarray
    source: CovarianceSource
    metadata: str = ""

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if s.shape[0] != s.shape[1]:
            raise DimensionMismatch(f"covariance must be square, got {s.shape}")
        s = 0.5 * (s + s.T)
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @property
    def se(self) -> np.ndarray:
        d = np.diag(self.sigma)
        if np.any(d < 0.0):
            raise NegativeDiagonal(f"covariance has negative diagonal entries: {d[d < 0.0]}")
        return np.sqrt(d)


def _check_level(level) -> float:
    level = float(level)
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    return level


def empirical_quantile(draws, q) -> np.ndarray:
    """Order statistic ``ceil(B q)`` (1-based) per column of ``draws``.

    This is the left-continuous inverse of the empirical CDF. ``B q`` is
    rounded to 9 decimals first so exact products are not pushed up by
    representation error.
    """
    draws = np.asarray(draws, dtype=np.float64)
    B = draws.shape[0]
    k = int(math.ceil(round(B * q, 9)))
    k = min(max(k, 1), B)
    return np.sort(draws, axis=0)[k - 1]


def _check_tail(B: int, level: float):
    lam = 1.0 - level
    if round(B * lam / 2.0, 9) < 1.0:
        raise InsufficientReplicates(
            f"B={B} replicates cannot resolve the {lam / 2:g} tail; need B >= {math.ceil(2.0 / lam)}"
        )
    return lam


def percentile_ci(result: BootstrapResult, level: float = 0.9) -> ConfidenceInterval:
    """Percentile interval ``beta_hat + [G^-1(lam/2), G^-1(1 - lam/2)]``.

    ``G`` is the empirical distribution of the centered replicates
    ``beta* - beta_hat``.
    """
    level = _check_level(level)
    d = result.centered()
    lam = _check_tail(d.shape[0], level)
    beta = result.point_fit.beta
    lo = beta + empirical_quantile(d, lam / 2.0)
    hi = beta + empirical_quantile(d, 1.0 - lam / 2.0)
    return ConfidenceInterval(CIMethod.PERCENTILE, level, lo, hi)


def bootstrap_covariance(result: BootstrapResult) -> CovarianceEstimate:
    """``(1/B) sum_b (beta*_b - beta_hat)(beta*_b - beta_hat)'``, centered at the point fit."""
    d = result.centered()
    B = d.shape[0]
    if B < 2:
        raise InsufficientReplicates("need at least two replicates")
    sigma = d.T @ d / B
    meta = f"B={result.B};used={B};scheme={result.scheme.name};seed={result.seed}"
    return CovarianceEstimate(sigma, CovarianceSource.BOOTSTRAP, meta)


def se_ci(fit: QuantileFit, cov: CovarianceEstimate, level: float = 0.9) -> ConfidenceInterval:
    """Normal interval ``beta_hat -/+ z_{1-lam/2} * se``."""
    level = _check_level(level)
    beta = fit.beta
    if cov.sigma.shape != (beta.size, beta.size):
        raise DimensionMismatch(f"covariance is {cov.sigma.shape}, fit has p={beta.size}")
    z = stats.norm.ppf(1.0 - (1.0 - level) / 2.0)
    half = z * cov.se
    return ConfidenceInterval(CIMethod.BOOT_SE, level, beta - half, beta + half)


def t_ref_ci(fit: QuantileFit, result: BootstrapResult, replicate_ses, se_hat, level: float = 0.9) -> ConfidenceInterval:
    """Equal-tailed percentile-t interval.

    With ``t*_b = (beta*_b - beta_hat) / se*_b`` the interval is
    ``[beta_hat - t*_{1-lam/2} se_hat, beta_hat - t*_{lam/2} se_hat]``.
    ``replicate_ses`` may have one row per requested replicate (failed rows
    are dropped) or one row per usable replicate.
    """
    level = _check_level(level)
    beta = fit.beta
    p = beta.size
    reps = result.valid_replicates()
    ses = np.asarray(replicate_ses, dtype=np.float64)
    if ses.ndim == 1 and p == 1:
        ses = ses[:, None]
    if ses.shape == (result.B, p) and result.failed is not None and result.n_failed:
        ses = ses[~result.failed]
    if ses.shape != reps.shape:
        raise DimensionMismatch(f"replicate_ses has shape {ses.shape}, expected {reps.shape}")
    se_hat = np.atleast_1d(np.asarray(se_hat, dtype=np.float64))
    if se_hat.shape != (p,):
        raise DimensionMismatch(f"se_hat must have length {p}")
    if not np.all(ses > 0.0) or not np.all(se_hat > 0.0):
        raise NonpositiveSE("standard errors must be strictly positive")
    lam = _check_tail(reps.shape[0], level)
    t = (reps - beta) / ses
    t_lo = empirical_quantile(t, lam / 2.0)
    t_hi = empirical_quantile(t, 1.0 - lam / 2.0)
    return ConfidenceInterval(CIMethod.T_REF, level, beta - t_hi * se_hat, beta - t_lo * se_hat)


def wald_test(R, r, fit: QuantileFit, cov: CovarianceEstimate, nT_scale: float = 1.0):
    """Wald statistic for ``R beta = r`` and its chi-squared(q) p-value.

    The bootstrap covariance already describes the sampling variance of
    ``beta_hat``, so ``nT_scale`` stays at 1 for it. For a covariance of the
    scaled estimator (such as a kernel sandwich) pass ``nT_scale = nT``.
    """
    beta = fit.beta
    p = beta.size
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    q = R.shape[0]
    if R.shape[1] != p or r.shape != (q,) or cov.sigma.shape != (p, p):
        raise DimensionMismatch(f"R must be q x {p} and r length q")
    if nT_scale <= 0:
        raise ValueError("nT_scale must be positive")
    if q > p or np.linalg.matrix_rank(R) < q:
        raise SingularRestriction("R must have full row rank")
    M = R @ cov.sigma @ R.T / nT_scale
    M = 0.5 * (M + M.T)
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > 1e12:
        raise SingularRestriction("R Sigma R' is singular")
    d = R @ beta - r
    try:
        W = float(d @ np.linalg.solve(M, d))
    except np.linalg.LinAlgError:
        raise SingularRestriction("R Sigma R' is singular") from None
    W = max(W, 0.0)
    return W, float(stats.chi2.sf(W, q))
