"""Kernel sandwich covariance for the FE-QR slope.

The density-weighted components are estimated with a Gaussian kernel on the
fitted residuals:

    k_it  = phi(e_it / h) / h
    g_i   = sum_t k_it x_it / sum_t k_it
    Gamma = (1/nT) sum_it k_it x_it (x_it - g_i)'
    V     = tau (1 - tau) (1/nT) sum_it (x_it - g_i)(x_it - g_i)'

and the asymptotic covariance of ``sqrt(nT) (beta_hat - beta)`` is
``Gamma^-1 V Gamma^-1``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .bootstrap import CIMethod, ConfidenceInterval, CovarianceEstimate, CovarianceSource, _check_level
from .errors import DimensionMismatch, SingularGamma, ZeroKernelMass
from .panel import PanelDataset, QuantileFit, check_tau, score

COND_CAP = 1e12


class VMode(enum.Enum):
    INDEPENDENT = "indep"
    LONG_RUN = "longrun"

    @classmethod
    def parse(cls, value) -> "VMode":
        if isinstance(value, VMode):
            return value
        key = str(value).strip().lower()
        aliases = {"independent": "indep", "withinunitlongrun": "longrun", "long-run": "longrun"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class SandwichComponents:
    g: np.ndarray
    gamma: np.ndarray
    v: np.ndarray
    bandwidth: float
    kernel: str = "gaussian"
    v_mode: VMode = VMode.INDEPENDENT


def hall_sheather_bandwidth(tau, m: int, alpha_level: float = 0.05) -> float:
    """Hall-Sheather bandwidth on the quantile scale.

    ``h = m^(-1/3) z_{1-a/2}^(2/3) [1.5 phi(z_tau)^2 / (2 z_tau^2 + 1)]^(1/3)``.
    """
    tau = check_tau(tau)
    if m < 2:
        raise ValueError("m must be at least 2")
    if not 0.0 < alpha_level < 1.0:
        raise ValueError("alpha_level must lie in (0, 1)")
    z = stats.norm.ppf(tau)
    za = stats.norm.ppf(1.0 - alpha_level / 2.0)
    bracket = 1.5 * stats.norm.pdf(z) ** 2 / (2.0 * z * z + 1.0)
    return float(m ** (-1.0 / 3.0) * za ** (2.0 / 3.0) * bracket ** (1.0 / 3.0))


def residual_bandwidth(residuals, tau, m: int | None = None, alpha_level: float = 0.05) -> float:
    """Convert the Hall-Sheather bandwidth to the residual scale.

    The quantile-scale ``h`` is halved until ``tau -/+ h`` lies in (0, 1), then
    mapped through ``Phi^-1(tau + h) - Phi^-1(tau - h)`` and multiplied by the
    robust residual scale ``min(sd, IQR / 1.34)``.
    """
    tau = check_tau(tau)
    e = np.asarray(residuals, dtype=np.float64).ravel()
    m = e.size if m is None else m
    h = hall_sheather_bandwidth(tau, m, alpha_level)
    while tau - h <= 0.0 or tau + h >= 1.0:
        h /= 2.0
    sd = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    q75, q25 = np.percentile(e, [75.0, 25.0])
    iqr = float(q75 - q25)
    scale = min(sd, iqr / 1.34) if iqr > 0.0 else sd
    if not scale > 0.0:
        raise ZeroKernelMass("residuals have zero spread; bandwidth undefined")
    return float((stats.norm.ppf(tau + h) - stats.norm.ppf(tau - h)) * scale)


def _lag_window(T: int, lags: int | None) -> int:
    L = int(math.floor(T ** (1.0 / 3.0) + 1e-12)) if lags is None else int(lags)
    return max(0, min(L, T - 1))


def estimate_components(
    data: PanelDataset,
    fit: QuantileFit,
    tau,
    bandwidth: float | None = None,
    v_mode=VMode.INDEPENDENT,
    *,
    lags: int | None = None,
) -> SandwichComponents:
    """Kernel estimates of ``g_i``, ``Gamma`` and ``V`` at a fitted solution.

    ``bandwidth`` is on the residual scale; ``None`` uses
    :func:`residual_bandwidth`. The long-run mode replaces ``V`` by the
    average within-unit long-run variance of ``(x_it - g_i) psi(e_it)`` with a
    Bartlett taper truncated at ``floor(T^(1/3))`` lags unless ``lags`` is given.
    """
    tau = check_tau(tau)
    v_mode = VMode.parse(v_mode)
    n, T, p = data.n, data.T, data.p
    e = np.asarray(fit.residuals, dtype=np.float64)
    if e.shape != (n, T) or np.shape(fit.beta) != (p,):
        raise DimensionMismatch("fit does not match the dataset dimensions")
    h = residual_bandwidth(e, tau) if bandwidth is None else float(bandwidth)
    if not h > 0.0 or not math.isfinite(h):
        raise ValueError(f"bandwidth must be positive and finite, got {h}")

    k = stats.norm.pdf(e / h) / h
    mass = k.sum(axis=1)
    if np.any(mass <= 1e-300):
        bad = np.flatnonzero(mass <= 1e-300)
        raise ZeroKernelMass(f"kernel weights vanish for units {bad.tolist()} at bandwidth {h:g}")
    X = data.X
    g = np.einsum("it,itk->ik", k, X) / mass[:, None]
    Xc = X - g[:, None, :]
    N = n * T
    gamma = np.einsum("it,itk,itl->kl", k, X, Xc) / N
    if v_mode is VMode.INDEPENDENT:
        v = tau * (1.0 - tau) * np.einsum("itk,itl->kl", Xc, Xc) / N
    else:
        u = Xc * score(tau, e)[:, :, None]
        v = np.einsum("itk,itl->kl", u, u)
        L = _lag_window(T, lags)
        for lag in range(1, L + 1):
            c = np.einsum("itk,itl->kl", u[:, lag:], u[:, :-lag])
            v += (1.0 - lag / (L + 1.0)) * (c + c.T)
        v /= N
    v = 0.5 * (v + v.T)
    return SandwichComponents(g=g, gamma=gamma, v=v, bandwidth=h, v_mode=v_mode)


def sandwich(components: SandwichComponents, cond_cap: float = COND_CAP) -> CovarianceEstimate:
    """``Gamma^-1 V Gamma^-T``, symmetrized."""
    G = np.asarray(components.gamma, dtype=np.float64)
    V = np.asarray(components.v, dtype=np.float64)
    p = G.shape[0]
    meta = f"bandwidth={components.bandwidth!r};kernel={components.kernel};v_mode={components.v_mode.value}"
    if p == 0:
        return CovarianceEstimate(np.zeros((0, 0)), CovarianceSource.KERNEL_SANDWICH, meta)
    if not np.all(np.isfinite(G)):
        raise SingularGamma("Gamma has non-finite entries")
    cond = np.linalg.cond(G)
    if not cond < cond_cap:
        raise SingularGamma(f"Gamma condition number {cond:.3g} exceeds {cond_cap:g}")
    A = np.linalg.solve(G, V)
    S = np.linalg.solve(G, A.T).T
    return CovarianceEstimate(0.5 * (S + S.T), CovarianceSource.KERNEL_SANDWICH, meta)


def kernel_covariance(data: PanelDataset, fit: QuantileFit, tau, bandwidth=None, v_mode=VMode.INDEPENDENT):
    return sandwich(estimate_components(data, fit, tau, bandwidth, v_mode))


def kernel_se(data: PanelDataset, fit: QuantileFit, tau, weights=None, *, bandwidth=None, v_mode=VMode.INDEPENDENT):
    """Standard error of ``beta_hat``: ``sqrt(diag(Sigma) / nT)``.

    ``weights`` is accepted so this can serve as a bootstrap replicate hook.
    It is ignored: the sandwich is evaluated at the replicate's own residuals
    with the unweighted formula, which keeps the studentized draws on the
    scale of the original-sample standard error.
    """
    cov = kernel_covariance(data, fit, tau, bandwidth, v_mode)
    return np.sqrt(np.maximum(np.diag(cov.sigma), 0.0) / data.nobs)


def at_ci(fit: QuantileFit, sigma: CovarianceEstimate, nT: int, level: float = 0.9) -> ConfidenceInterval:
    """Asymptotic interval ``beta_hat -/+ z_{1-lam/2} sqrt(Sigma_jj / nT)``."""
    level = _check_level(level)
    if nT <= 0:
        raise ValueError("nT must be positive")
    beta = fit.beta
    if sigma.sigma.shape != (beta.size, beta.size):
        raise DimensionMismatch(f"covariance is {sigma.sigma.shape}, fit has p={beta.size}")
    z = stats.norm.ppf(1.0 - (1.0 - level) / 2.0)
    half = z * sigma.se / math.sqrt(nT)
    return ConfidenceInterval(CIMethod.AT, level, beta - half, beta + half)
