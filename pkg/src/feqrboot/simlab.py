"""Monte Carlo designs and coverage studies for the bootstrap intervals."""

from __future__ import annotations

import csv
import enum
import functools
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import signal, stats

from ._version import __version__
from . import rng as _rng
from .bootstrap import (
    bootstrap_covariance,
    percentile_ci,
    run_bootstrap,
    se_ci,
    t_ref_ci,
)
from .errors import FeqrError, RepError
from .kernel_cov import at_ci, estimate_components, kernel_se, sandwich
from .panel import PanelDataset, check_tau, fit_weighted_feqr

METHODS = ("RWBp", "RWBse", "RWBt", "AT")

# draws for the stationary ARMA quantile oracle, laid out as chains x length
ORACLE_CHAINS = 10_000
ORACLE_LENGTH = 1_000
ORACLE_SEED = 0


class Family(enum.Enum):
    STATIC_LOCATION = "StaticLocation"
    STATIC_LOCATION_SCALE = "StaticLocationScale"
    DYNAMIC = "Dynamic"


class ErrorKind(enum.Enum):
    IID_CHISQ4 = "IIDChiSq4"
    ARMA_CHISQ = "ARMAChiSq"


DESIGN_NAMES = {
    "loc": (Family.STATIC_LOCATION, ErrorKind.IID_CHISQ4, 0.0),
    "locscale": (Family.STATIC_LOCATION_SCALE, ErrorKind.IID_CHISQ4, 0.2),
    "locdep": (Family.STATIC_LOCATION, ErrorKind.ARMA_CHISQ, 0.0),
    "locscaledep": (Family.STATIC_LOCATION_SCALE, ErrorKind.ARMA_CHISQ, 0.2),
    "dynamic": (Family.DYNAMIC, ErrorKind.IID_CHISQ4, 0.0),
}


@dataclass(frozen=True)
class SimulationDesign:
    family: Family
    error_kind: ErrorKind = ErrorKind.IID_CHISQ4
    n: int = 100
    T: int = 100
    gamma: float = 0.0
    rho: float = 0.4
    theta: float = 0.5
    taus: tuple = (0.25, 0.5, 0.75)
    reps: int = 200
    B: int = 299
    level: float = 0.9
    seed: int = 0
    scheme: str = "exp"
    arma_burn_in: int = 100
    dynamic_burn_in: int = 50

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "error_kind", ErrorKind(self.error_kind))
        object.__setattr__(self, "taus", tuple(check_tau(t) for t in self.taus))
        if not self.taus:
            raise ValueError("taus must be nonempty")
        if self.family is Family.STATIC_LOCATION and self.gamma != 0.0:
            raise ValueError("StaticLocation requires gamma = 0")
        if self.family is Family.DYNAMIC and self.error_kind is not ErrorKind.IID_CHISQ4:
            raise ValueError("Dynamic design uses i.i.d. chi-squared(4) errors")
        if self.gamma < 0.0:
            raise ValueError("gamma must be non-negative so the scale 1 + gamma x stays positive")
        if self.n < 1 or self.T < 2 or self.reps < 1 or self.B < 2 or self.dynamic_burn_in < 1:
            raise ValueError("need n >= 1, T >= 2, reps >= 1, B >= 2 and a positive burn-in")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        _rng.check_seed(self.seed)

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "SimulationDesign":
        try:
            family, kind, gamma = DESIGN_NAMES[name]
        except KeyError:
            raise ValueError(f"unknown design {name!r}; expected one of {', '.join(DESIGN_NAMES)}") from None
        kwargs.setdefault("gamma", gamma)
        return cls(family=family, error_kind=kind, **kwargs)

    @property
    def name(self) -> str:
        for key, (fam, kind, gamma) in DESIGN_NAMES.items():
            if fam is self.family and kind is self.error_kind:
                return key
        return self.family.value

    def full_scale(self) -> "SimulationDesign":
        """Replication counts of the published study (1000 reps, B = 999)."""
        return replace(self, reps=1000, B=999)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        d["error_kind"] = self.error_kind.value
        d["taus"] = list(self.taus)
        return d


@dataclass(frozen=True)
class GeneratedPanel:
    data: PanelDataset
    alpha_true: np.ndarray
    beta_true_at: dict


def arma_errors(eta, rho: float, theta: float, burn_in: int) -> np.ndarray:
    """ARMA(1,1) filter along the last axis from zero initial conditions.

    ``e_t = rho e_{t-1} + eta_t + theta eta_{t-1}``; the first ``burn_in``
    columns are dropped.
    """
    e = signal.lfilter([1.0, theta], [1.0, -rho], eta, axis=-1)
    return e[..., burn_in:]


@functools.lru_cache(maxsize=2)
def _arma_draws(rho: float, theta: float, chains: int, length: int, burn_in: int, seed: int) -> np.ndarray:
    g = _rng.stream(seed, _rng.ORACLE)
    out = []
    block = 1000
    for start in range(0, chains, block):
        m = min(block, chains - start)
        eta = g.chisquare(4.0, size=(m, burn_in + length))
        out.append(arma_errors(eta, rho, theta, burn_in).ravel())
    draws = np.concatenate(out)
    draws.sort()
    draws.setflags(write=False)
    return draws


def arma_quantile(tau, rho: float = 0.4, theta: float = 0.5, *, chains: int = ORACLE_CHAINS,
                  length: int = ORACLE_LENGTH, burn_in: int = 100, seed: int = ORACLE_SEED) -> float:
    """Stationary marginal tau-quantile of ARMA(1,1) errors with chi-squared(4) innovations.

    There is no closed form; the value is the order statistic ``ceil(N tau)``
    of ``N = chains * length`` simulated draws (10^7 by default) taken after a
    burn-in from zero. The sorted draws are cached per parameter set.
    """
    tau = check_tau(tau)
    draws = _arma_draws(float(rho), float(theta), int(chains), int(length), int(burn_in), int(seed))
    N = draws.size
    return float(draws[min(max(math.ceil(round(N * tau, 9)), 1), N) - 1])


def error_quantile(design: SimulationDesign, tau) -> float:
    if design.error_kind is ErrorKind.IID_CHISQ4:
        return float(stats.chi2.ppf(tau, 4))
    return arma_quantile(tau, design.rho, design.theta, burn_in=design.arma_burn_in)


def true_beta(design: SimulationDesign, tau) -> float:
    """Population slope of the conditional tau-quantile."""
    tau = check_tau(tau)
    if design.family is Family.DYNAMIC:
        return float(design.rho)
    if design.gamma == 0.0:
        return 1.0
    return 1.0 + design.gamma * error_quantile(design, tau)


def generate_static(design: SimulationDesign, rng: np.random.Generator) -> GeneratedPanel:
    """``y = alpha_i + x + (1 + gamma x) e`` with ``x = 0.3 alpha_i + chi2(3)``."""
    if design.family is Family.DYNAMIC:
        raise ValueError("generate_static needs a static design")
    n, T = design.n, design.T
    alpha = rng.uniform(size=n)
    x = 0.3 * alpha[:, None] + rng.chisquare(3.0, size=(n, T))
    if design.error_kind is ErrorKind.IID_CHISQ4:
        e = rng.chisquare(4.0, size=(n, T))
    else:
        eta = rng.chisquare(4.0, size=(n, design.arma_burn_in + T))
        e = arma_errors(eta, design.rho, design.theta, design.arma_burn_in)
    y = alpha[:, None] + x + (1.0 + design.gamma * x) * e
    data = PanelDataset(y, x[:, :, None], covariate_names=("x",))
    truth = {t: np.array([true_beta(design, t)]) for t in design.taus}
    return GeneratedPanel(data, alpha, truth)


def ar_path(alpha, eps, rho: float, burn_in: int) -> np.ndarray:
    """AR(1) paths ``y_t = alpha_i + rho y_{t-1} + eps_t`` from ``y = 0``.

    With ``burn_in + T`` columns of ``eps`` the start value is
    ``y_{-burn_in} = 0`` and ``y_{-burn_in+1}, ..., y_T`` are generated. The
    pre-sample values before ``y_0`` are dropped and ``y_0, ..., y_T`` returned.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    drive = alpha[:, None] + np.asarray(eps, dtype=np.float64)
    return signal.lfilter([1.0], [1.0, -rho], drive, axis=1)[:, burn_in - 1:]


def generate_dynamic(design: SimulationDesign, rng: np.random.Generator) -> GeneratedPanel:
    """``y_t = alpha_i + rho y_{t-1} + e_t`` with regressor ``y_{t-1}``, t = 1..T."""
    if design.family is not Family.DYNAMIC:
        raise ValueError("generate_dynamic needs the dynamic design")
    n, T = design.n, design.T
    alpha = rng.uniform(size=n)
    eps = rng.chisquare(4.0, size=(n, design.dynamic_burn_in + T))
    path = ar_path(alpha, eps, design.rho, design.dynamic_burn_in)
    data = PanelDataset(path[:, 1:], path[:, :-1, None], covariate_names=("y_lag",))
    truth = {t: np.array([float(design.rho)]) for t in design.taus}
    return GeneratedPanel(data, alpha, truth)


def generate(design: SimulationDesign, rng: np.random.Generator) -> GeneratedPanel:
    if design.family is Family.DYNAMIC:
        return generate_dynamic(design, rng)
    return generate_static(design, rng)


def rep_stream(design: SimulationDesign, rep: int) -> np.random.Generator:
    return _rng.stream(design.seed, _rng.SIM_REP, rep)


def _finite_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass(frozen=True)
class CoverageRow:
    tau: float
    method: str
    coverage: float
    avg_width: float
    reps_used: int
    mc_stderr: float


@dataclass(frozen=True)
class CoverageReport:
    design: SimulationDesign
    rows: tuple
    truths: dict
    records: tuple = field(repr=False, default=())
    backend: str = ""

    def row(self, tau, method) -> CoverageRow:
        for r in self.rows:
            if r.method == method and math.isclose(r.tau, tau):
                return r
        raise KeyError((tau, method))

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "coverage_report",
            "design": self.design.to_dict(),
            "truths": {repr(t): v for t, v in self.truths.items()},
            "rows": [{k: _finite_or_none(v) for k, v in asdict(r).items()} for r in self.rows],
            "provenance": {
                "seed": self.design.seed,
                "B": self.design.B,
                "scheme": self.design.scheme,
                "tool": "feqrboot",
                "version": __version__,
                "backend": self.backend,
            },
        }

    def to_json(self, records: bool = False) -> str:
        d = self.to_dict()
        if records:
            d["records"] = list(self.records)
        return json.dumps(d, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["tau", "method", "coverage", "avg_width", "reps_used", "mc_stderr"])
        for r in self.rows:
            wr.writerow([f"{r.tau:.6g}", r.method, f"{r.coverage:.6g}", f"{r.avg_width:.6g}", r.reps_used,
                         f"{r.mc_stderr:.6g}"])
        return buf.getvalue()


def _one_rep(design: SimulationDesign, rep: int, backend):
    gp = generate(design, rep_stream(design, rep))
    data = gp.data
    out = []
    for k, tau in enumerate(design.taus):
        truth = float(gp.beta_true_at[tau][0])
        rec = {"rep": rep, "tau": tau, "beta_true": truth}
        try:
            fit = fit_weighted_feqr(data, tau, backend=backend, strict=True)
        except FeqrError as e:
            raise RepError(f"rep {rep}, tau {tau}: {type(e).__name__}: {e}", rep, tau) from e
        rec["beta_hat"] = float(fit.beta[0])
        intervals = {}
        # asymptotic comparator and the original-sample SE for the t method
        se_hat = None
        try:
            cov_at = sandwich(estimate_components(data, fit, tau))
            se_hat = np.sqrt(np.diag(cov_at.sigma) / data.nobs)
            intervals["AT"] = at_ci(fit, cov_at, data.nobs, design.level)
        except FeqrError as e:
            rec["AT_error"] = type(e).__name__

        try:
            res = run_bootstrap(
                data, tau, design.B, design.scheme, _rng.derive_seed(design.seed, _rng.SIM_REP, rep, k),
                point_fit=fit, replicate_se=kernel_se, backend=backend,
            )
        except FeqrError as e:
            raise RepError(f"rep {rep}, tau {tau}: {type(e).__name__}: {e}", rep, tau) from e
        cov = bootstrap_covariance(res)
        rec["boot_se"] = float(np.sqrt(cov.sigma[0, 0]))
        rec["boot_failed"] = res.n_failed
        intervals["RWBp"] = percentile_ci(res, design.level)
        intervals["RWBse"] = se_ci(fit, cov, design.level)
        if se_hat is not None:
            rec["kernel_se"] = float(se_hat[0])
            try:
                intervals["RWBt"] = t_ref_ci(fit, res, res.replicate_ses, se_hat, design.level)
            except FeqrError as e:
                rec["RWBt_error"] = type(e).__name__
        for m in METHODS:
            ci = intervals.get(m)
            if ci is None:
                continue
            rec[m] = {
                "lower": float(ci.lower[0]),
                "upper": float(ci.upper[0]),
                "covered": bool(ci.contains(truth)[0]),
            }
        out.append(rec)
    return out


def run_coverage_study(design: SimulationDesign, *, threads: int = 1, backend: str | None = None,
                       progress=None) -> CoverageReport:
    """Empirical coverage of the four interval methods.

    Rep ``r`` draws its panel from the stream keyed by ``(seed, r)`` and its
    bootstrap weights from a seed derived from ``(seed, r, tau index)``, so the
    report does not depend on ``threads``.
    """
    from . import _backend

    if design.family is not Family.DYNAMIC and design.error_kind is ErrorKind.ARMA_CHISQ:
        # build the cached oracle once before workers start
        for t in design.taus:
            true_beta(design, t)

    def work(rep):
        recs = _one_rep(design, rep, backend)
        if progress is not None:
            progress(rep)
        return recs

    if threads <= 1:
        per_rep = [work(r) for r in range(design.reps)]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            per_rep = list(ex.map(work, range(design.reps)))
    records = [rec for recs in per_rep for rec in recs]

    rows = []
    for tau in design.taus:
        recs = [r for r in records if r["tau"] == tau]
        for m in METHODS:
            used = [r[m] for r in recs if m in r]
            k = len(used)
            hits = sum(1 for u in used if u["covered"])
            cov = hits / k if k else float("nan")
            width = float(np.mean([u["upper"] - u["lower"] for u in used])) if k else float("nan")
            se = math.sqrt(cov * (1.0 - cov) / k) if k else float("nan")
            rows.append(CoverageRow(tau, m, cov, width, k, se))
    truths = {t: true_beta(design, t) for t in design.taus}
    name = _backend.DEFAULT if backend is None else backend
    return CoverageReport(design, tuple(rows), truths, tuple(records), name)
