"""Command-line front end: ``feqrboot {fit,bootstrap,simulate,coverage}``."""

from __future__ import annotations

import argparse
import csv
import io as _io
import sys

import numpy as np

from . import _backend
from ._version import __version__
from .bootstrap import (
    DEFAULT_B,
    WeightScheme,
    bootstrap_covariance,
    percentile_ci,
    run_bootstrap,
    se_ci,
    t_ref_ci,
)
from .errors import FeqrError
from .io import PanelCsvSpec, dumps_report, fmt6, is_ekc_shape, load_panel, parse_transforms, turning_point, write_panel_csv
from .kernel_cov import VMode, at_ci, estimate_components, kernel_se, sandwich
from .panel import fit_feqr
from .simlab import DESIGN_NAMES, SimulationDesign, generate, rep_stream, run_coverage_study


def _floats(text):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def _taus(text):
    vals = _floats(text)
    for t in vals:
        if not 0.0 < t < 1.0:
            raise argparse.ArgumentTypeError(f"quantile levels must lie in (0, 1), got {t}")
    return vals


def _level(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {v}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"seed must be non-negative, got {v}")
    return v


def _columns(text):
    return [c.strip() for c in text.split(",") if c.strip()]


def _add_data_args(p):
    p.add_argument("--data", required=True, help="long-format CSV, one row per unit-period")
    p.add_argument("--unit", required=True, help="unit identifier column")
    p.add_argument("--time", required=True, help="period column")
    p.add_argument("--y", required=True, help="response column")
    p.add_argument("--x", type=_columns, default=[], help="comma-separated covariate columns")
    p.add_argument("--tau", type=_taus, required=True, help="comma-separated quantile levels")
    p.add_argument("--transforms", default=None, help="column:op:new_name,... with op in log, square, none")
    p.add_argument("--turning-point", default=None, metavar="X1,X2",
                   help="report -b1/(2 b2) for the linear and squared covariates")
    p.add_argument("--out", default=None, help="JSON output file (default stdout)")
    p.add_argument("--csv", default=None, help="also write a CSV summary table here")
    p.add_argument("--backend", choices=_backend.available(), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feqrboot", description="Fixed-effects quantile regression with weighted bootstrap inference.")
    parser.add_argument("--version", action="version", version=f"feqrboot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="point FE-QR fits")
    _add_data_args(p)

    p = sub.add_parser("bootstrap", help="fits with weighted-bootstrap and kernel intervals")
    _add_data_args(p)
    p.add_argument("--B", type=_positive_int, default=DEFAULT_B)
    p.add_argument("--weights", choices=["exp", "lognormal", "all-ones"], default="exp")
    p.add_argument("--level", type=_level, default=0.9)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--vmode", choices=["indep", "longrun"], default="indep")

    p = sub.add_parser("simulate", help="write one simulated panel as CSV")
    p.add_argument("--design", choices=list(DESIGN_NAMES), required=True)
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--T", type=_positive_int, default=100)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("coverage", help="Monte Carlo coverage study")
    p.add_argument("--design", choices=list(DESIGN_NAMES), required=True)
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--T", type=_positive_int, default=100)
    p.add_argument("--reps", type=_positive_int, default=200)
    p.add_argument("--B", type=_positive_int, default=299)
    p.add_argument("--level", type=_level, default=0.9)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--taus", type=_taus, default=[0.25, 0.5, 0.75])
    p.add_argument("--weights", choices=["exp", "lognormal", "all-ones"], default="exp")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--full-scale", action="store_true", help="1000 reps and B = 999")
    p.add_argument("--out", default=None, help="JSON output file (default stdout)")
    p.add_argument("--csv", default=None, help="CSV coverage table")
    p.add_argument("--records", action="store_true", help="include per-rep records in the JSON")
    p.add_argument("--backend", choices=_backend.available(), default=None)
    return parser


def _emit(text: str, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load(args):
    spec = PanelCsvSpec(args.data, args.unit, args.time, args.y, tuple(args.x), parse_transforms(args.transforms))
    return load_panel(spec)


def _fit_summary(data, fit):
    q = np.quantile(fit.alpha, [0.0, 0.25, 0.5, 0.75, 1.0])
    d = fit.diagnostics
    return {
        "tau": fit.tau,
        "beta": {name: float(b) for name, b in zip(data.covariate_names, fit.beta)},
        "alpha_quantiles": dict(zip(["min", "q25", "median", "q75", "max"], q.tolist())),
        "objective": fit.objective,
        "diagnostics": {
            "iterations": d.iterations,
            "duality_gap": d.duality_gap,
            "converged": d.converged,
            "vertex": d.vertex,
            "subgradient_bounds_satisfied": d.subgradient_report.satisfied,
        },
    }


def _turning(args, data, fit):
    if not args.turning_point:
        return None
    cols = _columns(args.turning_point)
    if len(cols) != 2 or any(c not in data.covariate_names for c in cols):
        raise FeqrError(f"--turning-point needs two covariate names from {list(data.covariate_names)}")
    b1 = float(fit.beta[data.covariate_names.index(cols[0])])
    b2 = float(fit.beta[data.covariate_names.index(cols[1])])
    return {"linear": cols[0], "squared": cols[1], "value": turning_point(b1, b2), "ekc_shape": is_ekc_shape(b1, b2)}


def _ci_dict(ci):
    return {"method": ci.method.value, "level": ci.level, "lower": ci.lower.tolist(), "upper": ci.upper.tolist()}


def cmd_fit(args) -> int:
    data = _load(args)
    results = []
    rows = []
    for tau in args.tau:
        fit = fit_feqr(data, tau, backend=args.backend)
        entry = _fit_summary(data, fit)
        tp = _turning(args, data, fit)
        if tp is not None:
            entry["turning_point"] = tp
        results.append(entry)
        for name, b in zip(data.covariate_names, fit.beta):
            rows.append([fmt6(tau), name, fmt6(b)])
    report = {
        "kind": "fit_report",
        "data": {"n": data.n, "T": data.T, "p": data.p, "covariates": list(data.covariate_names)},
        "fits": results,
        "provenance": _provenance(args),
    }
    _emit(dumps_report(report), args.out)
    if args.csv:
        _write_table(args.csv, ["tau", "coef", "estimate"], rows)
    return 0


def _provenance(args, **extra):
    prov = {"tool": "feqrboot", "version": __version__,
            "backend": args.backend or _backend.DEFAULT}
    prov.update(extra)
    return prov


def _write_table(path, header, rows):
    buf = _io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    _emit(buf.getvalue(), path)


def cmd_bootstrap(args) -> int:
    data = _load(args)
    scheme = WeightScheme.parse(args.weights)
    vmode = VMode.parse(args.vmode)
    results = []
    rows = []
    for k, tau in enumerate(args.tau):
        fit = fit_feqr(data, tau, backend=args.backend)
        entry = _fit_summary(data, fit)
        comp = estimate_components(data, fit, tau, v_mode=vmode)
        kcov = sandwich(comp)
        se_hat = np.sqrt(np.maximum(np.diag(kcov.sigma), 0.0) / data.nobs)

        def hook(d, f, t, w):
            return kernel_se(d, f, t, w, v_mode=vmode)

        # each quantile level gets its own replicate streams
        res = run_bootstrap(data, tau, args.B, scheme, args.seed + k, threads=args.threads,
                            point_fit=fit, replicate_se=hook, backend=args.backend)
        bcov = bootstrap_covariance(res)
        cis = [percentile_ci(res, args.level), se_ci(fit, bcov, args.level),
               t_ref_ci(fit, res, res.replicate_ses, se_hat, args.level)]
        at = at_ci(fit, kcov, data.nobs, args.level)
        entry["bootstrap"] = {
            "B": res.B,
            "B_used": res.B_used,
            "failed": res.n_failed,
            "seed": res.seed,
            "intervals": [_ci_dict(c) for c in cis],
            "covariance": bcov.sigma.tolist(),
        }
        entry["asymptotic"] = {
            "bandwidth": comp.bandwidth,
            "v_mode": vmode.value,
            "interval": _ci_dict(at),
            "covariance": kcov.sigma.tolist(),
            "se": se_hat.tolist(),
        }
        tp = _turning(args, data, fit)
        if tp is not None:
            entry["turning_point"] = tp
        results.append(entry)
        for ci in [*cis, at]:
            for j, name in enumerate(data.covariate_names):
                rows.append([fmt6(tau), name, ci.method.value, fmt6(ci.level), fmt6(fit.beta[j]),
                             fmt6(ci.lower[j]), fmt6(ci.upper[j])])
    report = {
        "kind": "bootstrap_report",
        "data": {"n": data.n, "T": data.T, "p": data.p, "covariates": list(data.covariate_names)},
        "fits": results,
        "provenance": _provenance(args, seed=args.seed, B=args.B, scheme=scheme.name,
                                  scheme_descriptor=scheme.descriptor, level=args.level),
    }
    _emit(dumps_report(report), args.out)
    if args.csv:
        _write_table(args.csv, ["tau", "coef", "method", "level", "estimate", "lower", "upper"], rows)
    return 0


def cmd_simulate(args) -> int:
    design = SimulationDesign.from_name(args.design, n=args.n, T=args.T, seed=args.seed, reps=1)
    gp = generate(design, rep_stream(design, 0))
    write_panel_csv(gp.data, args.out)
    return 0


def cmd_coverage(args) -> int:
    design = SimulationDesign.from_name(
        args.design, n=args.n, T=args.T, reps=args.reps, B=args.B, level=args.level, seed=args.seed,
        taus=tuple(args.taus), scheme=args.weights,
    )
    if args.full_scale:
        design = design.full_scale()
    report = run_coverage_study(design, threads=args.threads, backend=args.backend)
    _emit(report.to_json(records=args.records), args.out)
    if args.csv:
        _emit(report.to_csv(), args.csv)
    return 0


COMMANDS = {"fit": cmd_fit, "bootstrap": cmd_bootstrap, "simulate": cmd_simulate, "coverage": cmd_coverage}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FeqrError as e:
        print(f"feqrboot: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"feqrboot: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
