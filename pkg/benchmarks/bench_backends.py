"""Compare the compiled and numpy interior-point kernels.

Usage: python3 benchmarks/bench_backends.py [--repeat 5] [--sizes 20x20,100x100]
"""

import argparse
import time

import numpy as np

from feqrboot import PanelDataset, _backend, fit_feqr


def _panel(n, T, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.chisquare(3, size=(n, T, p))
    y = rng.uniform(size=n)[:, None] + X.sum(axis=2) + rng.chisquare(4, size=(n, T))
    return PanelDataset(y, X)


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", default="20x20,50x50,100x100,200x100")
    ap.add_argument("--p", type=int, default=1)
    ap.add_argument("--tau", type=float, default=0.5)
    args = ap.parse_args(argv)

    backends = _backend.available()
    print(f"backends: {', '.join(backends)} (default {_backend.DEFAULT}); best of {args.repeat}")
    print(f"{'n x T':>10} " + " ".join(f"{b + ' ms':>13}" for b in backends) + "   speedup   max|dbeta|")
    for spec in args.sizes.split(","):
        n, T = (int(v) for v in spec.split("x"))
        data = _panel(n, T, args.p, seed=n * 1000 + T)
        times, betas = {}, {}
        for b in backends:
            betas[b] = fit_feqr(data, args.tau, backend=b).beta
            times[b] = _time(lambda: fit_feqr(data, args.tau, backend=b), args.repeat)
        row = f"{spec:>10} " + " ".join(f"{1e3 * times[b]:13.2f}" for b in backends)
        if len(backends) == 2:
            diff = float(np.abs(betas["compiled"] - betas["python"]).max())
            row += f"   {times['python'] / times['compiled']:7.2f}   {diff:.1e}"
        print(row)


if __name__ == "__main__":
    main()
