"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--n 8000] [--repeat 5]

Prints one line per (kernel, backend) with the best wall time and checks that
both backends agree.
"""

import argparse
import timeit

import numpy as np

from frailnet import _pykernels

try:
    from frailnet import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def make_inputs(n, n_groups, seed=0):
    rng = np.random.default_rng(seed)
    time = np.round(rng.exponential(size=n), 3) + 1e-3
    event = (rng.uniform(size=n) < 0.85).astype(np.int64)
    score = np.round(rng.normal(size=n), 2)
    group = rng.integers(0, n_groups, size=n).astype(np.int64)
    order = np.argsort(time, kind="stable")
    t_sorted = time[order]
    starts = np.unique(np.searchsorted(t_sorted, t_sorted[event[order] == 1], side="left")).astype(np.int64)
    eta_sorted = rng.normal(size=n)
    return time, event, score, group, eta_sorted, starts


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=8000)
    ap.add_argument("--groups", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    time, event, score, group, eta_sorted, starts = make_inputs(args.n, args.groups)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    results = {}
    for name, mod in backends:
        for kernel, call in (
            ("risk_logsumexp", lambda m=mod: m.risk_logsumexp(eta_sorted, starts)),
            ("pair_counts", lambda m=mod: m.pair_counts(time, event, score, group, args.groups)),
        ):
            number = 20 if kernel == "risk_logsumexp" else 1
            best = min(timeit.repeat(call, number=number, repeat=args.repeat)) / number
            results[(kernel, name)] = call()
            print(f"{kernel:15s} {name:7s} n={args.n:6d}  {best * 1e3:10.3f} ms")
    if _ckernels is None:
        print("compiled backend not built; only the numpy fallback was timed")
        return
    np.testing.assert_allclose(results[("risk_logsumexp", "python")], results[("risk_logsumexp", "cython")],
                               rtol=1e-12, atol=1e-12)
    for a, b in zip(results[("pair_counts", "python")], results[("pair_counts", "cython")]):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)
    print("backends agree")


if __name__ == "__main__":
    main()
