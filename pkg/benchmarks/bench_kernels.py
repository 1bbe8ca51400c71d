"""Compare the numba kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 12,16,20] [--repeat 5]
Both backends are imported directly, so no env flag is needed here.
"""
import argparse
import timeit

import numpy as np

from userial import _kernels_nb as nbk
from userial import _kernels_py as pyk


def _fwht_case(mod, g, seed):
    base = np.random.default_rng(seed).standard_normal(1 << g)

    def run():
        a = base.copy()
        mod.fwht_inplace(a)
        return a
    return run


def _pow_case(mod, g, seed):
    rng = np.random.default_rng(seed)
    re = rng.standard_normal(1 << g)
    im = rng.standard_normal(1 << g)
    return lambda: mod.pow_abs_sum(re, im, 0.5)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="12,16,20")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<12}{'log2 n':>8}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for g in (int(s) for s in args.sizes.split(",")):
        for name, case in (("fwht", _fwht_case), ("pow_abs_sum", _pow_case)):
            fp, fn = case(pyk, g, g), case(nbk, g, g)
            assert np.allclose(fp(), fn())
            fn()  # JIT warm-up outside the timing
            tp = min(timeit.repeat(fp, number=1, repeat=args.repeat)) * 1e3
            tn = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<12}{g:>8}{tp:>12.3f}{tn:>12.3f}{tp / tn:>10.2f}")


if __name__ == "__main__":
    main()
