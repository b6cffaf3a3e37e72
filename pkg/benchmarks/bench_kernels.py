"""Times the compiled kernels against the numpy fallbacks at loop-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from calib import _backend


def cases(rng):
    """Shapes seen in one PSO evaluation: 100 particles, ~100 training points, 4096 draws."""
    X1, X2 = rng.normal(size=(100, 2)), rng.normal(size=(100, 2))
    inv = np.array([1.3, 0.7])
    m, s = rng.normal(0, 30, 100), rng.uniform(1, 10, 100)
    z, th = rng.standard_normal(4096), rng.uniform(0, 900, 4096)
    W, FT, base = rng.normal(size=(100, 8)), rng.normal(size=(1801, 8)), rng.normal(size=1801)
    return {
        "matern32 100x100": lambda k: k.matern32(X1, X2, inv, 1.0),
        "improvement_mc EI 100x4096": lambda k: k.improvement_mc(m, s, z, th, False),
        "improvement_mc PI 100x4096": lambda k: k.improvement_mc(m, s, z, th, True),
        "peak_search 100x1801": lambda k: k.peak_search(W, FT, base),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    impls = _backend.implementations()
    print(f"selected backend: {_backend.BACKEND}; available: {', '.join(impls)}")
    print(f"{'kernel':<28}" + "".join(f"{n + ' [ms]':>14}" for n in impls) + f"{'speed-up':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for impl, mod in impls.items():
            fn(mod)
            times[impl] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        row = f"{name:<28}" + "".join(f"{times[i]:>14.3f}" for i in impls)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
