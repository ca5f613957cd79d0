"""Compare the compiled and numpy kernels on representative workloads.

Run with ``python benchmarks/bench_kernels.py``. Both backends are checked
for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from dspimage import _fallback
from dspimage.fields import default_coil_pair_ii

try:
    from dspimage import _kernels
except ImportError:  # extension not built
    _kernels = None


def biot_savart_case(n_points):
    loops = default_coil_pair_ii(1.0).loops
    verts = [lp.vertices() for lp in loops]
    starts = np.ascontiguousarray(np.concatenate([v[:-1] for v in verts]))
    ends = np.ascontiguousarray(np.concatenate([v[1:] for v in verts]))
    rng = np.random.default_rng(0)
    points = np.ascontiguousarray(rng.uniform(-3e-3, 3e-3, (n_points, 3)))
    return starts, ends, points


def spectral_case(n_points, n_terms=11):
    rng = np.random.default_rng(1)
    coef = np.ascontiguousarray(rng.normal(size=(n_points, n_terms)) + 1j * rng.normal(size=(n_points, n_terms)))
    rate = np.ascontiguousarray(rng.uniform(0, 2e7, n_points))
    harmonics = np.arange(n_terms, dtype=float) - n_terms // 2
    return coef, rate, harmonics, 7.3e-6


def bench(label, func, args, repeat):
    best = min(timeit.repeat(lambda: func(*args), number=1, repeat=repeat))
    print(f"  {label:<8} {best * 1e3:9.2f} ms")
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; only the numpy kernels can run")
    cases = {
        "biot_savart_segments": biot_savart_case(args.points),
        "spectral_sum": spectral_case(args.points * 20),
    }
    for name, case in cases.items():
        print(name)
        ref = getattr(_fallback, name)(*case)
        t_py = bench("numpy", getattr(_fallback, name), case, args.repeat)
        if _kernels is not None:
            out = getattr(_kernels, name)(*case)
            err = np.abs(out - ref).max() / np.abs(ref).max()
            t_c = bench("cython", getattr(_kernels, name), case, args.repeat)
            print(f"  speedup  {t_py / t_c:9.2f}x   max relative difference {err:.1e}")


if __name__ == "__main__":
    main()
