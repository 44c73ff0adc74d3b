"""Time the compiled kernels against the numpy fallback and check they agree.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import timeit

import numpy as np

from hybriddp.kernels import backends


def cases(rng):
    A = rng.normal(size=(16, 16))
    A = A @ A.T
    eps0 = np.concatenate([[0.0, 0.0], np.linspace(0.01, 2.0, 255)])
    return {
        "subsampled_gaussian_curve(amax=256)": lambda k: k.subsampled_gaussian_curve(256, 0.01, 0.5),
        "twice_curve(amax=256)": lambda k: k.twice_curve(256, 0.02, eps0),
        "max_sign_quadratic(d=16)": lambda k: k.max_sign_quadratic(A)[0],
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    impls = backends()
    if "cython" not in impls:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} " + " ".join(f"{name:>12s}" for name in impls) + "   speedup   max rel diff")
    for label, fn in cases(rng).items():
        times, values = {}, {}
        for name, mod in impls.items():
            values[name] = np.asarray(fn(mod))
            n = max(1, args.repeat)
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=n))
        row = f"{label:40s} " + " ".join(f"{times[name] * 1e3:10.2f}ms" for name in impls)
        if "cython" in impls:
            ref = values["python"]
            diff = np.max(np.abs(values["cython"] - ref) / np.maximum(np.abs(ref), 1e-300))
            row += f"   {times['python'] / times['cython']:7.1f}x   {diff:.2e}"
        print(row)


if __name__ == "__main__":
    main()
