"""Time the compiled MMD kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 256,1024] [--repeat 5]

Sizes are the number of similarity entries per side (B*B for a batch of B).
"""
import argparse
import timeit

import numpy as np

from upreid.kernels import backends


def bench(fn, repeat):
    times = timeit.repeat(fn, number=1, repeat=repeat)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="256,1024,4096")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    impls = backends()
    if "cython" not in impls:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    bw = np.array([0.05, 0.1, 0.2])
    print(f"{'kernel':<16} {'n':>6} " + " ".join(f"{name + ' [ms]':>14}" for name in impls) + f" {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        a = np.tanh(rng.normal(size=n))
        b = np.tanh(rng.normal(size=n))
        cases = {
            "mmd2_grad": lambda m: m.mmd2_grad(a, b, bw, True),
            "median_abs_diff": lambda m: m.median_abs_diff(np.concatenate([a, b])),
        }
        for kernel, call in cases.items():
            t = {name: bench(lambda m=m: call(m), args.repeat) for name, m in impls.items()}
            speed = t["python"] / t["cython"] if "cython" in t else float("nan")
            print(f"{kernel:<16} {n:>6} " + " ".join(f"{t[name] * 1e3:14.2f}" for name in impls) + f" {speed:8.1f}x")


if __name__ == "__main__":
    main()
