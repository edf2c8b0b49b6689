"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from cfbench.kernels import backends


def cases(rng):
    m, h = 40, 81
    W1, b1 = rng.normal(size=(m, h)), rng.normal(size=h)
    W2, b2 = rng.normal(size=(h, 2)), rng.normal(size=2)
    x = rng.normal(size=m)
    vals = rng.integers(0, 5, size=(2000, 10)).astype(float)
    ok = rng.random((2000, 10)) > 0.1
    X = rng.integers(0, 20, size=(600, 8)).astype(float)
    y = rng.integers(0, 3, size=600)
    return {
        "mlp_input_gradient": lambda k: k.mlp_input_gradient(W1, b1, W2, b2, x, 1),
        "rank_rows 2000x10": lambda k: k.rank_rows(vals, ok, True),
        "best_split 600x8": lambda k: k.best_split(X, y, 3),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = backends()
    if "cython" not in impls:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for label, fn in cases(rng).items():
        times = {}
        for name, k in impls.items():
            n = 200 if "gradient" in label else 5
            t = min(timeit.repeat(lambda: fn(k), number=n, repeat=args.repeat)) / n
            times[name] = t
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<22}" + "".join(f"{times[n] * 1e6:>11.1f} us" for n in impls) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
