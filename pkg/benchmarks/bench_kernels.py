"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from mcdgln import _kernels_py

try:
    from mcdgln import _kernels_c
except ImportError:
    _kernels_c = None


def cases(rng):
    E = rng.normal(size=(16, 18, 16, 16))
    W = rng.normal(size=(18, 16, 16))
    G = rng.normal(size=E.shape)
    X = rng.normal(size=(16, 200))
    t = rng.normal(0, 3, 120)
    df = np.full(120, 98.0)
    return {
        "cross_conv_forward (16x18x16x16)": lambda m: m.cross_conv_forward(E, W),
        "cross_conv_backward (16x18x16x16)": lambda m: m.cross_conv_backward(G, E, W),
        "windowed_pcc (M=16, T=200, L=30, S=10)": lambda m: m.windowed_pcc(X, 30, 10),
        "betainc (120 edges, df=98)": lambda m: m.betainc(df / 2, np.full(120, 0.5), df / (df + t * t)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("numpy", _kernels_py)] + ([("compiled", _kernels_c)] if _kernels_c else [])
    print(f"{'kernel':42s}" + "".join(f"{name:>14s}" for name, _ in backends) + "   speedup")
    for label, fn in cases(rng).items():
        times = []
        for _, mod in backends:
            n = 20
            best = min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat)) / n
            times.append(best)
        row = f"{label:42s}" + "".join(f"{t * 1e3:12.3f}ms" for t in times)
        if len(times) == 2:
            row += f"   {times[0] / times[1]:6.1f}x"
        print(row)
    if _kernels_c is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
