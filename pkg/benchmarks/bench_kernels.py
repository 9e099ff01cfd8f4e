"""Compare the compiled clustering kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--sizes 100,200,400] [--repeat 3]``.
Prints one line per (kernel, n) with the best wall time of each backend.
"""

import argparse
import time

import numpy as np

from hazecast import _kernels_py as pure

try:
    from hazecast import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def best_time(fn, *args, repeat=3):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="100,200,400")
    ap.add_argument("--length", type=int, default=12, help="segment length T")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not available; only the fallback can run")
    rng = np.random.default_rng(a.seed)
    print(f"{'kernel':<20}{'n':>6}{'python [s]':>14}{'compiled [s]':>14}{'speedup':>10}")
    for n in (int(s) for s in a.sizes.split(",")):
        X = rng.random((n, a.length)) + 1e-3
        D = pure.distance_matrix(X)
        for name, args in (("distance_matrix", (X,)), ("agglomerate_merges", (D,))):
            tp = best_time(getattr(pure, name), *args, repeat=a.repeat)
            if compiled is None:
                print(f"{name:<20}{n:>6}{tp:>14.4f}{'-':>14}{'-':>10}")
                continue
            tc = best_time(getattr(compiled, name), *args, repeat=a.repeat)
            print(f"{name:<20}{n:>6}{tp:>14.4f}{tc:>14.4f}{tp / tc:>9.1f}x")
        if compiled is not None:
            same = np.array_equal(pure.agglomerate_merges(D)[:, [0, 1, 3]], compiled.agglomerate_merges(D)[:, [0, 1, 3]])
            print(f"{'merge trees equal':<20}{n:>6}{str(same):>14}")


if __name__ == "__main__":
    main()
