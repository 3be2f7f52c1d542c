"""Time the numba and numpy sampling backends on the same sample streams.

    python benchmarks/bench_kernels.py [--n 1000000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from mcode import kernels
from mcode.estimator import draw_samples
from mcode.problems import builtin_problem
from mcode.sampling import SampleOptions

CASES = [("quadratic", 0, 0.45), ("cosine", 0, 0.9), ("ode223a", 1, 0.5), ("system316f", 0, 0.5)]


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    print(f"N = {args.n}, best of {args.repeat}")
    print(f"{'problem':12s} {'t':>5s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s} {'max rel diff':>13s}")
    for name, comp, t in CASES:
        pr = builtin_problem(name)
        opts = SampleOptions(density=pr.density)
        table = pr.mechanism()
        # compile outside the timed region
        draw_samples(pr.system, table, comp, t, 1000, opts, backend="numba")
        times, values = {}, {}
        for be in ("numba", "numpy"):
            times[be], b = best_time(lambda: draw_samples(pr.system, table, comp, t, args.n, opts, backend=be),
                                     args.repeat)
            values[be] = b.values[b.ok]
        ref = values["numba"]
        diff = np.max(np.abs(values["numpy"] - ref) / np.maximum(np.abs(ref), 1e-300))
        print(f"{name:12s} {t:5.2f} {times['numba']:9.3f} {times['numpy']:9.3f} "
              f"{times['numpy'] / times['numba']:8.2f} {diff:13.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
